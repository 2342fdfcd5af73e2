#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fusenet/matrix.hpp"

namespace fusenet {

// Row-wise argmax with deterministic tie-breaking: lowest index wins.
std::vector<int> argmax_rows(const Matrix& m);

// Mean over classes of per-class accuracy (recall). Every class in
// [0, n_classes) must appear in the truth.
double macro_accuracy(std::span<const int> pred, std::span<const int> truth, int n_classes);

// Binarizes scores at threshold (predicted positive iff score > threshold),
// pools TP/FP/FN over all sample-label pairs, returns 2TP/(2TP+FP+FN);
// 0 when the denominator is 0.
double micro_f1(const Matrix& scores, const Matrix& truth_multihot, double threshold);

struct Aggregate {
    double mean = 0.0;
    std::optional<double> std;  // sample (n-1) standard deviation; absent for n == 1
    std::size_t n = 0;
};

Aggregate aggregate_runs(std::span<const double> scores);

// Two-sample z statistic with unpooled variances:
//   z = (mean1 - mean2) / sqrt(std1^2/n1 + std2^2/n2)
double two_sample_z(double mean1, double std1, std::size_t n1, double mean2, double std2,
                    std::size_t n2);

}  // namespace fusenet
