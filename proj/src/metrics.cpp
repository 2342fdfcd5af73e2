#include "fusenet/metrics.hpp"

#include <cmath>
#include <string>

#include "fusenet/error.hpp"

namespace fusenet {

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        int best = 0;
        for (std::size_t j = 1; j < m.cols; ++j) {
            if (m.at(i, j) > m.at(i, best)) best = static_cast<int>(j);
        }
        out[i] = best;
    }
    return out;
}

double macro_accuracy(std::span<const int> pred, std::span<const int> truth, int n_classes) {
    if (pred.size() != truth.size()) {
        throw ContractError("macro_accuracy: prediction/truth length mismatch");
    }
    if (n_classes < 1) throw ContractError("macro_accuracy: n_classes must be positive");
    std::vector<std::size_t> total(static_cast<std::size_t>(n_classes), 0);
    std::vector<std::size_t> correct(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes || pred[i] < 0 || pred[i] >= n_classes) {
            throw EvalError("macro_accuracy: class index out of range at sample " +
                            std::to_string(i));
        }
        const auto t = static_cast<std::size_t>(truth[i]);
        ++total[t];
        if (pred[i] == truth[i]) ++correct[t];
    }
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        if (total[cc] == 0) {
            throw EvalError("macro_accuracy: class " + std::to_string(c) +
                            " absent from the truth labels");
        }
        sum += static_cast<double>(correct[cc]) / static_cast<double>(total[cc]);
    }
    return sum / static_cast<double>(n_classes);
}

double micro_f1(const Matrix& scores, const Matrix& truth_multihot, double threshold) {
    require_same_shape(scores, truth_multihot, "micro_f1");
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ContractError("micro_f1: threshold must be in (0,1)");
    }
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool p = scores.a[i] > threshold;
        const bool t = truth_multihot.a[i] != 0.0;
        if (p && t) {
            ++tp;
        } else if (p && !t) {
            ++fp;
        } else if (!p && t) {
            ++fn;
        }
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

Aggregate aggregate_runs(std::span<const double> scores) {
    if (scores.empty()) throw ContractError("aggregate_runs: no scores");
    for (double s : scores) {
        if (!std::isfinite(s)) throw ContractError("aggregate_runs: non-finite score");
    }
    Aggregate agg;
    agg.n = scores.size();
    double sum = 0.0;
    for (double s : scores) sum += s;
    agg.mean = sum / static_cast<double>(agg.n);
    if (agg.n >= 2) {
        double ss = 0.0;
        for (double s : scores) {
            const double d = s - agg.mean;
            ss += d * d;
        }
        agg.std = std::sqrt(ss / static_cast<double>(agg.n - 1));
    }
    return agg;
}

double two_sample_z(double mean1, double std1, std::size_t n1, double mean2, double std2,
                    std::size_t n2) {
    if (n1 < 2 || n2 < 2) throw ContractError("two_sample_z: need n >= 2 per side");
    if (std1 < 0.0 || std2 < 0.0) throw ContractError("two_sample_z: negative std");
    if (std1 == 0.0 && std2 == 0.0) {
        throw EvalError("two_sample_z: both standard deviations are zero (degenerate comparison)");
    }
    const double se = std::sqrt(std1 * std1 / static_cast<double>(n1) +
                                std2 * std2 / static_cast<double>(n2));
    return (mean1 - mean2) / se;
}

}  // namespace fusenet
