#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusenet/matrix.hpp"
#include "fusenet/rng.hpp"

namespace fusenet {

enum class LabelMode { multiclass, multilabel };

// One split: per-modality feature matrices with aligned row order, plus
// one-hot (multiclass) or multi-hot (multilabel) labels.
struct SplitData {
    std::vector<Matrix> features;
    Matrix labels;

    std::size_t samples() const { return labels.rows; }
};

struct MultimodalDataset {
    std::vector<std::string> modality_names;
    std::vector<std::string> class_names;
    LabelMode label_mode = LabelMode::multiclass;
    SplitData train, val, test;

    std::size_t n_modalities() const { return modality_names.size(); }
    std::size_t n_classes() const { return train.labels.cols; }
    std::vector<std::size_t> widths() const;
    void validate() const;  // consistent counts/widths across splits and modalities
};

enum class SyntheticKind { xor_complementary, redundant, noisy_modality };

// Two-modality synthetic tasks with known Bayes-optimal accuracies:
//   xor_complementary: modality k encodes latent bit (a, b); label = a xor b.
//     Either modality alone is uninformative (Bayes 0.5); together Bayes 1.0
//     at noise 0.
//   redundant: both modalities encode the same latent class.
//   noisy_modality: modality 1 encodes the class, modality 2 is unit
//     Gaussian noise carrying nothing.
struct SyntheticTaskSpec {
    SyntheticKind kind = SyntheticKind::xor_complementary;
    std::size_t train_samples = 2000;
    std::size_t val_samples = 500;
    std::size_t test_samples = 500;
    std::vector<std::size_t> widths = {16, 16};
    double noise_sd = 0.1;
    std::size_t n_classes = 2;  // forced to 2 for xor_complementary
    std::uint64_t seed = 12345;
};

MultimodalDataset gen_synthetic(const SyntheticTaskSpec& spec);

// The class/sign patterns the generator embeds, exposed so tests can run
// Bayes-rule oracles against the generative model.
struct SyntheticPatterns {
    // prototypes[k][c] is the noise-free feature vector of modality k for
    // latent value c (bit for xor, class otherwise; empty for pure noise).
    std::vector<std::vector<std::vector<double>>> prototypes;
};
SyntheticPatterns synthetic_patterns(const SyntheticTaskSpec& spec);

// Feature-file ingestion driven by a key-value manifest. Feature CSVs carry
// a header row and one sample per row; the labels CSV carries id and split
// columns plus a class-index column (multiclass) or one 0/1 column per class
// (multilabel).
MultimodalDataset load_features(const std::string& manifest_path);

// Writes feature CSVs, labels CSV, and manifest into dir (created if needed).
void write_dataset(const MultimodalDataset& ds, const std::string& dir);

enum class AlignMode { zero_pad, linear_proj };

// zero_pad appends zero columns to every modality narrower than target_width.
// linear_proj leaves the data unchanged; the model installs trainable
// projections instead. target_width below an existing width is an error.
void align_features(MultimodalDataset& ds, AlignMode mode, std::size_t target_width);

struct Batch {
    std::vector<Matrix> features;
    Matrix labels;

    std::size_t size() const { return labels.rows; }
};

// Index sets for one epoch of class-balanced batches: every batch holds
// exactly per_class samples of each class, order shuffled; a sample appears
// at most once per epoch. Multiclass one-hot labels only.
std::vector<std::vector<std::size_t>> balanced_batch_indices(const Matrix& onehot,
                                                             std::size_t per_class, Rng& rng);

// Uniformly shuffled batches of batch_size (final partial batch included
// when it has at least 2 samples).
std::vector<std::vector<std::size_t>> shuffled_batch_indices(std::size_t n,
                                                             std::size_t batch_size, Rng& rng);

Batch gather_batch(const SplitData& split, const std::vector<std::size_t>& idx);

}  // namespace fusenet
