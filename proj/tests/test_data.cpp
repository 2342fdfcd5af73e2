#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fusenet/data.hpp"

using namespace fusenet;
namespace fs = std::filesystem;

namespace {

SyntheticTaskSpec small_xor(double noise) {
    SyntheticTaskSpec spec;
    spec.kind = SyntheticKind::xor_complementary;
    spec.train_samples = 300;
    spec.val_samples = 100;
    spec.test_samples = 200;
    spec.widths = {6, 6};
    spec.noise_sd = noise;
    spec.n_classes = 2;
    spec.seed = 99;
    return spec;
}

std::size_t label_of(const Matrix& onehot, std::size_t row) {
    for (std::size_t c = 0; c < onehot.cols; ++c) {
        if (onehot.at(row, c) == 1.0) return c;
    }
    return SIZE_MAX;
}

// nearest prototype in Euclidean distance; linear in x for fixed prototypes
std::size_t nearest(const std::vector<std::vector<double>>& protos, const double* x,
                    std::size_t width) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < protos.size(); ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double delta = x[j] - protos[c][j];
            d += delta * delta;
        }
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("xor task at noise 0 obeys the truth table") {
    const SyntheticTaskSpec spec = small_xor(0.0);
    const MultimodalDataset ds = gen_synthetic(spec);
    const SyntheticPatterns pat = synthetic_patterns(spec);
    for (const SplitData* split : {&ds.train, &ds.val, &ds.test}) {
        for (std::size_t i = 0; i < split->samples(); ++i) {
            const std::size_t a = nearest(pat.prototypes[0], split->features[0].row(i), 6);
            const std::size_t b = nearest(pat.prototypes[1], split->features[1].row(i), 6);
            CHECK(label_of(split->labels, i) == (a ^ b));
        }
    }
}

TEST_CASE("redundant task at noise 0 is solved exactly by a per-modality linear probe") {
    SyntheticTaskSpec spec;
    spec.kind = SyntheticKind::redundant;
    spec.n_classes = 4;
    spec.widths = {5, 7};
    spec.noise_sd = 0.0;
    spec.train_samples = 200;
    spec.val_samples = 50;
    spec.test_samples = 50;
    spec.seed = 7;
    const MultimodalDataset ds = gen_synthetic(spec);
    const SyntheticPatterns pat = synthetic_patterns(spec);
    for (std::size_t k = 0; k < 2; ++k) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < ds.test.samples(); ++i) {
            const std::size_t c =
                nearest(pat.prototypes[k], ds.test.features[k].row(i), spec.widths[k]);
            correct += c == label_of(ds.test.labels, i) ? 1 : 0;
        }
        CHECK(correct == ds.test.samples());
    }
}

TEST_CASE("xor multimodal Bayes rule exceeds 0.99 accuracy at noise 0.1") {
    const SyntheticTaskSpec spec = small_xor(0.1);
    const MultimodalDataset ds = gen_synthetic(spec);
    const SyntheticPatterns pat = synthetic_patterns(spec);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.test.samples(); ++i) {
        const std::size_t a = nearest(pat.prototypes[0], ds.test.features[0].row(i), 6);
        const std::size_t b = nearest(pat.prototypes[1], ds.test.features[1].row(i), 6);
        correct += (a ^ b) == label_of(ds.test.labels, i) ? 1 : 0;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.test.samples()) > 0.99);
}

TEST_CASE("noisy_modality: modality 2 carries no prototypes") {
    SyntheticTaskSpec spec;
    spec.kind = SyntheticKind::noisy_modality;
    spec.n_classes = 3;
    spec.widths = {4, 4};
    spec.train_samples = 50;
    spec.val_samples = 20;
    spec.test_samples = 20;
    const MultimodalDataset ds = gen_synthetic(spec);
    CHECK(ds.train.features[1].rows == 50);
    const SyntheticPatterns pat = synthetic_patterns(spec);
    CHECK(pat.prototypes[1].empty());
    CHECK(pat.prototypes[0].size() == 3);
}

TEST_CASE("identical spec and seed give a bit-identical dataset") {
    const SyntheticTaskSpec spec = small_xor(0.25);
    const MultimodalDataset a = gen_synthetic(spec);
    const MultimodalDataset b = gen_synthetic(spec);
    CHECK(a.train.features[0].a == b.train.features[0].a);
    CHECK(a.test.features[1].a == b.test.features[1].a);
    CHECK(a.val.labels.a == b.val.labels.a);
}

TEST_CASE("synthetic spec validation") {
    SyntheticTaskSpec spec = small_xor(0.1);
    spec.n_classes = 3;
    CHECK_THROWS_AS(gen_synthetic(spec), ContractError);
    SyntheticTaskSpec neg = small_xor(-0.1);
    CHECK_THROWS_AS(gen_synthetic(neg), ContractError);
    SyntheticTaskSpec empty = small_xor(0.1);
    empty.train_samples = 0;
    CHECK_THROWS_AS(gen_synthetic(empty), ContractError);
}

TEST_CASE("write-then-load round trip reproduces the dataset") {
    const fs::path dir = fs::temp_directory_path() / "fusenet_data_roundtrip";
    fs::remove_all(dir);
    const SyntheticTaskSpec spec = small_xor(0.3);
    const MultimodalDataset ds = gen_synthetic(spec);
    write_dataset(ds, dir.string());
    const MultimodalDataset back = load_features((dir / "manifest.txt").string());

    REQUIRE(back.n_modalities() == 2);
    REQUIRE(back.train.samples() == ds.train.samples());
    REQUIRE(back.test.samples() == ds.test.samples());
    CHECK(back.label_mode == LabelMode::multiclass);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < ds.train.features[k].size(); ++i) {
            CHECK(std::abs(back.train.features[k].a[i] - ds.train.features[k].a[i]) < 1e-12);
        }
    }
    CHECK(back.train.labels.a == ds.train.labels.a);
    fs::remove_all(dir);
}

TEST_CASE("ingestion errors name the offending file, row or cell") {
    const fs::path dir = fs::temp_directory_path() / "fusenet_data_errors";
    fs::remove_all(dir);
    const SyntheticTaskSpec spec = small_xor(0.1);
    write_dataset(gen_synthetic(spec), dir.string());

    SUBCASE("row-count mismatch") {
        // drop the last line of modality 1
        const fs::path f = dir / "m1_features.csv";
        std::ifstream in(f);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        in.close();
        std::ofstream out(f, std::ios::trunc);
        for (std::size_t i = 0; i + 1 < lines.size(); ++i) out << lines[i] << "\n";
        out.close();
        CHECK_THROWS_AS(load_features((dir / "manifest.txt").string()), IngestError);
    }

    SUBCASE("non-numeric cell") {
        const fs::path f = dir / "m2_features.csv";
        std::ifstream in(f);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        in.close();
        lines[3] = "oops," + lines[3].substr(lines[3].find(',') + 1);
        std::ofstream out(f, std::ios::trunc);
        for (const std::string& l : lines) out << l << "\n";
        out.close();
        CHECK_THROWS_AS(load_features((dir / "manifest.txt").string()), ParseError);
    }

    SUBCASE("missing manifest key") {
        std::ofstream out(dir / "manifest.txt", std::ios::trunc);
        out << "modalities = 1\n";
        out.close();
        CHECK_THROWS_AS(load_features((dir / "manifest.txt").string()), IngestError);
    }

    fs::remove_all(dir);
}

TEST_CASE("zero-pad alignment appends tail zeros and conserves column sums") {
    SyntheticTaskSpec spec = small_xor(0.2);
    spec.widths = {2, 4};
    MultimodalDataset ds = gen_synthetic(spec);
    std::vector<double> col_sums(2, 0.0);
    for (std::size_t i = 0; i < ds.train.samples(); ++i) {
        for (std::size_t j = 0; j < 2; ++j) col_sums[j] += ds.train.features[0].at(i, j);
    }
    align_features(ds, AlignMode::zero_pad, 4);
    CHECK(ds.train.features[0].cols == 4);
    CHECK(ds.train.features[1].cols == 4);
    for (std::size_t j = 0; j < 2; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < ds.train.samples(); ++i) {
            sum += ds.train.features[0].at(i, j);
        }
        CHECK(sum == col_sums[j]);
    }
    for (std::size_t i = 0; i < ds.train.samples(); ++i) {
        CHECK(ds.train.features[0].at(i, 2) == 0.0);
        CHECK(ds.train.features[0].at(i, 3) == 0.0);
    }
}

TEST_CASE("pad of a literal row and the no-op case") {
    SyntheticTaskSpec spec = small_xor(0.0);
    spec.widths = {2, 2};
    spec.train_samples = 1;
    spec.val_samples = 1;
    spec.test_samples = 1;
    MultimodalDataset ds = gen_synthetic(spec);
    ds.train.features[0] = Matrix(1, 2, {1, 2});
    align_features(ds, AlignMode::zero_pad, 4);
    CHECK(ds.train.features[0].a == std::vector<double>{1, 2, 0, 0});

    MultimodalDataset same = gen_synthetic(spec);
    const auto before = same.train.features[0].a;
    align_features(same, AlignMode::zero_pad, 2);
    CHECK(same.train.features[0].a == before);

    CHECK_THROWS_AS(align_features(same, AlignMode::zero_pad, 1), ContractError);
}

TEST_CASE("linear_proj alignment leaves the data untouched") {
    SyntheticTaskSpec spec = small_xor(0.2);
    spec.widths = {2, 4};
    MultimodalDataset ds = gen_synthetic(spec);
    const auto before = ds.train.features[0].a;
    align_features(ds, AlignMode::linear_proj, 4);
    CHECK(ds.train.features[0].cols == 2);
    CHECK(ds.train.features[0].a == before);
}

TEST_CASE("balanced batches: 21 classes at 2 per class gives batches of 42") {
    const std::size_t classes = 21, per_class = 2, reps = 6;
    Matrix onehot(classes * reps, classes);
    for (std::size_t i = 0; i < onehot.rows; ++i) onehot.at(i, i % classes) = 1.0;
    Rng rng(5);
    const auto batches = balanced_batch_indices(onehot, per_class, rng);
    CHECK(batches.size() == reps / per_class);
    std::set<std::size_t> seen;
    for (const auto& batch : batches) {
        CHECK(batch.size() == 42);
        std::vector<std::size_t> hist(classes, 0);
        for (std::size_t idx : batch) {
            ++hist[idx % classes];  // construction puts class i%21 at row i
            CHECK(seen.insert(idx).second);  // at most once per epoch
        }
        for (std::size_t c = 0; c < classes; ++c) CHECK(hist[c] == per_class);
    }
}

TEST_CASE("balanced batches: 2 classes at 1 per class gives pairs") {
    Matrix onehot(10, 2);
    for (std::size_t i = 0; i < 10; ++i) onehot.at(i, i % 2) = 1.0;
    Rng rng(6);
    const auto batches = balanced_batch_indices(onehot, 1, rng);
    CHECK(batches.size() == 5);
    for (const auto& b : batches) CHECK(b.size() == 2);
}

TEST_CASE("balanced batches reject a class with too few samples, naming it") {
    Matrix onehot(5, 2);
    onehot.at(0, 0) = 1.0;  // class 0: one sample
    for (std::size_t i = 1; i < 5; ++i) onehot.at(i, 1) = 1.0;
    Rng rng(7);
    CHECK_THROWS_WITH_AS(balanced_batch_indices(onehot, 2, rng),
                         "class 0 has only 1 samples; 2 per batch requested", ConfigError);
}

TEST_CASE("balanced batches reject multilabel rows") {
    Matrix labels(3, 2);
    labels.at(0, 0) = labels.at(0, 1) = 1.0;
    Rng rng(8);
    CHECK_THROWS_AS(balanced_batch_indices(labels, 1, rng), ContractError);
}

TEST_CASE("shuffled batches cover everything and drop 1-sample tails") {
    Rng rng(9);
    const auto batches = shuffled_batch_indices(10, 4, rng);
    REQUIRE(batches.size() == 3);
    CHECK(batches[2].size() == 2);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
        for (std::size_t i : b) seen.insert(i);
    }
    CHECK(seen.size() == 10);

    Rng rng2(10);
    const auto odd = shuffled_batch_indices(9, 4, rng2);  // 4 + 4 + dropped 1
    CHECK(odd.size() == 2);
}

TEST_CASE("gather_batch pulls aligned rows across modalities and labels") {
    SyntheticTaskSpec spec = small_xor(0.1);
    const MultimodalDataset ds = gen_synthetic(spec);
    const std::vector<std::size_t> idx = {4, 0, 17};
    const Batch b = gather_batch(ds.train, idx);
    CHECK(b.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(b.features[0].at(r, j) == ds.train.features[0].at(idx[r], j));
            CHECK(b.features[1].at(r, j) == ds.train.features[1].at(idx[r], j));
        }
        CHECK(label_of(b.labels, r) == label_of(ds.train.labels, idx[r]));
    }
}
