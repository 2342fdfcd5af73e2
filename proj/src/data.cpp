#include "fusenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fusenet {

namespace fs = std::filesystem;

std::vector<std::size_t> MultimodalDataset::widths() const {
    std::vector<std::size_t> w;
    for (const Matrix& m : train.features) w.push_back(m.cols);
    return w;
}

void MultimodalDataset::validate() const {
    const std::size_t n = n_modalities();
    for (const SplitData* s : {&train, &val, &test}) {
        if (s->features.size() != n) throw ContractError("dataset: modality count mismatch");
        for (std::size_t k = 0; k < n; ++k) {
            if (s->features[k].rows != s->labels.rows) {
                throw ContractError("dataset: sample count mismatch in modality " +
                                    modality_names[k]);
            }
            if (s->features[k].cols != train.features[k].cols) {
                throw ContractError("dataset: width mismatch across splits in modality " +
                                    modality_names[k]);
            }
        }
    }
}

namespace {

std::vector<double> random_unit_vector(std::size_t width, Rng& rng) {
    std::vector<double> v(width);
    double norm2 = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

// Pattern construction is shared between the generator and the oracle hook;
// it must consume the rng in exactly this order.
std::vector<std::vector<std::vector<double>>> build_prototypes(const SyntheticTaskSpec& spec,
                                                               Rng& rng) {
    std::vector<std::vector<std::vector<double>>> protos(2);
    switch (spec.kind) {
        case SyntheticKind::xor_complementary: {
            // bit patterns: prototype for bit 0 is -u, for bit 1 is +u
            for (std::size_t k = 0; k < 2; ++k) {
                std::vector<double> u = random_unit_vector(spec.widths[k], rng);
                std::vector<double> neg(u.size());
                for (std::size_t i = 0; i < u.size(); ++i) neg[i] = -u[i];
                protos[k] = {neg, u};
            }
            break;
        }
        case SyntheticKind::redundant: {
            for (std::size_t k = 0; k < 2; ++k) {
                for (std::size_t c = 0; c < spec.n_classes; ++c) {
                    protos[k].push_back(random_unit_vector(spec.widths[k], rng));
                }
            }
            break;
        }
        case SyntheticKind::noisy_modality: {
            for (std::size_t c = 0; c < spec.n_classes; ++c) {
                protos[0].push_back(random_unit_vector(spec.widths[0], rng));
            }
            // modality 2 carries nothing
            break;
        }
    }
    return protos;
}

void check_spec(const SyntheticTaskSpec& spec) {
    if (spec.widths.size() != 2) {
        throw ContractError("synthetic tasks are two-modality; got " +
                            std::to_string(spec.widths.size()) + " widths");
    }
    for (std::size_t w : spec.widths) {
        if (w == 0) throw ContractError("synthetic task: zero feature width");
    }
    if (spec.train_samples == 0 || spec.val_samples == 0 || spec.test_samples == 0) {
        throw ContractError("synthetic task: every split needs a positive sample count");
    }
    if (spec.noise_sd < 0.0) throw ContractError("synthetic task: noise_sd must be >= 0");
    if (spec.kind == SyntheticKind::xor_complementary && spec.n_classes != 2) {
        throw ContractError("xor_complementary task has exactly 2 classes");
    }
    if (spec.n_classes < 2) throw ContractError("synthetic task: need at least 2 classes");
}

}  // namespace

SyntheticPatterns synthetic_patterns(const SyntheticTaskSpec& spec) {
    check_spec(spec);
    Rng rng = Rng(spec.seed).child("patterns");
    return SyntheticPatterns{build_prototypes(spec, rng)};
}

MultimodalDataset gen_synthetic(const SyntheticTaskSpec& spec) {
    check_spec(spec);
    Rng master(spec.seed);
    Rng pattern_rng = master.child("patterns");
    const auto protos = build_prototypes(spec, pattern_rng);

    MultimodalDataset ds;
    ds.modality_names = {"m1", "m2"};
    ds.label_mode = LabelMode::multiclass;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        ds.class_names.push_back("c" + std::to_string(c));
    }

    const char* split_names[3] = {"train", "val", "test"};
    const std::size_t counts[3] = {spec.train_samples, spec.val_samples, spec.test_samples};
    SplitData* splits[3] = {&ds.train, &ds.val, &ds.test};

    for (int s = 0; s < 3; ++s) {
        Rng rng = master.child(split_names[s]);
        const std::size_t n = counts[s];
        SplitData& split = *splits[s];
        split.features = {Matrix(n, spec.widths[0]), Matrix(n, spec.widths[1])};
        split.labels = Matrix(n, spec.n_classes);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t label = 0;
            std::size_t latent[2] = {0, 0};
            switch (spec.kind) {
                case SyntheticKind::xor_complementary: {
                    latent[0] = rng.index(2);
                    latent[1] = rng.index(2);
                    label = latent[0] ^ latent[1];
                    break;
                }
                case SyntheticKind::redundant: {
                    label = rng.index(spec.n_classes);
                    latent[0] = latent[1] = label;
                    break;
                }
                case SyntheticKind::noisy_modality: {
                    label = rng.index(spec.n_classes);
                    latent[0] = label;
                    break;
                }
            }
            split.labels.at(i, label) = 1.0;
            for (std::size_t k = 0; k < 2; ++k) {
                double* row = split.features[k].row(i);
                const bool pure_noise =
                    spec.kind == SyntheticKind::noisy_modality && k == 1;
                for (std::size_t j = 0; j < spec.widths[k]; ++j) {
                    if (pure_noise) {
                        row[j] = rng.normal();
                    } else {
                        row[j] = protos[k][latent[k]][j] + spec.noise_sd * rng.normal();
                    }
                }
            }
        }
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// CSV / manifest ingestion
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& cell, const std::string& file, std::size_t row,
                  std::size_t col) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != cell.size() || cell.empty()) {
        throw ParseError("non-numeric cell '" + cell + "' in " + file + " at row " +
                         std::to_string(row) + ", column " + std::to_string(col));
    }
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestError("cannot open " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw IngestError("empty CSV: " + path);
    return t;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestError("cannot open manifest " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = line;
        trimmed.erase(0, trimmed.find_first_not_of(" \t"));
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                             ": expected key = value");
        }
        std::string key = trimmed.substr(0, eq);
        std::string val = trimmed.substr(eq + 1);
        auto strip = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            const auto end = s.find_last_not_of(" \t");
            s.erase(end == std::string::npos ? 0 : end + 1);
        };
        strip(key);
        strip(val);
        kv[key] = val;
    }
    return kv;
}

std::string require_key(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& path) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IngestError("manifest " + path + ": missing key '" + key + "'");
    return it->second;
}

}  // namespace

MultimodalDataset load_features(const std::string& manifest_path) {
    const auto kv = read_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();

    MultimodalDataset ds;
    const int n_modalities = std::stoi(require_key(kv, "modalities", manifest_path));
    if (n_modalities < 1) throw IngestError("manifest: need at least one modality");

    const std::string mode = require_key(kv, "labels.mode", manifest_path);
    if (mode == "multiclass") {
        ds.label_mode = LabelMode::multiclass;
    } else if (mode == "multilabel") {
        ds.label_mode = LabelMode::multilabel;
    } else {
        throw IngestError("manifest: labels.mode must be multiclass or multilabel, got '" +
                          mode + "'");
    }
    const int n_classes = std::stoi(require_key(kv, "classes", manifest_path));
    if (n_classes < 2) throw IngestError("manifest: need at least 2 classes");

    // labels first: they define sample count and split assignment
    const std::string labels_file = require_key(kv, "labels.file", manifest_path);
    const std::string labels_path = (dir / labels_file).string();
    CsvTable labels_csv = read_csv(labels_path);
    if (labels_csv.header.size() < 3 || labels_csv.header[0] != "id" ||
        labels_csv.header[1] != "split") {
        throw IngestError("labels file " + labels_path + ": header must start with id,split");
    }
    const std::size_t expected_label_cols =
        ds.label_mode == LabelMode::multiclass ? 3 : 2 + static_cast<std::size_t>(n_classes);
    if (labels_csv.header.size() != expected_label_cols) {
        throw IngestError("labels file " + labels_path + ": expected " +
                          std::to_string(expected_label_cols) + " columns, found " +
                          std::to_string(labels_csv.header.size()));
    }

    const std::size_t n_samples = labels_csv.rows.size();
    std::vector<int> split_of(n_samples);
    Matrix all_labels(n_samples, static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < n_samples; ++i) {
        const auto& row = labels_csv.rows[i];
        if (row.size() != labels_csv.header.size()) {
            throw IngestError("labels file " + labels_path + ": row " + std::to_string(i + 1) +
                              " has " + std::to_string(row.size()) + " cells");
        }
        const std::string& split = row[1];
        if (split == "train") {
            split_of[i] = 0;
        } else if (split == "val") {
            split_of[i] = 1;
        } else if (split == "test") {
            split_of[i] = 2;
        } else {
            throw IngestError("labels file " + labels_path + ": unknown split tag '" + split +
                              "' at row " + std::to_string(i + 1));
        }
        if (ds.label_mode == LabelMode::multiclass) {
            const double c = parse_cell(row[2], labels_file, i + 1, 2);
            const auto ci = static_cast<long long>(c);
            if (c != static_cast<double>(ci) || ci < 0 || ci >= n_classes) {
                throw IngestError("labels file " + labels_path + ": class index '" + row[2] +
                                  "' out of range at row " + std::to_string(i + 1));
            }
            all_labels.at(i, static_cast<std::size_t>(ci)) = 1.0;
        } else {
            for (int c = 0; c < n_classes; ++c) {
                const double v =
                    parse_cell(row[2 + static_cast<std::size_t>(c)], labels_file, i + 1,
                               2 + static_cast<std::size_t>(c));
                if (v != 0.0 && v != 1.0) {
                    throw IngestError("labels file " + labels_path +
                                      ": multilabel cells must be 0 or 1, row " +
                                      std::to_string(i + 1));
                }
                all_labels.at(i, static_cast<std::size_t>(c)) = v;
            }
        }
    }

    std::vector<Matrix> all_features;
    for (int k = 1; k <= n_modalities; ++k) {
        const std::string prefix = "modality." + std::to_string(k);
        const std::string name = require_key(kv, prefix + ".name", manifest_path);
        const std::string file = require_key(kv, prefix + ".file", manifest_path);
        const auto width =
            static_cast<std::size_t>(std::stoi(require_key(kv, prefix + ".width", manifest_path)));
        ds.modality_names.push_back(name);

        const std::string fpath = (dir / file).string();
        CsvTable csv = read_csv(fpath);
        if (csv.header.size() != width) {
            throw IngestError("feature file " + fpath + ": manifest declares width " +
                              std::to_string(width) + " but header has " +
                              std::to_string(csv.header.size()) + " columns");
        }
        if (csv.rows.size() != n_samples) {
            throw IngestError("row-count mismatch: " + fpath + " has " +
                              std::to_string(csv.rows.size()) + " rows, " + labels_file + " has " +
                              std::to_string(n_samples));
        }
        Matrix feats(n_samples, width);
        for (std::size_t i = 0; i < n_samples; ++i) {
            if (csv.rows[i].size() != width) {
                throw IngestError("feature file " + fpath + ": row " + std::to_string(i + 1) +
                                  " has " + std::to_string(csv.rows[i].size()) + " cells");
            }
            for (std::size_t j = 0; j < width; ++j) {
                feats.at(i, j) = parse_cell(csv.rows[i][j], file, i + 1, j);
            }
        }
        all_features.push_back(std::move(feats));
    }

    for (int c = 0; c < n_classes; ++c) ds.class_names.push_back("c" + std::to_string(c));

    SplitData* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (int s = 0; s < 3; ++s) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n_samples; ++i) {
            if (split_of[i] == s) idx.push_back(i);
        }
        SplitData& sp = *splits[s];
        sp.labels = Matrix(idx.size(), static_cast<std::size_t>(n_classes));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (int c = 0; c < n_classes; ++c) {
                sp.labels.at(r, static_cast<std::size_t>(c)) =
                    all_labels.at(idx[r], static_cast<std::size_t>(c));
            }
        }
        for (const Matrix& feats : all_features) {
            Matrix m(idx.size(), feats.cols);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                std::copy_n(feats.row(idx[r]), feats.cols, m.row(r));
            }
            sp.features.push_back(std::move(m));
        }
    }
    ds.validate();
    return ds;
}

void write_dataset(const MultimodalDataset& ds, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

    const SplitData* splits[3] = {&ds.train, &ds.val, &ds.test};
    const char* split_names[3] = {"train", "val", "test"};

    for (std::size_t k = 0; k < ds.n_modalities(); ++k) {
        const std::string file = ds.modality_names[k] + "_features.csv";
        std::ofstream os(fs::path(dir) / file);
        if (!os) throw IoError("cannot write " + file + " in " + dir);
        const std::size_t width = ds.train.features[k].cols;
        for (std::size_t j = 0; j < width; ++j) {
            os << ds.modality_names[k] << "_f" << j << (j + 1 < width ? "," : "\n");
        }
        for (int s = 0; s < 3; ++s) {
            const Matrix& m = splits[s]->features[k];
            for (std::size_t i = 0; i < m.rows; ++i) {
                for (std::size_t j = 0; j < width; ++j) {
                    os << fmt_double(m.at(i, j)) << (j + 1 < width ? "," : "\n");
                }
            }
        }
    }

    {
        std::ofstream os(fs::path(dir) / "labels.csv");
        if (!os) throw IoError("cannot write labels.csv in " + dir);
        os << "id,split";
        if (ds.label_mode == LabelMode::multiclass) {
            os << ",class\n";
        } else {
            for (std::size_t c = 0; c < ds.n_classes(); ++c) os << "," << ds.class_names[c];
            os << "\n";
        }
        std::size_t id = 0;
        for (int s = 0; s < 3; ++s) {
            const Matrix& labels = splits[s]->labels;
            for (std::size_t i = 0; i < labels.rows; ++i, ++id) {
                os << id << "," << split_names[s];
                if (ds.label_mode == LabelMode::multiclass) {
                    std::size_t cls = 0;
                    for (std::size_t c = 0; c < labels.cols; ++c) {
                        if (labels.at(i, c) == 1.0) cls = c;
                    }
                    os << "," << cls;
                } else {
                    for (std::size_t c = 0; c < labels.cols; ++c) {
                        os << "," << static_cast<int>(labels.at(i, c));
                    }
                }
                os << "\n";
            }
        }
    }

    {
        std::ofstream os(fs::path(dir) / "manifest.txt");
        if (!os) throw IoError("cannot write manifest.txt in " + dir);
        os << "modalities = " << ds.n_modalities() << "\n";
        for (std::size_t k = 0; k < ds.n_modalities(); ++k) {
            os << "modality." << k + 1 << ".name = " << ds.modality_names[k] << "\n";
            os << "modality." << k + 1 << ".file = " << ds.modality_names[k]
               << "_features.csv\n";
            os << "modality." << k + 1 << ".width = " << ds.train.features[k].cols << "\n";
        }
        os << "labels.file = labels.csv\n";
        os << "labels.mode = "
           << (ds.label_mode == LabelMode::multiclass ? "multiclass" : "multilabel") << "\n";
        os << "classes = " << ds.n_classes() << "\n";
    }
}

void align_features(MultimodalDataset& ds, AlignMode mode, std::size_t target_width) {
    for (std::size_t w : ds.widths()) {
        if (target_width < w) {
            throw ContractError("align target width " + std::to_string(target_width) +
                                " below modality width " + std::to_string(w));
        }
    }
    if (mode == AlignMode::linear_proj) return;  // handled inside the model
    for (SplitData* s : {&ds.train, &ds.val, &ds.test}) {
        for (Matrix& m : s->features) {
            if (m.cols == target_width) continue;
            Matrix padded(m.rows, target_width);
            for (std::size_t i = 0; i < m.rows; ++i) {
                std::copy_n(m.row(i), m.cols, padded.row(i));
            }
            m = std::move(padded);
        }
    }
}

std::vector<std::vector<std::size_t>> balanced_batch_indices(const Matrix& onehot,
                                                             std::size_t per_class, Rng& rng) {
    if (per_class == 0) throw ContractError("balanced batches: per_class must be positive");
    const std::size_t n_classes = onehot.cols;
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < onehot.rows; ++i) {
        std::size_t hits = 0, cls = 0;
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (onehot.at(i, c) != 0.0) {
                ++hits;
                cls = c;
            }
        }
        if (hits != 1) {
            throw ContractError("balanced batches need multiclass one-hot labels; row " +
                                std::to_string(i) + " has " + std::to_string(hits) +
                                " active classes");
        }
        by_class[cls].push_back(i);
    }
    std::size_t n_batches = SIZE_MAX;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (by_class[c].size() < per_class) {
            throw ConfigError("class " + std::to_string(c) + " has only " +
                              std::to_string(by_class[c].size()) + " samples; " +
                              std::to_string(per_class) + " per batch requested");
        }
        rng.shuffle(by_class[c]);
        n_batches = std::min(n_batches, by_class[c].size() / per_class);
    }
    std::vector<std::vector<std::size_t>> batches(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<std::size_t>& batch = batches[b];
        for (std::size_t c = 0; c < n_classes; ++c) {
            for (std::size_t s = 0; s < per_class; ++s) {
                batch.push_back(by_class[c][b * per_class + s]);
            }
        }
        rng.shuffle(batch);
    }
    return batches;
}

std::vector<std::vector<std::size_t>> shuffled_batch_indices(std::size_t n,
                                                             std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ContractError("batch size must be positive");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start < 2 && !batches.empty()) break;  // a 1-sample tail has no batch stats
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

Batch gather_batch(const SplitData& split, const std::vector<std::size_t>& idx) {
    Batch b;
    for (const Matrix& feats : split.features) {
        Matrix m(idx.size(), feats.cols);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(feats.row(idx[r]), feats.cols, m.row(r));
        }
        b.features.push_back(std::move(m));
    }
    b.labels = Matrix(idx.size(), split.labels.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(split.labels.row(idx[r]), split.labels.cols, b.labels.row(r));
    }
    return b;
}

}  // namespace fusenet
