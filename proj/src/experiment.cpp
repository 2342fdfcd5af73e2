#include "fusenet/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "fusenet/kernels.hpp"

namespace fusenet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

class ConfigReader {
  public:
    ConfigReader(const std::string& text, std::string origin) : origin_(std::move(origin)) {
        std::istringstream is(text);
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[') {
                if (t.back() != ']') {
                    throw ConfigError(origin_ + " line " + std::to_string(lineno) +
                                      ": malformed section header '" + t + "'");
                }
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin_ + " line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + t + "'");
            }
            const std::string key = section + "." + trim(t.substr(0, eq));
            values_[key] = trim(t.substr(eq + 1));
        }
    }

    std::string get_str(const std::string& key, const std::string& def) {
        seen_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    bool get_bool(const std::string& key, bool def) {
        const std::string s = get_str(key, def ? "true" : "false");
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
    }

    double get_double(const std::string& key, double def, double lo, double hi,
                      bool lo_open = false, bool hi_open = false) {
        const std::string s = get_str(key, fmt_double(def));
        double v = 0.0;
        std::size_t pos = 0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != s.size() || s.empty()) {
            throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
        }
        const bool below = lo_open ? v <= lo : v < lo;
        const bool above = hi_open ? v >= hi : v > hi;
        if (below || above) {
            throw ConfigError("key '" + key + "': value " + s + " outside " +
                              (lo_open ? "(" : "[") + fmt_double(lo) + ", " + fmt_double(hi) +
                              (hi_open ? ")" : "]"));
        }
        return v;
    }

    long long get_int(const std::string& key, long long def, long long lo, long long hi) {
        const std::string s = get_str(key, std::to_string(def));
        long long v = 0;
        std::size_t pos = 0;
        try {
            v = std::stoll(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != s.size() || s.empty()) {
            throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
        }
        if (v < lo || v > hi) {
            throw ConfigError("key '" + key + "': value " + s + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
        return v;
    }

    std::vector<std::string> get_list(const std::string& key, const std::string& def) {
        return split_list(get_str(key, def));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void reject_unknown() const {
        for (const auto& [key, value] : values_) {
            if (seen_.count(key) == 0) {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    }

  private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> seen_;
};

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_u64(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ConfigReader r(text, origin);
    ExperimentConfig cfg;

    auto& d = cfg.dataset;
    d.kind = r.get_str("dataset.kind", d.kind);
    if (d.kind != "synthetic" && d.kind != "files") {
        throw ConfigError("key 'dataset.kind': expected synthetic|files, got '" + d.kind + "'");
    }
    d.task = r.get_str("dataset.task", d.task);
    if (d.task != "xor" && d.task != "redundant" && d.task != "noisy") {
        throw ConfigError("key 'dataset.task': expected xor|redundant|noisy, got '" + d.task +
                          "'");
    }
    d.train_samples = static_cast<std::size_t>(r.get_int("dataset.train_samples",
                                                         static_cast<long long>(d.train_samples),
                                                         1, 1'000'000'000));
    d.val_samples = static_cast<std::size_t>(
        r.get_int("dataset.val_samples", static_cast<long long>(d.val_samples), 1,
                  1'000'000'000));
    d.test_samples = static_cast<std::size_t>(
        r.get_int("dataset.test_samples", static_cast<long long>(d.test_samples), 1,
                  1'000'000'000));
    {
        auto parts = r.get_list("dataset.widths", join_sizes(d.widths));
        d.widths.clear();
        for (const std::string& p : parts) {
            if (p.empty() || p.find_first_not_of("0123456789") != std::string::npos || p == "0") {
                throw ConfigError("key 'dataset.widths': expected positive integers, got '" + p +
                                  "'");
            }
            d.widths.push_back(std::stoul(p));
        }
        if (d.widths.empty()) throw ConfigError("key 'dataset.widths': empty list");
    }
    d.noise_sd = r.get_double("dataset.noise_sd", d.noise_sd, 0.0, 1e6);
    d.classes = static_cast<std::size_t>(
        r.get_int("dataset.classes", static_cast<long long>(d.classes), 2, 10'000));
    d.seed = static_cast<std::uint64_t>(
        r.get_int("dataset.seed", static_cast<long long>(d.seed), 0, INT64_MAX));
    d.manifest = r.get_str("dataset.manifest", d.manifest);
    if (d.kind == "files" && d.manifest.empty()) {
        throw ConfigError("missing required key 'dataset.manifest' (dataset.kind = files)");
    }

    auto& m = cfg.model;
    {
        auto parts = r.get_list("model.hidden", join_sizes(m.hidden));
        m.hidden.clear();
        for (const std::string& p : parts) {
            if (p.empty()) continue;  // "hidden =" means no hidden layers
            if (p.find_first_not_of("0123456789") != std::string::npos || p == "0") {
                throw ConfigError("key 'model.hidden': expected positive integers, got '" + p +
                                  "'");
            }
            m.hidden.push_back(std::stoul(p));
        }
    }
    m.loss = r.get_str("model.loss", m.loss);
    if (m.loss != "auto" && m.loss != "softmax_ce" && m.loss != "weighted_bce") {
        throw ConfigError("key 'model.loss': expected auto|softmax_ce|weighted_bce, got '" +
                          m.loss + "'");
    }
    m.pos_weight = r.get_double("model.pos_weight", m.pos_weight, 0.0, 1e6, true);
    m.alignment = r.get_str("model.alignment", m.alignment);
    if (m.alignment != "zero_pad" && m.alignment != "linear_proj") {
        throw ConfigError("key 'model.alignment': expected zero_pad|linear_proj, got '" +
                          m.alignment + "'");
    }
    m.batchnorm = r.get_bool("model.batchnorm", m.batchnorm);
    m.threshold = r.get_double("model.threshold", m.threshold, 0.0, 1.0, true, true);

    auto& t = cfg.training;
    t.lr = r.get_double("training.lr", t.lr, 0.0, 1e308, true);
    t.lr_decay = r.get_double("training.lr_decay", t.lr_decay, 0.0, 1.0, true);
    t.epochs = static_cast<int>(r.get_int("training.epochs", t.epochs, 1, 1'000'000));
    t.patience = static_cast<int>(r.get_int("training.patience", t.patience, 1, 1'000'000));
    t.dropout = r.get_double("training.dropout", t.dropout, 0.0, 1.0, false, true);
    t.moddrop_prob = r.get_double("training.moddrop_prob", t.moddrop_prob, 0.0, 1.0);
    t.batch_policy = r.get_str("training.batch_policy", t.batch_policy);
    if (t.batch_policy != "auto" && t.batch_policy != "balanced" &&
        t.batch_policy != "shuffle") {
        throw ConfigError("key 'training.batch_policy': expected auto|balanced|shuffle, got '" +
                          t.batch_policy + "'");
    }
    t.per_class = static_cast<std::size_t>(
        r.get_int("training.per_class", static_cast<long long>(t.per_class), 1, 1'000'000));
    t.batch_size = static_cast<std::size_t>(
        r.get_int("training.batch_size", static_cast<long long>(t.batch_size), 2, 1'000'000));
    t.adam_beta1 = r.get_double("training.adam_beta1", t.adam_beta1, 0.0, 1.0, true, true);
    t.adam_beta2 = r.get_double("training.adam_beta2", t.adam_beta2, 0.0, 1.0, true, true);
    t.adam_epsilon = r.get_double("training.adam_epsilon", t.adam_epsilon, 0.0, 1.0, true);
    t.bn_momentum = r.get_double("training.bn_momentum", t.bn_momentum, 0.0, 1.0, true, true);
    t.bn_epsilon = r.get_double("training.bn_epsilon", t.bn_epsilon, 0.0, 1.0, true);

    auto& run = cfg.run;
    run.methods = r.get_list("run.methods", join_strings(run.methods));
    if (run.methods.empty() || (run.methods.size() == 1 && run.methods[0].empty())) {
        throw ConfigError("key 'run.methods': empty methods list");
    }
    {
        auto parts = r.get_list("run.seeds", join_u64(run.seeds));
        run.seeds.clear();
        for (const std::string& p : parts) {
            if (p.empty() || p.find_first_not_of("0123456789") != std::string::npos) {
                throw ConfigError("key 'run.seeds': expected non-negative integers, got '" + p +
                                  "'");
            }
            run.seeds.push_back(std::stoull(p));
        }
        if (run.seeds.empty()) throw ConfigError("key 'run.seeds': empty list");
        auto sorted = run.seeds;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConfigError("key 'run.seeds': seeds must be distinct");
        }
    }
    run.out_dir = r.get_str("run.out_dir", run.out_dir);
    run.workers = static_cast<std::size_t>(
        r.get_int("run.workers", static_cast<long long>(run.workers), 1, 4096));

    r.reject_unknown();

    for (const std::string& method : run.methods) {
        // modality count known only for synthetic datasets here; files are
        // checked again at run time
        const std::size_t n_mods =
            cfg.dataset.kind == "synthetic" ? cfg.dataset.widths.size() : SIZE_MAX;
        if (n_mods != SIZE_MAX && !is_valid_method(method, n_mods)) {
            throw ConfigError("key 'run.methods': invalid method '" + method + "' for " +
                              std::to_string(n_mods) + " modalities");
        }
    }
    if (cfg.dataset.kind == "synthetic" && cfg.dataset.task == "xor" &&
        cfg.dataset.classes != 2) {
        throw ConfigError("key 'dataset.classes': the xor task has exactly 2 classes");
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string config_to_string(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[dataset]\n";
    os << "kind = " << c.dataset.kind << "\n";
    os << "task = " << c.dataset.task << "\n";
    os << "train_samples = " << c.dataset.train_samples << "\n";
    os << "val_samples = " << c.dataset.val_samples << "\n";
    os << "test_samples = " << c.dataset.test_samples << "\n";
    os << "widths = " << join_sizes(c.dataset.widths) << "\n";
    os << "noise_sd = " << fmt_double(c.dataset.noise_sd) << "\n";
    os << "classes = " << c.dataset.classes << "\n";
    os << "seed = " << c.dataset.seed << "\n";
    if (!c.dataset.manifest.empty()) os << "manifest = " << c.dataset.manifest << "\n";
    os << "\n[model]\n";
    os << "hidden = " << join_sizes(c.model.hidden) << "\n";
    os << "loss = " << c.model.loss << "\n";
    os << "pos_weight = " << fmt_double(c.model.pos_weight) << "\n";
    os << "alignment = " << c.model.alignment << "\n";
    os << "batchnorm = " << (c.model.batchnorm ? "true" : "false") << "\n";
    os << "threshold = " << fmt_double(c.model.threshold) << "\n";
    os << "\n[training]\n";
    os << "lr = " << fmt_double(c.training.lr) << "\n";
    os << "lr_decay = " << fmt_double(c.training.lr_decay) << "\n";
    os << "epochs = " << c.training.epochs << "\n";
    os << "patience = " << c.training.patience << "\n";
    os << "dropout = " << fmt_double(c.training.dropout) << "\n";
    os << "moddrop_prob = " << fmt_double(c.training.moddrop_prob) << "\n";
    os << "batch_policy = " << c.training.batch_policy << "\n";
    os << "per_class = " << c.training.per_class << "\n";
    os << "batch_size = " << c.training.batch_size << "\n";
    os << "adam_beta1 = " << fmt_double(c.training.adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt_double(c.training.adam_beta2) << "\n";
    os << "adam_epsilon = " << fmt_double(c.training.adam_epsilon) << "\n";
    os << "bn_momentum = " << fmt_double(c.training.bn_momentum) << "\n";
    os << "bn_epsilon = " << fmt_double(c.training.bn_epsilon) << "\n";
    os << "\n[run]\n";
    os << "methods = " << join_strings(c.run.methods) << "\n";
    os << "seeds = " << join_u64(c.run.seeds) << "\n";
    os << "out_dir = " << c.run.out_dir << "\n";
    os << "workers = " << c.run.workers << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// dataset / model assembly
// ---------------------------------------------------------------------------

MultimodalDataset build_dataset(const ExperimentConfig& cfg) {
    MultimodalDataset ds;
    if (cfg.dataset.kind == "synthetic") {
        SyntheticTaskSpec spec;
        if (cfg.dataset.task == "xor") {
            spec.kind = SyntheticKind::xor_complementary;
            spec.n_classes = 2;
        } else if (cfg.dataset.task == "redundant") {
            spec.kind = SyntheticKind::redundant;
            spec.n_classes = cfg.dataset.classes;
        } else {
            spec.kind = SyntheticKind::noisy_modality;
            spec.n_classes = cfg.dataset.classes;
        }
        spec.train_samples = cfg.dataset.train_samples;
        spec.val_samples = cfg.dataset.val_samples;
        spec.test_samples = cfg.dataset.test_samples;
        spec.widths = cfg.dataset.widths;
        spec.noise_sd = cfg.dataset.noise_sd;
        spec.seed = cfg.dataset.seed;
        ds = gen_synthetic(spec);
    } else {
        ds = load_features(cfg.dataset.manifest);
    }
    if (cfg.model.alignment == "zero_pad") {
        const auto widths = ds.widths();
        const std::size_t target = *std::max_element(widths.begin(), widths.end());
        align_features(ds, AlignMode::zero_pad, target);
    }
    return ds;
}

ModelSpec build_model_spec(const ExperimentConfig& cfg, const MultimodalDataset& ds) {
    ModelSpec spec;
    spec.in_widths = ds.widths();
    spec.hidden = cfg.model.hidden;
    spec.n_classes = ds.n_classes();
    spec.batchnorm = cfg.model.batchnorm;
    spec.dropout = cfg.training.dropout;
    spec.bn_momentum = cfg.training.bn_momentum;
    spec.bn_epsilon = cfg.training.bn_epsilon;
    if (cfg.model.loss == "softmax_ce") {
        if (ds.label_mode == LabelMode::multilabel) {
            throw ConfigError("key 'model.loss': softmax_ce needs multiclass labels");
        }
        spec.loss = LossKind::softmax_ce;
    } else if (cfg.model.loss == "weighted_bce") {
        spec.loss = LossKind::weighted_bce;
    } else {
        spec.loss = ds.label_mode == LabelMode::multiclass ? LossKind::softmax_ce
                                                           : LossKind::weighted_bce;
    }
    spec.pos_weight = cfg.model.pos_weight;
    spec.alignment =
        cfg.model.alignment == "zero_pad" ? AlignMode::zero_pad : AlignMode::linear_proj;
    return spec;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

double evaluate_split(Model& model, const SplitData& split, LabelMode mode, double threshold) {
    Graph g;
    Batch whole;
    whole.features = split.features;
    whole.labels = split.labels;
    Rng unused(0);
    ForwardOut out = model.forward(g, whole, Mode::eval, unused);
    const Matrix& logits = g.value(out.prediction);
    if (mode == LabelMode::multiclass) {
        const std::vector<int> pred = argmax_rows(logits);
        const std::vector<int> truth = argmax_rows(split.labels);
        return macro_accuracy(pred, truth, static_cast<int>(split.labels.cols));
    }
    Matrix scores(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        scores.a[i] = 1.0 / (1.0 + std::exp(-logits.a[i]));
    }
    return micro_f1(scores, split.labels, threshold);
}

namespace {

bool use_balanced_batches(const ExperimentConfig& cfg, const MultimodalDataset& ds) {
    if (cfg.training.batch_policy == "balanced") {
        if (ds.label_mode == LabelMode::multilabel) {
            throw ConfigError("key 'training.batch_policy': balanced batches need multiclass "
                              "labels");
        }
        return true;
    }
    if (cfg.training.batch_policy == "shuffle") return false;
    return ds.label_mode == LabelMode::multiclass;
}

}  // namespace

RunResult train_one_run(const ExperimentConfig& cfg, const MultimodalDataset& ds,
                        const std::string& method, std::uint64_t seed, const TrainHooks& hooks) {
    RunResult result;
    result.method = method;
    result.seed = seed;

    const std::string arch = arch_stream_name(method);
    Rng base(seed);
    Rng init_rng = base.child(arch + ":init");
    Rng dropout_rng = base.child(arch + ":dropout");
    // batch order must not depend on the method: comparisons differ only by
    // architecture
    Rng batch_rng = base.child("batches");
    Rng moddrop_rng = base.child("moddrop");

    const ModelSpec spec = build_model_spec(cfg, ds);
    std::unique_ptr<Model> model = make_model(method, spec, init_rng);
    const bool is_moddrop = method == "moddrop";
    const bool balanced = use_balanced_batches(cfg, ds);

    std::vector<Param*> params = model->params();
    AdamState adam(params,
                   {cfg.training.adam_beta1, cfg.training.adam_beta2, cfg.training.adam_epsilon});
    EarlyStopper stopper(cfg.training.patience);

    std::vector<NamedTensor> state = model->named_state();
    std::vector<std::vector<double>> best_snapshot = snapshot_state(state);

    try {
        for (int epoch = 0; epoch < cfg.training.epochs; ++epoch) {
            const double lr = lr_schedule(cfg.training.lr, epoch, cfg.training.lr_decay);
            const auto batches =
                balanced ? balanced_batch_indices(ds.train.labels, cfg.training.per_class,
                                                  batch_rng)
                         : shuffled_batch_indices(ds.train.samples(), cfg.training.batch_size,
                                                  batch_rng);
            double loss_sum = 0.0;
            LossBreakdown epoch_bd;
            std::size_t steps = 0;
            for (const auto& idx : batches) {
                Batch batch = gather_batch(ds.train, idx);
                if (is_moddrop) moddrop_apply(batch, cfg.training.moddrop_prob, moddrop_rng);
                Graph g;
                for (Param* p : params) p->zero_grad();
                ForwardOut out = model->forward(g, batch, Mode::train, dropout_rng);
                LossBreakdown bd;
                TensorRef loss = model->loss(g, out, batch.labels, &bd);
                const double loss_value = g.scalar_value(loss);
                if (!std::isfinite(loss_value)) {
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                        ", method " + method + ", seed " + std::to_string(seed));
                }
                g.backward(loss);
                adam.step(lr);
                loss_sum += loss_value;
                if (epoch_bd.per_modality.size() < bd.per_modality.size()) {
                    epoch_bd.per_modality.resize(bd.per_modality.size(), 0.0);
                }
                epoch_bd.central += bd.central;
                epoch_bd.total += bd.total;
                for (std::size_t k = 0; k < bd.per_modality.size(); ++k) {
                    epoch_bd.per_modality[k] += bd.per_modality[k];
                }
                ++steps;
                if (hooks.on_step) hooks.on_step(bd);
            }
            if (steps == 0) throw TrainingError("no batches produced for an epoch");

            result.train_loss_curve.push_back(loss_sum / static_cast<double>(steps));
            epoch_bd.central /= static_cast<double>(steps);
            epoch_bd.total /= static_cast<double>(steps);
            for (double& v : epoch_bd.per_modality) v /= static_cast<double>(steps);
            result.breakdown_curve.push_back(std::move(epoch_bd));

            const double val =
                evaluate_split(*model, ds.val, ds.label_mode, cfg.model.threshold);
            result.val_metric_curve.push_back(val);
            if (const AlphaState* alphas = model->alpha_state()) {
                result.alpha_curve.push_back(alpha_report(*alphas));
            }

            const auto decision = stopper.update(epoch, val);
            if (stopper.improved_last_update()) {
                best_snapshot = snapshot_state(state);
            }
            if (decision == EarlyStopper::Decision::stop) break;
        }
    } catch (const TrainingError& e) {
        result.failed = true;
        result.failure_reason = e.what();
        return result;
    }

    restore_state(state, best_snapshot);
    result.best_epoch = stopper.best_epoch();
    result.test_metric = evaluate_split(*model, ds.test, ds.label_mode, cfg.model.threshold);
    return result;
}

// ---------------------------------------------------------------------------
// multi-run protocol
// ---------------------------------------------------------------------------

RunReport run_experiment(const ExperimentConfig& cfg) {
    MultimodalDataset ds = build_dataset(cfg);
    for (const std::string& method : cfg.run.methods) {
        if (!is_valid_method(method, ds.n_modalities())) {
            throw ConfigError("invalid method '" + method + "' for " +
                              std::to_string(ds.n_modalities()) + " modalities");
        }
    }

    RunReport report;
    report.config = cfg;
    report.metric_name =
        ds.label_mode == LabelMode::multiclass ? "macro_accuracy" : "micro_f1";

    struct Job {
        std::string method;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const std::string& method : cfg.run.methods) {
        for (std::uint64_t seed : cfg.run.seeds) jobs.push_back({method, seed});
    }
    report.runs.resize(jobs.size());

    const std::size_t workers = std::min(cfg.run.workers, jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr first_failure;
    auto work = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) break;
            try {
                report.runs[i] = train_one_run(cfg, ds, jobs[i].method, jobs[i].seed);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!first_failure) first_failure = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    if (first_failure) std::rethrow_exception(first_failure);

    for (const std::string& method : cfg.run.methods) {
        std::vector<double> scores;
        for (const RunResult& r : report.runs) {
            if (r.method == method && !r.failed) scores.push_back(r.test_metric);
        }
        MethodSummary ms;
        ms.method = method;
        if (!scores.empty()) ms.agg = aggregate_runs(scores);
        report.summary.push_back(std::move(ms));
    }

    const std::size_t nm = cfg.run.methods.size();
    report.z.assign(nm, std::vector<std::optional<double>>(nm));
    for (std::size_t i = 0; i < nm; ++i) {
        for (std::size_t j = 0; j < nm; ++j) {
            if (i == j) continue;
            const Aggregate& a = report.summary[i].agg;
            const Aggregate& b = report.summary[j].agg;
            if (a.n < 2 || b.n < 2 || !a.std || !b.std) continue;
            if (*a.std == 0.0 && *b.std == 0.0) continue;  // degenerate comparison
            report.z[i][j] = two_sample_z(a.mean, *a.std, a.n, b.mean, *b.std, b.n);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// outputs
// ---------------------------------------------------------------------------

void emit_outputs(const RunReport& report, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "runs", ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());

    std::vector<std::string> files;

    {
        const std::string path = (fs::path(dir) / "results.csv").string();
        std::ofstream os(path);
        if (!os) throw IoError("cannot write " + path);
        os << "method,metric,mean,std,n_runs\n";
        for (const MethodSummary& ms : report.summary) {
            os << ms.method << "," << report.metric_name << ",";
            if (ms.agg.n > 0) os << fmt_double(ms.agg.mean);
            os << ",";
            if (ms.agg.std) os << fmt_double(*ms.agg.std);
            os << "," << ms.agg.n << "\n";
        }
        files.push_back("results.csv");
    }

    {
        const std::string path = (fs::path(dir) / "z_matrix.csv").string();
        std::ofstream os(path);
        if (!os) throw IoError("cannot write " + path);
        os << "method";
        for (const MethodSummary& ms : report.summary) os << "," << ms.method;
        os << "\n";
        for (std::size_t i = 0; i < report.summary.size(); ++i) {
            os << report.summary[i].method;
            for (std::size_t j = 0; j < report.summary.size(); ++j) {
                os << ",";
                if (report.z[i][j]) os << fmt_double(*report.z[i][j]);
            }
            os << "\n";
        }
        files.push_back("z_matrix.csv");
    }

    for (const RunResult& run : report.runs) {
        if (run.failed) continue;
        const std::string name =
            "runs/" + run.method + "_seed" + std::to_string(run.seed) + "_loss.csv";
        std::ofstream os(fs::path(dir) / name);
        if (!os) throw IoError("cannot write " + name + " in " + dir);
        const std::size_t n_mods =
            run.breakdown_curve.empty() ? 0 : run.breakdown_curve[0].per_modality.size();
        os << "epoch,train_loss";
        if (n_mods > 0) {
            os << ",loss_central";
            for (std::size_t k = 1; k <= n_mods; ++k) os << ",loss_modality_" << k;
        }
        os << ",val_metric\n";
        for (std::size_t e = 0; e < run.train_loss_curve.size(); ++e) {
            os << e << "," << fmt_double(run.train_loss_curve[e]);
            if (n_mods > 0) {
                os << "," << fmt_double(run.breakdown_curve[e].central);
                for (double v : run.breakdown_curve[e].per_modality) {
                    os << "," << fmt_double(v);
                }
            }
            os << "," << fmt_double(run.val_metric_curve[e]) << "\n";
        }
        files.push_back(name);

        if (!run.alpha_curve.empty()) {
            const std::string aname =
                "runs/" + run.method + "_seed" + std::to_string(run.seed) + "_alpha.csv";
            std::ofstream as(fs::path(dir) / aname);
            if (!as) throw IoError("cannot write " + aname + " in " + dir);
            as << "epoch,layer,source,raw_alpha,normalized_share\n";
            for (std::size_t e = 0; e < run.alpha_curve.size(); ++e) {
                for (const AlphaLayerReport& layer : run.alpha_curve[e]) {
                    for (const AlphaShare& entry : layer.entries) {
                        as << e << "," << layer.layer << "," << entry.source << ","
                           << fmt_double(entry.raw) << "," << fmt_double(entry.share) << "\n";
                    }
                }
            }
            files.push_back(aname);
        }
    }

    {
        const std::string path = (fs::path(dir) / "summary.txt").string();
        std::ofstream os(path);
        if (!os) throw IoError("cannot write " + path);
        files.push_back("summary.txt");
        os << "# fusenet experiment summary\n\n";
        os << "[environment]\n";
        os << "kernel_backend = " << kern::active().name << "\n";
        os << "metric = " << report.metric_name << "\n\n";
        os << "[runs]\n";
        for (const RunResult& run : report.runs) {
            os << run.method << "/" << run.seed << " = ";
            if (run.failed) {
                os << "failed: " << run.failure_reason << "\n";
            } else {
                os << fmt_double(run.test_metric) << " (best_epoch " << run.best_epoch << ")\n";
            }
        }
        os << "\n[files]\n";
        for (const std::string& f : files) os << f << "\n";
        os << "\n[config]\n";
        os << config_to_string(report.config);
    }
}

// ---------------------------------------------------------------------------
// gradient suite
// ---------------------------------------------------------------------------

GradCheckReport run_gradcheck(const ExperimentConfig& cfg, double step) {
    MultimodalDataset ds = build_dataset(cfg);
    ModelSpec spec = build_model_spec(cfg, ds);
    Rng init_rng = Rng(cfg.run.seeds.front()).child("centralnet:init");
    CentralNetModel model(spec, init_rng);

    // Zero biases can park a pre-activation exactly on the relu kink (a dead
    // hidden row makes the next dense output equal its bias), where central
    // differences straddle the kink. Nudge the check point off it.
    Rng nudge = init_rng.child("gradcheck-nudge");
    for (Param* p : model.params()) {
        for (double& v : p->value.a) v += nudge.uniform(-0.05, 0.05);
    }

    const std::size_t batch_rows = std::min<std::size_t>(8, ds.train.samples());
    std::vector<std::size_t> idx(batch_rows);
    for (std::size_t i = 0; i < batch_rows; ++i) idx[i] = i;
    const Batch batch = gather_batch(ds.train, idx);

    Rng unused(0);
    auto loss_fn = [&]() {
        Graph g;
        ForwardOut out = model.forward(g, batch, Mode::eval, unused);
        TensorRef loss = model.loss(g, out, batch.labels, nullptr);
        g.backward(loss);
        return g.scalar_value(loss);
    };

    GradCheckReport rep;
    const std::vector<Param*> params = model.params();
    for (const Param* p : params) rep.n_scalars += p->value.size();
    rep.max_rel_error = grad_check(loss_fn, params, step);
    return rep;
}

}  // namespace fusenet
