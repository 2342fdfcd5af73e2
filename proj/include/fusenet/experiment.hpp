#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fusenet/metrics.hpp"
#include "fusenet/models.hpp"
#include "fusenet/optim.hpp"

namespace fusenet {

// Flat key-value configuration with [section] headers. Unknown keys are
// rejected by name; all defaults are resolved at parse time and echoed back
// through config_to_string for the reproducibility record.
struct ExperimentConfig {
    struct Dataset {
        std::string kind = "synthetic";  // synthetic | files
        std::string task = "xor";        // xor | redundant | noisy
        std::size_t train_samples = 2000;
        std::size_t val_samples = 500;
        std::size_t test_samples = 500;
        std::vector<std::size_t> widths = {16, 16};
        double noise_sd = 0.1;
        std::size_t classes = 2;
        std::uint64_t seed = 12345;
        std::string manifest;  // required when kind == files
    } dataset;

    struct Model {
        std::vector<std::size_t> hidden = {32, 16};
        std::string loss = "auto";  // auto | softmax_ce | weighted_bce
        double pos_weight = 2.0;
        std::string alignment = "zero_pad";  // zero_pad | linear_proj
        bool batchnorm = true;
        double threshold = 0.5;  // multilabel binarization
    } model;

    struct Training {
        double lr = 0.05;
        double lr_decay = 0.96;
        int epochs = 30;
        int patience = 10;
        double dropout = 0.5;
        double moddrop_prob = 0.5;
        std::string batch_policy = "auto";  // auto | balanced | shuffle
        std::size_t per_class = 2;
        std::size_t batch_size = 42;
        double adam_beta1 = 0.9;
        double adam_beta2 = 0.999;
        double adam_epsilon = 1e-8;
        double bn_momentum = 0.9;
        double bn_epsilon = 1e-5;
    } training;

    struct Run {
        std::vector<std::string> methods = {"unimodal_1", "unimodal_2", "early",
                                            "late",       "moddrop",    "gmu",
                                            "centralnet"};
        std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8};
        std::string out_dir = "out";
        std::size_t workers = 1;
    } run;
};

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

// Canonical form: every key emitted, fixed order. Parsing it again yields an
// identical config.
std::string config_to_string(const ExperimentConfig& cfg);

// One (method, seed) training run.
struct RunResult {
    std::string method;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string failure_reason;
    double test_metric = 0.0;
    int best_epoch = -1;
    std::vector<double> train_loss_curve;
    std::vector<double> val_metric_curve;
    // centralnet extras
    std::vector<LossBreakdown> breakdown_curve;               // per-epoch means
    std::vector<std::vector<AlphaLayerReport>> alpha_curve;   // per-epoch snapshots
};

struct MethodSummary {
    std::string method;
    Aggregate agg;  // over non-failed runs
};

struct RunReport {
    ExperimentConfig config;
    std::string metric_name;  // macro_accuracy | micro_f1
    std::vector<RunResult> runs;
    std::vector<MethodSummary> summary;
    // z[i][j] between methods i and j; absent when either side lacks runs or
    // the comparison is degenerate
    std::vector<std::vector<std::optional<double>>> z;
};

// Dataset construction per config: synthetic generation or manifest
// ingestion, then zero-pad alignment when configured.
MultimodalDataset build_dataset(const ExperimentConfig& cfg);

ModelSpec build_model_spec(const ExperimentConfig& cfg, const MultimodalDataset& ds);

struct TrainHooks {
    // called after every optimizer step with the step's loss decomposition
    std::function<void(const LossBreakdown&)> on_step;
};

RunResult train_one_run(const ExperimentConfig& cfg, const MultimodalDataset& ds,
                        const std::string& method, std::uint64_t seed,
                        const TrainHooks& hooks = {});

// Full protocol: every requested method x seed, independent rng streams,
// early stopping on the validation split, test evaluation of the best
// snapshot, aggregation and pairwise z statistics. Runs execute on up to
// cfg.run.workers threads; results are merged by value in request order.
RunReport run_experiment(const ExperimentConfig& cfg);

// Writes results.csv, z_matrix.csv, per-run loss curves, alpha trajectories,
// and summary.txt into dir.
void emit_outputs(const RunReport& report, const std::string& dir);

// Full-model gradient suite: randomly initialized CentralNet per the config,
// dropout off, batch norm in eval mode, central differences with the given
// step, all parameter groups including the fusion scalars.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t n_scalars = 0;
};
GradCheckReport run_gradcheck(const ExperimentConfig& cfg, double step = 1e-5);

// Metric of a model on a split (eval mode): macro accuracy for multiclass,
// micro F1 at cfg threshold for multilabel.
double evaluate_split(Model& model, const SplitData& split, LabelMode mode, double threshold);

}  // namespace fusenet
