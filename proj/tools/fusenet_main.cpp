#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fusenet/experiment.hpp"
#include "fusenet/kernels.hpp"

namespace {

// exit categories: 2 validation, 3 ingestion/io, 4 training/numeric
constexpr int kExitValidation = 2;
constexpr int kExitIngestion = 3;
constexpr int kExitTraining = 4;

int classify(const std::exception& e) {
    if (dynamic_cast<const fusenet::ConfigError*>(&e) ||
        dynamic_cast<const fusenet::ContractError*>(&e) ||
        dynamic_cast<const fusenet::ShapeError*>(&e)) {
        return kExitValidation;
    }
    if (dynamic_cast<const fusenet::IngestError*>(&e) ||
        dynamic_cast<const fusenet::ParseError*>(&e) ||
        dynamic_cast<const fusenet::IoError*>(&e)) {
        return kExitIngestion;
    }
    if (dynamic_cast<const fusenet::TrainingError*>(&e)) return kExitTraining;
    return 1;
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            std::size_t workers_override) {
    fusenet::ExperimentConfig cfg = fusenet::parse_config(config_path);
    if (!out_override.empty()) cfg.run.out_dir = out_override;
    if (workers_override > 0) cfg.run.workers = workers_override;

    fusenet::RunReport report = fusenet::run_experiment(cfg);
    fusenet::emit_outputs(report, cfg.run.out_dir);

    bool any_failed = false;
    for (const fusenet::MethodSummary& ms : report.summary) {
        std::printf("%-12s %s = ", ms.method.c_str(), report.metric_name.c_str());
        if (ms.agg.n == 0) {
            std::printf("no completed runs\n");
        } else if (ms.agg.std) {
            std::printf("%.4f +- %.4f  (n=%zu)\n", ms.agg.mean, *ms.agg.std, ms.agg.n);
        } else {
            std::printf("%.4f  (n=1)\n", ms.agg.mean);
        }
    }
    for (const fusenet::RunResult& r : report.runs) {
        if (r.failed) {
            any_failed = true;
            std::fprintf(stderr, "run %s/%llu failed: %s\n", r.method.c_str(),
                         static_cast<unsigned long long>(r.seed), r.failure_reason.c_str());
        }
    }
    std::printf("outputs written to %s\n", cfg.run.out_dir.c_str());
    return any_failed ? kExitTraining : 0;
}

int cmd_gen(const std::string& task, const std::string& out_dir, std::uint64_t seed,
            std::size_t samples, double noise) {
    fusenet::SyntheticTaskSpec spec;
    if (task == "xor") {
        spec.kind = fusenet::SyntheticKind::xor_complementary;
        spec.n_classes = 2;
    } else if (task == "redundant") {
        spec.kind = fusenet::SyntheticKind::redundant;
        spec.n_classes = 4;
    } else if (task == "noisy") {
        spec.kind = fusenet::SyntheticKind::noisy_modality;
        spec.n_classes = 4;
    } else {
        throw fusenet::ConfigError("unknown task '" + task + "' (expected xor|redundant|noisy)");
    }
    spec.train_samples = samples;
    spec.val_samples = samples / 4;
    spec.test_samples = samples / 4;
    spec.noise_sd = noise;
    spec.seed = seed;
    const fusenet::MultimodalDataset ds = fusenet::gen_synthetic(spec);
    fusenet::write_dataset(ds, out_dir);
    std::printf("wrote %s task (%zu/%zu/%zu samples, %zu classes) to %s\n", task.c_str(),
                spec.train_samples, spec.val_samples, spec.test_samples, ds.n_classes(),
                out_dir.c_str());
    return 0;
}

int cmd_gradcheck(const std::string& config_path) {
    const fusenet::ExperimentConfig cfg = fusenet::parse_config(config_path);
    const fusenet::GradCheckReport rep = fusenet::run_gradcheck(cfg);
    std::printf("max_relative_error = %.6e over %zu parameter scalars\n", rep.max_rel_error,
                rep.n_scalars);
    const bool pass = rep.max_rel_error < 1e-3;
    std::printf("%s (threshold 1e-3)\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : kExitTraining;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fusenet: multimodal fusion training engine"};
    app.require_subcommand(1);

    std::string backend = "auto";
    app.add_option("--backend", backend, "kernel backend: scalar|avx2|auto")->capture_default_str();

    std::string config_path;
    std::string out_dir;
    std::size_t workers = 0;
    CLI::App* run = app.add_subcommand("run", "run a config-driven experiment");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_dir, "output directory (overrides config)");
    run->add_option("--workers", workers, "parallel training workers (overrides config)");

    std::string gen_task;
    std::string gen_out;
    std::uint64_t gen_seed = 12345;
    std::size_t gen_samples = 2000;
    double gen_noise = 0.1;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset as CSV + manifest");
    gen->add_option("--task", gen_task, "xor|redundant|noisy")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
    gen->add_option("--samples", gen_samples, "training samples (val/test are a quarter each)")
        ->capture_default_str();
    gen->add_option("--noise", gen_noise, "noise standard deviation")->capture_default_str();

    std::string gc_config;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "full-model finite-difference gradient suite");
    gradcheck->add_option("--config", gc_config, "experiment config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        fusenet::kern::select(fusenet::kern::parse_backend(backend));
        if (run->parsed()) return cmd_run(config_path, out_dir, workers);
        if (gen->parsed()) return cmd_gen(gen_task, gen_out, gen_seed, gen_samples, gen_noise);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_config);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return classify(e);
    }
    return 0;
}
