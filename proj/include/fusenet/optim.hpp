#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fusenet/graph.hpp"

namespace fusenet {

// Adam over a fixed group of parameters. All groups of a model -- network
// weights and the fusion scalars alike -- share one state and one step
// counter; they are optimized jointly.
class AdamState {
  public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    explicit AdamState(std::vector<Param*> params);
    AdamState(std::vector<Param*> params, Options opt);

    // One update with bias correction:
    //   m_hat = m/(1-beta1^t), v_hat = v/(1-beta2^t),
    //   theta -= lr * m_hat / (sqrt(v_hat) + eps)
    // Gradients are read from each Param's grad and are not cleared here.
    void step(double lr);

    std::int64_t steps_taken() const { return t_; }
    const std::vector<Param*>& params() const { return params_; }

  private:
    std::vector<Param*> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    Options opt_;
    std::int64_t t_ = 0;
};

// base_lr * decay^epoch
double lr_schedule(double base_lr, int epoch, double decay);

// Tracks the best validation score (maximize); stops after `patience` epochs
// without strict improvement. The snapshot taken at best_epoch is the run's
// final model; keeping that snapshot is the caller's job.
class EarlyStopper {
  public:
    enum class Decision { continue_training, stop };

    explicit EarlyStopper(int patience);

    // Epochs must be presented in increasing order. Returns stop when
    // epoch - best_epoch >= patience.
    Decision update(int epoch, double score);

    bool improved_last_update() const { return improved_; }
    double best_score() const { return best_score_; }
    int best_epoch() const { return best_epoch_; }

  private:
    int patience_;
    double best_score_;
    int best_epoch_ = -1;
    int last_epoch_ = -1;
    bool improved_ = false;
};

}  // namespace fusenet
