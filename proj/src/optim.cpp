#include "fusenet/optim.hpp"

#include <cmath>
#include <limits>

namespace fusenet {

AdamState::AdamState(std::vector<Param*> params) : AdamState(std::move(params), Options()) {}

AdamState::AdamState(std::vector<Param*> params, Options opt)
    : params_(std::move(params)), opt_(opt) {
    if (!(opt_.beta1 > 0.0 && opt_.beta1 < 1.0) || !(opt_.beta2 > 0.0 && opt_.beta2 < 1.0)) {
        throw ContractError("adam betas must be in (0,1)");
    }
    if (!(opt_.epsilon > 0.0)) throw ContractError("adam epsilon must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void AdamState::step(double lr) {
    if (!(lr > 0.0)) throw ContractError("adam step: lr must be > 0");
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Param& p = *params_[pi];
        if (p.grad.size() != m_[pi].size()) {
            throw ContractError("adam step: parameter/gradient size changed since registration");
        }
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p.grad.a[i];
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value.a[i] -= lr * m_hat / (std::sqrt(v_hat) + opt_.epsilon);
        }
    }
}

double lr_schedule(double base_lr, int epoch, double decay) {
    if (epoch < 0) throw ContractError("lr_schedule: epoch must be >= 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw ContractError("lr_schedule: decay must be in (0,1]");
    return base_lr * std::pow(decay, static_cast<double>(epoch));
}

EarlyStopper::EarlyStopper(int patience)
    : patience_(patience), best_score_(-std::numeric_limits<double>::infinity()) {
    if (patience <= 0) throw ContractError("early stopping patience must be positive");
}

EarlyStopper::Decision EarlyStopper::update(int epoch, double score) {
    if (epoch <= last_epoch_) {
        throw ContractError("early stopper: epoch " + std::to_string(epoch) +
                            " out of order after " + std::to_string(last_epoch_));
    }
    last_epoch_ = epoch;
    improved_ = score > best_score_;  // strict: ties do not reset patience
    if (improved_) {
        best_score_ = score;
        best_epoch_ = epoch;
    }
    return (epoch - best_epoch_ >= patience_) ? Decision::stop : Decision::continue_training;
}

}  // namespace fusenet
