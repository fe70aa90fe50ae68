#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsan/tensor.hpp"

namespace dsan {

// Learning rate for the warm-up schedule: rises linearly for `warmup` steps,
// then decays with the inverse square root of the step count. Both branches
// meet at step == warmup.
inline double warmup_learning_rate(long step, int model_dim, int warmup_steps) {
    if (step < 1) throw std::invalid_argument("warmup_learning_rate: step must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return std::pow(static_cast<double>(model_dim), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-9;
    int warmup_steps = 4000;
    int model_dim = 64;
};

// Adam with warm-up learning rate. Moment buffers mirror the parameter
// shapes; the step counter increments once per update and is incremented
// before the learning rate is computed.
class WarmupAdam {
public:
    WarmupAdam(std::vector<Tensor> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].data().size(), 0.0);
            v_[i].assign(params_[i].data().size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++step_;
        last_lr_ = warmup_learning_rate(step_, cfg_.model_dim, cfg_.warmup_steps);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            const std::vector<double>& g = params_[pi].grad();
            std::vector<double>& w = params_[pi].raw();
            std::vector<double>& m = m_[pi];
            std::vector<double>& v = v_[pi];
            for (size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                w[i] -= last_lr_ * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

    long steps_taken() const { return step_; }
    double last_learning_rate() const { return last_lr_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    long step_ = 0;
    double last_lr_ = 0.0;
};

}  // namespace dsan
