#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "loasp/tensor.hpp"

namespace loasp {

// -------------------- named parameters --------------------

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

// -------------------- AdamW --------------------
//
// Decoupled weight decay: the decay term multiplies the parameter directly
// and is not folded into the gradient moments.

struct AdamW {
    double lr = 3e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;

    explicit AdamW(ParamList params = {}) : params_(std::move(params)) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::size_t n = static_cast<std::size_t>(params_[i].tensor.size());
            slots_[i].m.assign(n, 0.0);
            slots_[i].v.assign(n, 0.0);
        }
    }

    const ParamList& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    // One update over all parameters from their accumulated gradients.
    // Parameters without a populated gradient are treated as zero-gradient
    // (still subject to weight decay).
    void step() {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& t = params_[i].tensor;
            double* theta = t.data();
            std::size_t n = static_cast<std::size_t>(t.size());
            const double* g = t.grad_populated() ? t.grad().data() : nullptr;
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            for (std::size_t j = 0; j < n; ++j) {
                double gj = g ? g[j] : 0.0;
                if (!std::isfinite(gj))
                    throw NumericError("adamw: non-finite gradient in parameter '" + params_[i].name + "'");
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                theta[j] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * weight_decay * theta[j];
            }
        }
    }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    ParamList params_;
    std::vector<Slot> slots_;
};

// Halved every `period` epochs: base / 2^floor(epoch / period).
inline double step_lr(long epoch, double base, long period = 100) {
    if (period < 1) throw ContractError("step_lr: period must be a positive integer");
    if (epoch < 0) throw ContractError("step_lr: epoch must be non-negative");
    return base / std::pow(2.0, static_cast<double>(epoch / period));
}

}  // namespace loasp
