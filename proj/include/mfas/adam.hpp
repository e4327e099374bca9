#pragma once
// Adam with bias correction over named parameter lists. Moment buffers are
// keyed by parameter name so optimizer state survives serialization and
// model cloning.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfas/errors.hpp"
#include "mfas/tensor.hpp"

namespace mfas {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

class AdamState {
public:
    AdamState() = default;
    explicit AdamState(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }
    std::int64_t step_count() const { return step_; }

    // One Adam update over `params`. Gradients are read from each tensor's
    // accumulated grad buffer, scaled by `grad_scale`; a tensor that never
    // took part in a backward pass counts as zero gradient. A non-finite
    // gradient aborts and names the offending parameter.
    void step(std::vector<NamedParam>& params, double grad_scale = 1.0) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (NamedParam& p : params) {
            auto& data = p.tensor.value();
            Moments& mom = moments_for(p.name, data.size());
            const bool has_grad = p.tensor.has_grad();
            for (std::size_t i = 0; i < data.size(); ++i) {
                double g = has_grad ? grad_scale * p.tensor.grad()[i] : 0.0;
                if (!std::isfinite(g))
                    throw ContractError("adam: non-finite gradient in parameter '" + p.name +
                                        "' at index " + std::to_string(i));
                mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
                mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
                const double m_hat = mom.m[i] / bc1;
                const double v_hat = mom.v[i] / bc2;
                data[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    const std::map<std::string, Moments>& moments() const { return moments_; }
    std::map<std::string, Moments>& moments() { return moments_; }
    void set_step_count(std::int64_t s) { step_ = s; }

private:
    Moments& moments_for(const std::string& name, std::size_t n) {
        Moments& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
        } else if (mom.m.size() != n) {
            throw ContractError("adam: moment buffers for '" + name + "' have size " +
                                std::to_string(mom.m.size()) + ", parameter has " +
                                std::to_string(n));
        }
        return mom;
    }

    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

}  // namespace mfas
