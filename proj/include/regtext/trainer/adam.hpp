#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "regtext/error.hpp"
#include "regtext/tensor.hpp"

namespace regtext::trainer {

// Bias-corrected Adam. Moment buffers are keyed by parameter name and
// allocated lazily; gradients are zeroed after each applied step.
template <typename T>
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    long step_count() const { return step_; }
    double learning_rate() const { return lr_; }

    void step(const std::vector<std::pair<std::string, TensorPtr<T>>>& trainables) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (const auto& [name, t] : trainables) {
            check(t->grad.size() == t->data.size(),
                  "adam: trainable tensor '", name, "' has no populated gradient");
            auto& m = moment1_[name];
            auto& v = moment2_[name];
            if (m.size() != t->data.size()) m.assign(t->data.size(), 0.0);
            if (v.size() != t->data.size()) v.assign(t->data.size(), 0.0);
            for (std::size_t i = 0; i < t->data.size(); ++i) {
                const double g = static_cast<double>(t->grad[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double update = lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                t->data[i] = static_cast<T>(static_cast<double>(t->data[i]) - update);
            }
            t->zero_grad();
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long step_ = 0;
    std::map<std::string, std::vector<double>> moment1_, moment2_;
};

}  // namespace regtext::trainer
