#include "m3/nn/tensor.hpp"

#include <cmath>

namespace m3::nn {

void ParameterSet::adam_update(double learning_rate) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    for (auto& [name, tb] : params_) {
        if (tb.gradient.empty())
            throw std::logic_error("adam_update: no gradient for parameter " + name);
        AdamMoments& mom = moments_[name];
        mom.step += 1;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(mom.step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(mom.step));
        for (std::size_t i = 0; i < tb.values.size(); ++i) {
            const double g = tb.gradient[i];
            mom.m1[i] = beta1 * mom.m1[i] + (1.0 - beta1) * g;
            mom.m2[i] = beta2 * mom.m2[i] + (1.0 - beta2) * g * g;
            const double mhat = mom.m1[i] / bc1;
            const double vhat = mom.m2[i] / bc2;
            tb.values[i] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace m3::nn
