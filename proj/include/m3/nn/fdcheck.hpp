#pragma once

#include <cmath>
#include <functional>

#include "m3/nn/tensor.hpp"

namespace m3::nn {

/// Compares analytic gradients against central finite differences.
///
/// `loss` must be deterministic: it runs a forward+backward pass over `ps`
/// (populating gradients as a side effect) and returns the scalar loss.
/// Returns the maximum relative error over all parameter entries.
inline double finite_diff_check(ParameterSet& ps, const std::function<double()>& loss, double epsilon) {
    ps.zero_grad();
    (void)loss();  // populates analytic gradients
    std::map<std::string, std::vector<double>> analytic;
    for (const auto& [name, tb] : ps.all()) {
        if (tb.gradient.empty())
            analytic[name].assign(tb.values.size(), 0.0);
        else
            analytic[name] = tb.gradient;
    }

    double max_rel = 0.0;
    for (auto& [name, tb] : ps.all()) {
        for (std::size_t i = 0; i < tb.values.size(); ++i) {
            const double saved = tb.values[i];
            tb.values[i] = saved + epsilon;
            ps.zero_grad();
            const double up = loss();
            tb.values[i] = saved - epsilon;
            ps.zero_grad();
            const double dn = loss();
            tb.values[i] = saved;
            const double numeric = (up - dn) / (2.0 * epsilon);
            const double a = analytic[name][i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                throw std::runtime_error("finite_diff_check: non-finite value at " + name);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    ps.zero_grad();
    return max_rel;
}

}  // namespace m3::nn
