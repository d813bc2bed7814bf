#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace m3::nn {

using Matrix = Eigen::MatrixXd;

/// Named flat buffer holding one parameter tensor (row-major values) and,
/// once backprop has run, its gradient.
struct TensorBuffer {
    std::vector<int> shape;          // {rows} or {rows, cols}
    std::vector<double> values;      // row-major, product(shape) entries
    std::vector<double> gradient;    // empty until backprop populates it

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() > 1 ? shape[1] : 1; }
    std::size_t size() const { return values.size(); }

    using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using RowMajorMutMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Matrix as_matrix() const { return RowMajorMap(values.data(), rows(), cols()); }
    void set_from(const Matrix& m) { RowMajorMutMap(values.data(), rows(), cols()) = m; }
    void accumulate_gradient(const Matrix& g) {
        if (gradient.empty()) gradient.assign(values.size(), 0.0);
        RowMajorMutMap(gradient.data(), rows(), cols()) += g;
    }
};

struct AdamMoments {
    std::vector<double> m1;
    std::vector<double> m2;
    std::int64_t step = 0;
};

/// Named collection of parameters plus their Adam state.
class ParameterSet {
public:
    TensorBuffer& create(const std::string& name, int rows, int cols) {
        if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        TensorBuffer tb;
        tb.shape = cols == 1 ? std::vector<int>{rows} : std::vector<int>{rows, cols};
        tb.values.assign(static_cast<std::size_t>(rows) * cols, 0.0);
        auto& slot = params_[name] = std::move(tb);
        moments_[name].m1.assign(slot.values.size(), 0.0);
        moments_[name].m2.assign(slot.values.size(), 0.0);
        return slot;
    }

    /// Glorot-uniform initialization in +-sqrt(6/(fan_in+fan_out)).
    TensorBuffer& create_glorot(const std::string& name, int rows, int cols, std::mt19937_64& rng) {
        auto& tb = create(name, rows, cols);
        const double bound = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : tb.values) v = u(rng);
        return tb;
    }

    TensorBuffer& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return it->second;
    }
    const TensorBuffer& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grad() {
        for (auto& [name, tb] : params_) tb.gradient.clear();
    }

    /// Standard Adam step (beta1=0.9, beta2=0.999, eps=1e-8).
    /// Parameters with no populated gradient raise a usage error.
    void adam_update(double learning_rate);

    const std::map<std::string, TensorBuffer>& all() const { return params_; }
    std::map<std::string, TensorBuffer>& all() { return params_; }
    const std::map<std::string, AdamMoments>& moments() const { return moments_; }
    std::map<std::string, AdamMoments>& moments() { return moments_; }

private:
    std::map<std::string, TensorBuffer> params_;
    std::map<std::string, AdamMoments> moments_;
};

}  // namespace m3::nn
