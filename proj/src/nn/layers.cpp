#include "m3/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace m3::nn {

Matrix gumbel_noise(int rows, int cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(1e-12, 1.0);
    Matrix g(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) g(r, c) = -std::log(-std::log(u(rng)));
    return g;
}

NodeId gumbel_softmax(Tape& t, NodeId logits, double temperature, const Matrix& noise) {
    if (temperature <= 0.0) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
    NodeId z = t.scale(t.add(logits, t.constant(noise)), 1.0 / temperature);
    return t.softmax_cols(z);
}

NodeId gumbel_log_softmax(Tape& t, NodeId logits, double temperature, const Matrix& noise) {
    if (temperature <= 0.0) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
    NodeId z = t.scale(t.add(logits, t.constant(noise)), 1.0 / temperature);
    return t.log_softmax_cols(z);
}

NodeId concrete_log_density(Tape& t, NodeId logits, NodeId log_y, double temperature) {
    const int n = static_cast<int>(t.value(logits).rows());
    // log p(y) = log (n-1)! + (n-1) log tau + sum_i [l_i - (tau+1) log y_i]
    //            - n * logsumexp_i (l_i - tau * log y_i)
    double log_const = 0.0;
    for (int i = 2; i <= n - 1; ++i) log_const += std::log(static_cast<double>(i));
    log_const += (n - 1) * std::log(temperature);
    NodeId term = t.sum_rows(t.sub(logits, t.scale(log_y, temperature + 1.0)));
    NodeId lse = t.logsumexp_cols(t.sub(logits, t.scale(log_y, temperature)));
    return t.add_scalar(t.sub(term, t.scale(lse, static_cast<double>(n))), log_const);
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& logits) {
    Eigen::VectorXd z = logits.array() - logits.maxCoeff();
    Eigen::VectorXd e = z.array().exp();
    return e / e.sum();
}

Eigen::VectorXd gumbel_softmax_sample(const Eigen::VectorXd& logits, double temperature,
                                      std::mt19937_64& rng) {
    if (temperature <= 0.0) throw std::invalid_argument("gumbel_softmax_sample: temperature must be > 0");
    Matrix g = gumbel_noise(static_cast<int>(logits.size()), 1, rng);
    return softmax_vec((logits + g.col(0)) / temperature);
}

}  // namespace m3::nn
