#pragma once

#include <string>

#include "m3/nn/tape.hpp"

namespace m3::nn {

/// Affine layer W*x + b with parameters owned by a ParameterSet.
struct Dense {
    TensorBuffer* W = nullptr;
    TensorBuffer* b = nullptr;

    Dense() = default;
    Dense(ParameterSet& ps, const std::string& prefix, int in, int out, std::mt19937_64& rng) {
        W = &ps.create_glorot(prefix + ".W", out, in, rng);
        b = &ps.create(prefix + ".b", out, 1);
    }
    static Dense attach(ParameterSet& ps, const std::string& prefix) {
        Dense d;
        d.W = &ps.at(prefix + ".W");
        d.b = &ps.at(prefix + ".b");
        return d;
    }

    NodeId operator()(Tape& t, NodeId x) const {
        return t.add_bias(t.matmul(t.leaf(*W), x), t.leaf(*b));
    }
};

/// Standard GRU cell. Update gate z gates carry-through: h' = z.h + (1-z).hcand.
struct GruCell {
    int input_dim = 0;
    int hidden_dim = 0;
    TensorBuffer *Wz = nullptr, *Uz = nullptr, *bz = nullptr;
    TensorBuffer *Wr = nullptr, *Ur = nullptr, *br = nullptr;
    TensorBuffer *Wh = nullptr, *Uh = nullptr, *bh = nullptr;

    GruCell() = default;
    GruCell(ParameterSet& ps, const std::string& prefix, int in, int hidden, std::mt19937_64& rng)
        : input_dim(in), hidden_dim(hidden) {
        Wz = &ps.create_glorot(prefix + ".Wz", hidden, in, rng);
        Uz = &ps.create_glorot(prefix + ".Uz", hidden, hidden, rng);
        bz = &ps.create(prefix + ".bz", hidden, 1);
        Wr = &ps.create_glorot(prefix + ".Wr", hidden, in, rng);
        Ur = &ps.create_glorot(prefix + ".Ur", hidden, hidden, rng);
        br = &ps.create(prefix + ".br", hidden, 1);
        Wh = &ps.create_glorot(prefix + ".Wh", hidden, in, rng);
        Uh = &ps.create_glorot(prefix + ".Uh", hidden, hidden, rng);
        bh = &ps.create(prefix + ".bh", hidden, 1);
    }

    NodeId operator()(Tape& t, NodeId x, NodeId h) const {
        NodeId z = t.sigmoid_(t.add_bias(t.add(t.matmul(t.leaf(*Wz), x), t.matmul(t.leaf(*Uz), h)), t.leaf(*bz)));
        NodeId r = t.sigmoid_(t.add_bias(t.add(t.matmul(t.leaf(*Wr), x), t.matmul(t.leaf(*Ur), h)), t.leaf(*br)));
        NodeId hc = t.tanh_(
            t.add_bias(t.add(t.matmul(t.leaf(*Wh), x), t.matmul(t.leaf(*Uh), t.mul(r, h))), t.leaf(*bh)));
        NodeId one_minus_z = t.add_scalar(t.scale(z, -1.0), 1.0);
        return t.add(t.mul(z, h), t.mul(one_minus_z, hc));
    }
};

/// Draws standard Gumbel noise, one value per entry of an n x b matrix.
Matrix gumbel_noise(int rows, int cols, std::mt19937_64& rng);

/// Differentiable Gumbel-Softmax: y = softmax((logits + g)/temperature).
/// Returns the sample node; log-probabilities of the sample are available
/// via gumbel_log_softmax below when the relaxed density is needed.
NodeId gumbel_softmax(Tape& t, NodeId logits, double temperature, const Matrix& noise);

/// log y for the same relaxed sample (numerically safe for small temperatures).
NodeId gumbel_log_softmax(Tape& t, NodeId logits, double temperature, const Matrix& noise);

/// Log-density of a Gumbel-Softmax (Concrete) sample with parameter logits,
/// expressed through log_y = log of the sample. Returns a 1 x batch row.
NodeId concrete_log_density(Tape& t, NodeId logits, NodeId log_y, double temperature);

/// Plain (non-tape) softmax of a vector.
Eigen::VectorXd softmax_vec(const Eigen::VectorXd& logits);

/// Non-tape Gumbel-Softmax sample used by tests and inference helpers.
Eigen::VectorXd gumbel_softmax_sample(const Eigen::VectorXd& logits, double temperature,
                                      std::mt19937_64& rng);

}  // namespace m3::nn
