#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "m3/nn/layers.hpp"

namespace m3::asem {

struct AsemConfig {
    int n_channels = 7;     // N
    int tau_dim = 768;      // semantic embedding
    int hidden_dim = 64;    // GRU
    int z1_dim = 32;        // short-term latent
    int z2_dim = 16;        // long-term latent
    int decoder_hidden = 32;
    double decoder_sigma = 0.1;   // fixed observation noise on normalized SNR
    double rw_sigma = 0.1;        // z2 random-walk prior scale
    double logvar_min = -10.0;
    double logvar_max = 4.0;

    int z_dim() const { return z1_dim + z2_dim; }
    int input_dim() const { return n_channels + tau_dim + 1; }
};

struct AsemInput {
    Eigen::VectorXd q_norm;      // N, SNR normalized to [0,1]
    Eigen::VectorXd tau;         // tau_dim
    double prev_reward = 0.0;
    Eigen::VectorXd prev_hidden;  // hidden_dim
};

struct Posterior {
    Eigen::VectorXd mu1, logvar1;  // z1
    Eigen::VectorXd mu2, logvar2;  // z2
};

struct LatentState {
    Eigen::VectorXd z1, z2;
    Posterior posterior;
    Eigen::VectorXd concat() const {
        Eigen::VectorXd z(z1.size() + z2.size());
        z << z1, z2;
        return z;
    }
};

struct StepResult {
    Eigen::VectorXd z_asem;      // z1_dim + z2_dim
    Eigen::VectorXd new_hidden;  // hidden_dim
    std::optional<double> loss;  // negative ELBO when training
    Posterior posterior;
};

/// Hierarchical variational state-space model over noisy SNR observations.
/// z1 has a per-step N(0,I) prior; z2 follows a random walk around the
/// previous posterior mean. Trained by one negative-ELBO Adam step per call
/// in training mode; evaluation mode returns posterior means and touches
/// neither parameters nor RNG.
class Asem {
public:
    Asem(const AsemConfig& cfg, std::uint64_t seed);

    Posterior encode(const AsemInput& input, Eigen::VectorXd& new_hidden) const;
    LatentState reparameterize(const Posterior& post, std::mt19937_64& rng) const;

    /// Negative ELBO for a given latent sample (closed-form KL terms).
    double elbo_loss(const AsemInput& input, const LatentState& latent) const;

    StepResult step(const AsemInput& input, std::mt19937_64& rng, bool train, double learning_rate);

    Eigen::VectorXd initial_hidden() const { return Eigen::VectorXd::Zero(cfg_.hidden_dim); }
    void reset_prior();  // forget the z2 random-walk anchor (episode boundary)

    const AsemConfig& config() const { return cfg_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }

    /// Tape-based loss used by training and the finite-difference check.
    /// Noise for the reparameterization must be supplied so the function is
    /// deterministic. Populates gradients via tape backward when `backprop`.
    double elbo_forward(const AsemInput& input, const Eigen::VectorXd& eps1, const Eigen::VectorXd& eps2,
                        bool backprop, Eigen::VectorXd* new_hidden = nullptr,
                        Posterior* posterior_out = nullptr);

private:
    AsemConfig cfg_;
    nn::ParameterSet params_;
    nn::GruCell gru_;
    nn::Dense head_mu1_, head_lv1_, head_mu2_, head_lv2_;
    nn::Dense dec1_, dec2_;
    Eigen::VectorXd z2_prev_mean_;  // random-walk anchor
    bool has_prev_ = false;
};

/// Closed-form KL( N(mu, sigma^2) || N(m0, s0^2) ), summed over dims.
double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, const Eigen::VectorXd& m0,
                   double s0);

}  // namespace m3::asem
