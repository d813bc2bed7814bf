#include "m3/asem/asem.hpp"

#include <cmath>
#include <stdexcept>

namespace m3::asem {

using nn::NodeId;
using nn::Tape;

double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, const Eigen::VectorXd& m0,
                   double s0) {
    const double s02 = s0 * s0;
    double kl = 0.0;
    for (int i = 0; i < mu.size(); ++i) {
        const double var = std::exp(logvar[i]);
        kl += 0.5 * ((mu[i] - m0[i]) * (mu[i] - m0[i]) / s02 + var / s02 - 1.0 - logvar[i] + std::log(s02));
    }
    return kl;
}

Asem::Asem(const AsemConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    std::mt19937_64 rng(seed);
    gru_ = nn::GruCell(params_, "asem.gru", cfg_.input_dim(), cfg_.hidden_dim, rng);
    head_mu1_ = nn::Dense(params_, "asem.mu1", cfg_.hidden_dim, cfg_.z1_dim, rng);
    head_lv1_ = nn::Dense(params_, "asem.lv1", cfg_.hidden_dim, cfg_.z1_dim, rng);
    head_mu2_ = nn::Dense(params_, "asem.mu2", cfg_.hidden_dim, cfg_.z2_dim, rng);
    head_lv2_ = nn::Dense(params_, "asem.lv2", cfg_.hidden_dim, cfg_.z2_dim, rng);
    dec1_ = nn::Dense(params_, "asem.dec1", cfg_.z_dim(), cfg_.decoder_hidden, rng);
    dec2_ = nn::Dense(params_, "asem.dec2", cfg_.decoder_hidden, cfg_.n_channels, rng);
    z2_prev_mean_ = Eigen::VectorXd::Zero(cfg_.z2_dim);
}

void Asem::reset_prior() {
    z2_prev_mean_.setZero();
    has_prev_ = false;
}

double Asem::elbo_forward(const AsemInput& input, const Eigen::VectorXd& eps1, const Eigen::VectorXd& eps2,
                          bool backprop, Eigen::VectorXd* new_hidden, Posterior* posterior_out) {
    if (input.q_norm.size() != cfg_.n_channels || input.tau.size() != cfg_.tau_dim ||
        input.prev_hidden.size() != cfg_.hidden_dim)
        throw std::invalid_argument("asem: input shape mismatch");

    Tape t;
    Eigen::VectorXd xin(cfg_.input_dim());
    xin << input.q_norm, input.tau, input.prev_reward;
    NodeId x = t.constant(xin);
    NodeId h0 = t.constant(input.prev_hidden);
    NodeId h1 = gru_(t, x, h0);

    NodeId mu1 = head_mu1_(t, h1);
    NodeId lv1 = t.clamp_(head_lv1_(t, h1), cfg_.logvar_min, cfg_.logvar_max);
    NodeId mu2 = head_mu2_(t, h1);
    NodeId lv2 = t.clamp_(head_lv2_(t, h1), cfg_.logvar_min, cfg_.logvar_max);

    NodeId sig1 = t.exp_(t.scale(lv1, 0.5));
    NodeId sig2 = t.exp_(t.scale(lv2, 0.5));
    NodeId z1 = t.add(mu1, t.mul(sig1, t.constant(eps1)));
    NodeId z2 = t.add(mu2, t.mul(sig2, t.constant(eps2)));

    NodeId recon = dec2_(t, t.tanh_(dec1_(t, t.concat_rows({z1, z2}))));

    // Reconstruction NLL under a fixed-variance Gaussian decoder.
    const double sigma2 = cfg_.decoder_sigma * cfg_.decoder_sigma;
    const double norm_const =
        0.5 * cfg_.n_channels * std::log(2.0 * M_PI * sigma2);
    NodeId resid = t.sub(t.constant(input.q_norm), recon);
    NodeId nll = t.add_scalar(t.scale(t.sum_all(t.square_(resid)), 0.5 / sigma2), norm_const);

    // KL(q(z1) || N(0, I)) = 0.5 sum(mu^2 + var - 1 - logvar)
    NodeId kl1 = t.scale(
        t.sum_all(t.add_scalar(t.sub(t.add(t.square_(mu1), t.exp_(lv1)), lv1), -1.0)), 0.5);

    // KL(q(z2) || N(anchor, s0^2 I)); standard normal until an anchor exists.
    const double s0 = has_prev_ ? cfg_.rw_sigma : 1.0;
    const double s02 = s0 * s0;
    Eigen::VectorXd anchor = has_prev_ ? z2_prev_mean_ : Eigen::VectorXd::Zero(cfg_.z2_dim);
    NodeId diff = t.sub(mu2, t.constant(anchor));
    NodeId kl2 = t.scale(
        t.sum_all(t.add_scalar(
            t.sub(t.scale(t.add(t.square_(diff), t.exp_(lv2)), 1.0 / s02), lv2), std::log(s02) - 1.0)),
        0.5);

    NodeId loss = t.add(nll, t.add(kl1, kl2));
    const double value = t.scalar(loss);
    if (!std::isfinite(value))
        throw std::runtime_error("asem: non-finite ELBO (check input normalization and parameters)");

    if (new_hidden) *new_hidden = t.value(h1).col(0);
    if (posterior_out) {
        posterior_out->mu1 = t.value(mu1).col(0);
        posterior_out->logvar1 = t.value(lv1).col(0);
        posterior_out->mu2 = t.value(mu2).col(0);
        posterior_out->logvar2 = t.value(lv2).col(0);
    }
    if (backprop) t.backward(loss);
    return value;
}

Posterior Asem::encode(const AsemInput& input, Eigen::VectorXd& new_hidden) const {
    Posterior post;
    auto& self = const_cast<Asem&>(*this);  // forward pass only; parameters untouched
    self.elbo_forward(input, Eigen::VectorXd::Zero(cfg_.z1_dim), Eigen::VectorXd::Zero(cfg_.z2_dim),
                      false, &new_hidden, &post);
    return post;
}

LatentState Asem::reparameterize(const Posterior& post, std::mt19937_64& rng) const {
    std::normal_distribution<double> n(0.0, 1.0);
    LatentState ls;
    ls.posterior = post;
    ls.z1.resize(post.mu1.size());
    ls.z2.resize(post.mu2.size());
    for (int i = 0; i < post.mu1.size(); ++i)
        ls.z1[i] = post.mu1[i] + std::exp(0.5 * post.logvar1[i]) * n(rng);
    for (int i = 0; i < post.mu2.size(); ++i)
        ls.z2[i] = post.mu2[i] + std::exp(0.5 * post.logvar2[i]) * n(rng);
    return ls;
}

double Asem::elbo_loss(const AsemInput& input, const LatentState& latent) const {
    // Non-tape evaluation used by tests: reconstruct from the given sample
    // and add the closed-form KL terms.
    auto& self = const_cast<Asem&>(*this);
    // Recover the eps that produced this latent so the tape path can be reused.
    Eigen::VectorXd eps1(latent.z1.size()), eps2(latent.z2.size());
    for (int i = 0; i < eps1.size(); ++i)
        eps1[i] = (latent.z1[i] - latent.posterior.mu1[i]) / std::exp(0.5 * latent.posterior.logvar1[i]);
    for (int i = 0; i < eps2.size(); ++i)
        eps2[i] = (latent.z2[i] - latent.posterior.mu2[i]) / std::exp(0.5 * latent.posterior.logvar2[i]);
    return self.elbo_forward(input, eps1, eps2, false);
}

StepResult Asem::step(const AsemInput& input, std::mt19937_64& rng, bool train, double learning_rate) {
    StepResult out;
    if (train) {
        std::normal_distribution<double> n(0.0, 1.0);
        Eigen::VectorXd eps1(cfg_.z1_dim), eps2(cfg_.z2_dim);
        for (int i = 0; i < cfg_.z1_dim; ++i) eps1[i] = n(rng);
        for (int i = 0; i < cfg_.z2_dim; ++i) eps2[i] = n(rng);
        params_.zero_grad();
        Posterior post;
        const double loss = elbo_forward(input, eps1, eps2, true, &out.new_hidden, &post);
        params_.adam_update(learning_rate);
        out.loss = loss;
        out.posterior = post;
        Eigen::VectorXd z(cfg_.z_dim());
        for (int i = 0; i < cfg_.z1_dim; ++i) z[i] = post.mu1[i] + std::exp(0.5 * post.logvar1[i]) * eps1[i];
        for (int i = 0; i < cfg_.z2_dim; ++i)
            z[cfg_.z1_dim + i] = post.mu2[i] + std::exp(0.5 * post.logvar2[i]) * eps2[i];
        out.z_asem = z;
        z2_prev_mean_ = post.mu2;
        has_prev_ = true;
    } else {
        out.posterior = encode(input, out.new_hidden);
        Eigen::VectorXd z(cfg_.z_dim());
        z << out.posterior.mu1, out.posterior.mu2;
        out.z_asem = z;
    }
    return out;
}

}  // namespace m3::asem
