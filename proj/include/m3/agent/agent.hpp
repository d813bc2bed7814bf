#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "m3/nn/layers.hpp"

namespace m3::agent {

struct AgentConfig {
    int n_experts = 7;
    int f_img_dim = 1024;
    int f_text_dim = 768;
    int tag_dim = 5;
    int z_dim = 48;
    double gamma = 0.99;
    double temperature = 0.1;   // Gumbel-Softmax tau
    double learning_rate = 7e-4;
    double entropy_coef = 0.2;  // alpha_ent
    double polyak = 0.005;
    int buffer_capacity = 50000;
    int batch = 128;
    double fuse_eps = 1e-6;
    double invoke_threshold = 0.05;  // epsilon_inv
    double lambda_mix = 0.5;         // expert-vs-channel critic blend in the actor loss
    int hidden1 = 512;
    int hidden2 = 256;

    int state_dim() const { return f_img_dim + f_text_dim + tag_dim + n_experts + z_dim; }
    int action_dim() const { return 2 * n_experts; }
    void validate() const;
};

struct AgentOptions {
    bool train_expert_critics = true;
    bool train_channel_critics = true;
    bool combined_reward_critics = false;  // single twin pair on R_final (no-cesac ablation)
    bool uniform_channel_head = false;     // channel head pinned uniform (semantic-only baseline)
};

/// Builds the 1852-dim observation [f_img, f_text, r_tag, m_coarse, z_asem].
/// Mismatched segment lengths raise an error naming the offending segment.
Eigen::VectorXd assemble_state(const Eigen::VectorXd& f_img, const Eigen::VectorXd& f_text,
                               const Eigen::VectorXd& r_tag, const Eigen::VectorXd& m_coarse,
                               const Eigen::VectorXd& z_asem, const AgentConfig& cfg);

struct FusionResult {
    Eigen::VectorXd w_final;
    bool degenerate = false;  // all-zero product; caller falls back to uniform over the mask
};

/// w_final = (w_e . w_c . mask) / (||.||_1 + eps).
FusionResult fuse_weights(const Eigen::VectorXd& w_expert, const Eigen::VectorXd& w_channel,
                          const std::vector<int>& mask, double fuse_eps);

struct ActorSample {
    Eigen::VectorXd w_expert;   // simplex, length N
    Eigen::VectorXd w_channel;  // simplex, length N
    double log_prob = 0.0;      // sum of the two relaxed-categorical log densities
};

struct Transition {
    Eigen::VectorXf state;
    Eigen::VectorXf action;  // [w_expert; w_channel]
    float r_llm = 0.0f;
    float r_channel = 0.0f;
    Eigen::VectorXf next_state;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(int capacity) : capacity_(capacity) {}
    void push(Transition t);
    int size() const { return static_cast<int>(data_.size()); }
    const Transition& at(int i) const { return data_[static_cast<std::size_t>(i)]; }
    std::vector<int> sample_indices(int batch, std::mt19937_64& rng) const;

private:
    int capacity_;
    int write_ = 0;
    std::vector<Transition> data_;
};

struct UpdateMetrics {
    double loss_e1 = 0, loss_e2 = 0, loss_c1 = 0, loss_c2 = 0;
    double actor_loss = 0;
    bool updated = false;
};

class Agent {
public:
    Agent(const AgentConfig& cfg, const AgentOptions& opts, std::uint64_t seed);

    /// stochastic: Gumbel-Softmax samples (with the relaxed log density);
    /// otherwise plain softmax of the head logits (deterministic).
    ActorSample act(const Eigen::VectorXd& state, std::mt19937_64& rng, bool stochastic) const;

    void push_transition(Transition t) { buffer_.push(std::move(t)); }
    bool ready() const { return buffer_.size() >= cfg_.batch; }
    const ReplayBuffer& buffer() const { return buffer_; }

    /// One full gradient update: all active critics, the actor, soft updates.
    UpdateMetrics update(std::mt19937_64& rng);

    /// Critic-only update with per-stream ablation switches (decoupling test).
    UpdateMetrics update_critics(const std::vector<int>& batch_idx, std::mt19937_64& rng,
                                 bool do_expert, bool do_channel);
    double update_actor(const std::vector<int>& batch_idx, std::mt19937_64& rng);
    void soft_update_targets();

    const AgentConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
    const AgentOptions& options() const { return opts_; }

    nn::ParameterSet& actor_params() { return actor_ps_; }
    nn::ParameterSet& critic_params(int i) { return critic_ps_[static_cast<std::size_t>(i)]; }
    nn::ParameterSet& target_params(int i) { return target_ps_[static_cast<std::size_t>(i)]; }

    std::map<std::string, const nn::ParameterSet*> checkpoint_sets() const;
    std::map<std::string, nn::ParameterSet*> checkpoint_sets_mutable();

    /// Tape-based forwards, exposed for the finite-difference checks.
    double actor_loss_forward(const Eigen::MatrixXd& states, const Eigen::MatrixXd& noise_e,
                              const Eigen::MatrixXd& noise_c, bool backprop);
    double critic_loss_forward(int critic, const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                               const Eigen::VectorXd& targets, bool backprop);

private:
    struct CriticNet {
        nn::Dense l1, l2, l3;
    };
    nn::NodeId actor_logits(nn::Tape& t, nn::NodeId state, bool expert_head) const;
    /// Both heads off a single trunk evaluation.
    std::pair<nn::NodeId, nn::NodeId> actor_heads(nn::Tape& t, nn::NodeId state) const;
    nn::NodeId critic_q(nn::Tape& t, const CriticNet& net, nn::NodeId s, nn::NodeId a) const;
    CriticNet attach_critic(nn::ParameterSet& ps) const;

    Eigen::VectorXd target_y(const Eigen::MatrixXd& next_states, const Eigen::VectorXd& rewards,
                             const std::vector<char>& done, bool expert_stream, std::mt19937_64& rng) const;

    AgentConfig cfg_;
    AgentOptions opts_;
    nn::ParameterSet actor_ps_;
    nn::Dense a1_, a2_, head_e_, head_c_;
    // critics: 0,1 expert stream; 2,3 channel stream
    std::array<nn::ParameterSet, 4> critic_ps_;
    std::array<CriticNet, 4> critics_;
    std::array<nn::ParameterSet, 4> target_ps_;
    std::array<CriticNet, 4> targets_;
    ReplayBuffer buffer_;
};

/// polyak step: target <- (1-rate)*target + rate*online, per parameter.
void soft_update(nn::ParameterSet& target, const nn::ParameterSet& online, double rate);

/// Non-tape relaxed-categorical (Concrete) log density given logits and
/// the log of the sample.
double concrete_log_density_plain(const Eigen::VectorXd& logits, const Eigen::VectorXd& log_y,
                                  double temperature);

}  // namespace m3::agent
