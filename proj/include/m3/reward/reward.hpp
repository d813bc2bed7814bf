#pragma once

#include <Eigen/Dense>
#include <array>
#include <deque>
#include <optional>
#include <set>
#include <vector>

#include "m3/nn/layers.hpp"

namespace m3::reward {

struct TaskExpertSets {
    std::set<int> core;        // competence >= core_threshold
    std::set<int> irrelevant;  // competence <= irrelevant_threshold
};

/// Derives E_core / E_irr from the competence matrix column for one category.
TaskExpertSets derive_task_sets(const std::vector<std::array<double, 5>>& competence, int category_idx,
                                double core_threshold = 0.9, double irrelevant_threshold = 0.1);

struct RewardConfig {
    std::array<double, 4> alpha = {0.4, 0.3, 0.2, 0.1};   // R_LLM mixture
    std::array<double, 4> channel_w = {0.4, 0.3, 0.2, 0.1};  // Q,S,D,E mixture
    double theta_act = 0.2;
    double theta_sup = 0.1;
    int top_k = 3;       // R4 oracle support
    double snr_min = 5.0;
    double snr_max = 25.0;
    double epsilon = 1e-6;
    double final_alpha = 0.5;
    double final_beta = 0.5;
    bool raw_entropy = false;  // reproduce the unnormalized printed entropies
};

struct LlmRewardResult {
    double r1 = 0, r2 = 0, r3 = 0, r4 = 0, r_llm = 0;
    bool zero_mass = false;
};

struct ChannelRewardResult {
    double q_bar = 0, stability = 0, load_entropy = 0, spectral_eff = 0, r_channel = 0;
    bool no_active = false;
};

/// Semantic reward from the routing weight vector. `quality` maps expert
/// index -> response quality (0 for experts that were not invoked).
LlmRewardResult llm_reward(const Eigen::VectorXd& weights, const TaskExpertSets& sets,
                           const std::vector<double>& quality, const RewardConfig& cfg);

/// Channel reward over the active set. `weights` are the routing weights of
/// the active channels (same order as `active`), `snr_db` the full SNR vector.
ChannelRewardResult channel_reward(const std::vector<int>& active, const std::vector<double>& weights,
                                   const std::vector<double>& snr_db, const RewardConfig& cfg);

double final_reward(double r_llm, double r_channel, const RewardConfig& cfg);

struct RewardBreakdown {
    double r1 = 0, r2 = 0, r3 = 0, r4 = 0, r_llm = 0;
    double q_bar = 0, stability = 0, load_entropy = 0, spectral_eff = 0, r_channel = 0;
    double r_final = 0;
};

constexpr int kConfidenceDim = 9;

/// Rolling statistics feeding the meta-analysis net:
/// mean/std/slope of R_LLM and R_channel over a 10-step window,
/// mean/std of active-channel SNR, episode progress fraction.
class ConfidenceTracker {
public:
    explicit ConfidenceTracker(int window = 10) : window_(window) {}
    void push(double r_llm, double r_channel, double active_snr_mean, double active_snr_std);
    Eigen::VectorXd features(double episode_progress) const;  // length 9
    void reset();

private:
    int window_;
    std::deque<double> llm_, chan_;
    double snr_mean_ = 0.0, snr_std_ = 0.0;
};

/// Small 9 -> 16 -> 2 net with softmax output; its parameters are isolated
/// from every other trainable component.
class MetaAnalysis {
public:
    explicit MetaAnalysis(std::uint64_t seed);

    std::pair<double, double> reliability(const Eigen::VectorXd& features) const;

    /// One self-supervised step: the target prefers the reward stream with
    /// the lower recent variance. Returns the cross-entropy loss.
    double train_step(const Eigen::VectorXd& features, double llm_var, double chan_var,
                      double learning_rate);

    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }

private:
    nn::NodeId forward(nn::Tape& tape, const Eigen::VectorXd& features) const;
    mutable nn::ParameterSet params_;
    nn::Dense l1_, l2_;
};

}  // namespace m3::reward
