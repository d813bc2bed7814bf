#include "m3/reward/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace m3::reward {

namespace {

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

/// Entropy of a normalized distribution. Normalized variant: base-2 over
/// log2(support), in [0,1]. Raw variant: natural log, unnormalized.
double entropy(const std::vector<double>& p, bool raw) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * (raw ? std::log(x) : std::log2(x));
    if (raw) return h;
    const std::size_t support = p.size();
    if (support <= 1) return 0.0;
    return h / std::log2(static_cast<double>(support));
}

}  // namespace

TaskExpertSets derive_task_sets(const std::vector<std::array<double, 5>>& competence, int category_idx,
                                double core_threshold, double irrelevant_threshold) {
    if (category_idx < 0 || category_idx >= 5) throw std::invalid_argument("derive_task_sets: bad category");
    TaskExpertSets sets;
    for (std::size_t i = 0; i < competence.size(); ++i) {
        const double c = competence[i][static_cast<std::size_t>(category_idx)];
        if (c >= core_threshold) sets.core.insert(static_cast<int>(i));
        else if (c <= irrelevant_threshold) sets.irrelevant.insert(static_cast<int>(i));
    }
    return sets;
}

LlmRewardResult llm_reward(const Eigen::VectorXd& weights, const TaskExpertSets& sets,
                           const std::vector<double>& quality, const RewardConfig& cfg) {
    const int n = static_cast<int>(weights.size());
    for (int i = 0; i < n; ++i)
        if (weights[i] < 0.0 || weights[i] > 1.0)
            throw std::invalid_argument("llm_reward: weights must be in [0,1]");

    LlmRewardResult out;
    if (!sets.core.empty()) {
        int hits = 0;
        for (int i : sets.core) hits += weights[i] >= cfg.theta_act ? 1 : 0;
        out.r1 = static_cast<double>(hits) / static_cast<double>(sets.core.size());
    }
    out.r2 = 1.0;
    if (!sets.irrelevant.empty()) {
        int violations = 0;
        for (int i : sets.irrelevant) violations += weights[i] >= cfg.theta_sup ? 1 : 0;
        out.r2 = 1.0 - static_cast<double>(violations) / static_cast<double>(sets.irrelevant.size());
    }

    const double total = weights.sum();
    if (total <= 0.0) {
        out.r3 = 0.0;
        out.zero_mass = true;
    } else {
        double core_mass = 0.0;
        for (int i : sets.core) core_mass += weights[i];
        std::vector<double> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = weights[i] / total;
        out.r3 = (core_mass / total) * (1.0 - entropy(p, cfg.raw_entropy));
    }

    // R4 oracle: quality-weighted score over the top-k weights, renormalized.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return weights[a] > weights[b]; });
    const int k = std::min(cfg.top_k, n);
    double wsum = 0.0;
    for (int j = 0; j < k; ++j) wsum += weights[order[static_cast<std::size_t>(j)]];
    if (wsum > 0.0) {
        for (int j = 0; j < k; ++j) {
            const int i = order[static_cast<std::size_t>(j)];
            const double q = i < static_cast<int>(quality.size()) ? quality[static_cast<std::size_t>(i)] : 0.0;
            out.r4 += (weights[i] / wsum) * q;
        }
    }

    out.r_llm = cfg.alpha[0] * out.r1 + cfg.alpha[1] * out.r2 + cfg.alpha[2] * out.r3 + cfg.alpha[3] * out.r4;
    return out;
}

ChannelRewardResult channel_reward(const std::vector<int>& active, const std::vector<double>& weights,
                                   const std::vector<double>& snr_db, const RewardConfig& cfg) {
    ChannelRewardResult out;
    if (active.empty()) {
        out.no_active = true;
        return out;
    }
    if (active.size() != weights.size())
        throw std::invalid_argument("channel_reward: active/weights size mismatch");
    if (cfg.snr_min >= cfg.snr_max) throw std::invalid_argument("channel_reward: snr_min must be < snr_max");

    const double span = cfg.snr_max - cfg.snr_min;
    std::vector<double> qnorm;
    for (int i : active) {
        if (i < 0 || i >= static_cast<int>(snr_db.size()))
            throw std::invalid_argument("channel_reward: active index out of range");
        qnorm.push_back(clamp01((snr_db[static_cast<std::size_t>(i)] - cfg.snr_min) / span));
    }
    out.q_bar = std::accumulate(qnorm.begin(), qnorm.end(), 0.0) / static_cast<double>(qnorm.size());

    // S: coefficient-of-variation form over the normalized values, clamped.
    double var = 0.0;
    for (double q : qnorm) var += (q - out.q_bar) * (q - out.q_bar);
    const double sd = std::sqrt(var / static_cast<double>(qnorm.size()));
    out.stability = clamp01(1.0 - sd / (out.q_bar + cfg.epsilon));

    // D: load entropy of the normalized routing weights over the active set.
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> p(weights.size(), 0.0);
    if (wsum > 0.0)
        for (std::size_t j = 0; j < weights.size(); ++j) p[j] = weights[j] / wsum;
    if (cfg.raw_entropy) {
        out.load_entropy = entropy(p, true);
    } else {
        out.load_entropy = active.size() == 1 ? 1.0 : entropy(p, false);
    }

    // E: Shannon capacity ratio, dB converted to linear power first.
    const double denom = std::log2(1.0 + std::pow(10.0, cfg.snr_max / 10.0));
    double num = 0.0;
    for (int i : active) {
        const double snr_clamped = std::min(snr_db[static_cast<std::size_t>(i)], cfg.snr_max);
        num += std::log2(1.0 + std::pow(10.0, snr_clamped / 10.0));
    }
    out.spectral_eff = clamp01(num / (static_cast<double>(active.size()) * denom));

    out.r_channel = cfg.channel_w[0] * out.q_bar + cfg.channel_w[1] * out.stability +
                    cfg.channel_w[2] * out.load_entropy + cfg.channel_w[3] * out.spectral_eff;
    return out;
}

double final_reward(double r_llm, double r_channel, const RewardConfig& cfg) {
    return cfg.final_alpha * r_llm + cfg.final_beta * r_channel;
}

void ConfidenceTracker::push(double r_llm, double r_channel, double active_snr_mean,
                             double active_snr_std) {
    llm_.push_back(r_llm);
    chan_.push_back(r_channel);
    while (static_cast<int>(llm_.size()) > window_) llm_.pop_front();
    while (static_cast<int>(chan_.size()) > window_) chan_.pop_front();
    snr_mean_ = active_snr_mean;
    snr_std_ = active_snr_std;
}

void ConfidenceTracker::reset() {
    llm_.clear();
    chan_.clear();
    snr_mean_ = snr_std_ = 0.0;
}

namespace {

std::array<double, 3> mean_std_slope(const std::deque<double>& xs) {
    if (xs.empty()) return {0.0, 0.0, 0.0};
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    // least-squares slope against the step index
    double slope = 0.0;
    if (xs.size() > 1) {
        const double tmean = (n - 1.0) / 2.0;
        double cov = 0.0, tvar = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            cov += (static_cast<double>(i) - tmean) * (xs[i] - mean);
            tvar += (static_cast<double>(i) - tmean) * (static_cast<double>(i) - tmean);
        }
        slope = cov / tvar;
    }
    return {mean, sd, slope};
}

}  // namespace

Eigen::VectorXd ConfidenceTracker::features(double episode_progress) const {
    Eigen::VectorXd f(kConfidenceDim);
    const auto a = mean_std_slope(llm_);
    const auto b = mean_std_slope(chan_);
    f << a[0], a[1], a[2], b[0], b[1], b[2], snr_mean_, snr_std_, episode_progress;
    return f;
}

MetaAnalysis::MetaAnalysis(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    l1_ = nn::Dense(params_, "meta.l1", kConfidenceDim, 16, rng);
    l2_ = nn::Dense(params_, "meta.l2", 16, 2, rng);
}

nn::NodeId MetaAnalysis::forward(nn::Tape& tape, const Eigen::VectorXd& features) const {
    if (features.size() != kConfidenceDim) throw std::invalid_argument("meta: features must have length 9");
    nn::NodeId x = tape.constant(features);
    return tape.softmax_cols(l2_(tape, tape.tanh_(l1_(tape, x))));
}

std::pair<double, double> MetaAnalysis::reliability(const Eigen::VectorXd& features) const {
    nn::Tape tape;
    nn::NodeId y = forward(tape, features);
    const auto& v = tape.value(y);
    return {v(0, 0), v(1, 0)};
}

double MetaAnalysis::train_step(const Eigen::VectorXd& features, double llm_var, double chan_var,
                                double learning_rate) {
    // Target: one-hot on the lower-variance stream; 0.5/0.5 on a tie.
    Eigen::VectorXd target(2);
    if (llm_var < chan_var) target << 1.0, 0.0;
    else if (chan_var < llm_var) target << 0.0, 1.0;
    else target << 0.5, 0.5;

    nn::Tape tape;
    nn::NodeId x = tape.constant(features);
    nn::NodeId logp = tape.log_softmax_cols(l2_(tape, tape.tanh_(l1_(tape, x))));
    nn::NodeId loss = tape.scale(tape.sum_all(tape.mul(tape.constant(target), logp)), -1.0);
    const double value = tape.scalar(loss);
    params_.zero_grad();
    tape.backward(loss);
    params_.adam_update(learning_rate);
    return value;
}

}  // namespace m3::reward
