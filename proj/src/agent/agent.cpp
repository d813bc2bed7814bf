#include "m3/agent/agent.hpp"

#include <cmath>
#include <stdexcept>

namespace m3::agent {

using nn::NodeId;
using nn::Tape;

void AgentConfig::validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("agent config: gamma must be in (0,1)");
    if (temperature <= 0.0) throw std::invalid_argument("agent config: temperature must be > 0");
    if (batch < 1 || buffer_capacity < batch) throw std::invalid_argument("agent config: bad batch/capacity");
}

Eigen::VectorXd assemble_state(const Eigen::VectorXd& f_img, const Eigen::VectorXd& f_text,
                               const Eigen::VectorXd& r_tag, const Eigen::VectorXd& m_coarse,
                               const Eigen::VectorXd& z_asem, const AgentConfig& cfg) {
    auto check = [](const Eigen::VectorXd& v, int want, const char* name) {
        if (v.size() != want)
            throw std::invalid_argument(std::string("assemble_state: segment '") + name + "' has length " +
                                        std::to_string(v.size()) + ", expected " + std::to_string(want));
    };
    check(f_img, cfg.f_img_dim, "f_img");
    check(f_text, cfg.f_text_dim, "f_text");
    check(r_tag, cfg.tag_dim, "r_tag");
    check(m_coarse, cfg.n_experts, "m_coarse");
    check(z_asem, cfg.z_dim, "z_asem");
    Eigen::VectorXd s(cfg.state_dim());
    s << f_img, f_text, r_tag, m_coarse, z_asem;
    return s;
}

FusionResult fuse_weights(const Eigen::VectorXd& w_expert, const Eigen::VectorXd& w_channel,
                          const std::vector<int>& mask, double fuse_eps) {
    if (w_expert.size() != w_channel.size() || static_cast<std::size_t>(w_expert.size()) != mask.size())
        throw std::invalid_argument("fuse_weights: length mismatch");
    Eigen::VectorXd prod(w_expert.size());
    for (int i = 0; i < prod.size(); ++i) prod[i] = w_expert[i] * w_channel[i] * (mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
    FusionResult out;
    const double l1 = prod.sum();
    if (l1 <= 0.0) {
        out.w_final = Eigen::VectorXd::Zero(prod.size());
        out.degenerate = true;
    } else {
        out.w_final = prod / (l1 + fuse_eps);
    }
    return out;
}

void ReplayBuffer::push(Transition t) {
    if (static_cast<int>(data_.size()) < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[static_cast<std::size_t>(write_)] = std::move(t);
        write_ = (write_ + 1) % capacity_;
    }
}

std::vector<int> ReplayBuffer::sample_indices(int batch, std::mt19937_64& rng) const {
    if (size() < 1) throw std::logic_error("replay buffer: empty");
    std::uniform_int_distribution<int> u(0, size() - 1);
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = u(rng);
    return idx;
}

double concrete_log_density_plain(const Eigen::VectorXd& logits, const Eigen::VectorXd& log_y,
                                  double temperature) {
    const int n = static_cast<int>(logits.size());
    double log_const = 0.0;
    for (int i = 2; i <= n - 1; ++i) log_const += std::log(static_cast<double>(i));
    log_const += (n - 1) * std::log(temperature);
    double term = 0.0;
    for (int i = 0; i < n; ++i) term += logits[i] - (temperature + 1.0) * log_y[i];
    Eigen::VectorXd u = logits - temperature * log_y;
    const double mx = u.maxCoeff();
    const double lse = mx + std::log((u.array() - mx).exp().sum());
    return log_const + term - n * lse;
}

void soft_update(nn::ParameterSet& target, const nn::ParameterSet& online, double rate) {
    for (auto& [name, tb] : target.all()) {
        const auto& src = online.at(name);
        if (src.shape != tb.shape) throw std::invalid_argument("soft_update: shape mismatch for " + name);
        for (std::size_t i = 0; i < tb.values.size(); ++i)
            tb.values[i] = (1.0 - rate) * tb.values[i] + rate * src.values[i];
    }
}

Agent::Agent(const AgentConfig& cfg, const AgentOptions& opts, std::uint64_t seed)
    : cfg_(cfg), opts_(opts), buffer_(cfg.buffer_capacity) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int ds = cfg_.state_dim();
    const int da = cfg_.action_dim();
    a1_ = nn::Dense(actor_ps_, "actor.l1", ds, cfg_.hidden1, rng);
    a2_ = nn::Dense(actor_ps_, "actor.l2", cfg_.hidden1, cfg_.hidden2, rng);
    head_e_ = nn::Dense(actor_ps_, "actor.head_e", cfg_.hidden2, cfg_.n_experts, rng);
    head_c_ = nn::Dense(actor_ps_, "actor.head_c", cfg_.hidden2, cfg_.n_experts, rng);
    const char* names[4] = {"critic_e1", "critic_e2", "critic_c1", "critic_c2"};
    for (int k = 0; k < 4; ++k) {
        auto& ps = critic_ps_[static_cast<std::size_t>(k)];
        critics_[static_cast<std::size_t>(k)] = CriticNet{
            nn::Dense(ps, std::string(names[k]) + ".l1", ds + da, cfg_.hidden1, rng),
            nn::Dense(ps, std::string(names[k]) + ".l2", cfg_.hidden1, cfg_.hidden2, rng),
            nn::Dense(ps, std::string(names[k]) + ".l3", cfg_.hidden2, 1, rng)};
        // targets start as copies of the online critics
        auto& tps = target_ps_[static_cast<std::size_t>(k)];
        for (const auto& [name, tb] : ps.all()) {
            auto& dst = tps.create(name, tb.rows(), tb.cols());
            dst.values = tb.values;
        }
        targets_[static_cast<std::size_t>(k)] = attach_critic(tps);
    }
}

Agent::CriticNet Agent::attach_critic(nn::ParameterSet& ps) const {
    std::string prefix;
    for (const auto& [name, tb] : ps.all()) {
        prefix = name.substr(0, name.find('.'));
        break;
    }
    return CriticNet{nn::Dense::attach(ps, prefix + ".l1"), nn::Dense::attach(ps, prefix + ".l2"),
                     nn::Dense::attach(ps, prefix + ".l3")};
}

NodeId Agent::actor_logits(Tape& t, NodeId state, bool expert_head) const {
    NodeId h = t.tanh_(a2_(t, t.tanh_(a1_(t, state))));
    return expert_head ? head_e_(t, h) : head_c_(t, h);
}

std::pair<NodeId, NodeId> Agent::actor_heads(Tape& t, NodeId state) const {
    NodeId h = t.tanh_(a2_(t, t.tanh_(a1_(t, state))));
    return {head_e_(t, h), head_c_(t, h)};
}

NodeId Agent::critic_q(Tape& t, const CriticNet& net, NodeId s, NodeId a) const {
    NodeId x = t.concat_rows({s, a});
    return net.l3(t, t.tanh_(net.l2(t, t.tanh_(net.l1(t, x)))));
}

ActorSample Agent::act(const Eigen::VectorXd& state, std::mt19937_64& rng, bool stochastic) const {
    if (state.size() != cfg_.state_dim()) throw std::invalid_argument("act: bad state length");
    Tape t;
    NodeId s = const_cast<Tape&>(t).constant(state);
    auto& self = const_cast<Agent&>(*this);
    auto [le, lc] = self.actor_heads(t, s);
    const Eigen::VectorXd logits_e = t.value(le).col(0);
    const Eigen::VectorXd logits_c = t.value(lc).col(0);

    ActorSample out;
    const int n = cfg_.n_experts;
    if (stochastic) {
        const Eigen::MatrixXd ge = nn::gumbel_noise(n, 1, rng);
        Eigen::VectorXd ze = (logits_e + ge.col(0)) / cfg_.temperature;
        Eigen::VectorXd log_ye = (ze.array() - (ze.maxCoeff() + std::log((ze.array() - ze.maxCoeff()).exp().sum())));
        out.w_expert = log_ye.array().exp();
        out.log_prob = concrete_log_density_plain(logits_e, log_ye, cfg_.temperature);
        if (opts_.uniform_channel_head) {
            nn::gumbel_noise(n, 1, rng);  // keep the RNG stream aligned with the full agent
            out.w_channel = Eigen::VectorXd::Constant(n, 1.0 / n);
        } else {
            const Eigen::MatrixXd gc = nn::gumbel_noise(n, 1, rng);
            Eigen::VectorXd zc = (logits_c + gc.col(0)) / cfg_.temperature;
            Eigen::VectorXd log_yc =
                (zc.array() - (zc.maxCoeff() + std::log((zc.array() - zc.maxCoeff()).exp().sum())));
            out.w_channel = log_yc.array().exp();
            out.log_prob += concrete_log_density_plain(logits_c, log_yc, cfg_.temperature);
        }
    } else {
        // zero-noise mode of the Gumbel-Softmax: softmax(logits / tau)
        out.w_expert = nn::softmax_vec(logits_e / cfg_.temperature);
        out.w_channel = opts_.uniform_channel_head ? Eigen::VectorXd::Constant(n, 1.0 / n)
                                                   : nn::softmax_vec(logits_c / cfg_.temperature);
        out.log_prob = 0.0;
    }
    return out;
}

Eigen::VectorXd Agent::target_y(const Eigen::MatrixXd& next_states, const Eigen::VectorXd& rewards,
                                const std::vector<char>& done, bool expert_stream,
                                std::mt19937_64& rng) const {
    const int b = static_cast<int>(next_states.cols());
    const int n = cfg_.n_experts;
    auto& self = const_cast<Agent&>(*this);

    Tape t;
    NodeId s2 = t.constant(next_states);
    auto [le, lc] = self.actor_heads(t, s2);
    const Eigen::MatrixXd ge = nn::gumbel_noise(n, b, rng);
    const Eigen::MatrixXd gc = nn::gumbel_noise(n, b, rng);
    NodeId log_ye = nn::gumbel_log_softmax(t, le, cfg_.temperature, ge);
    NodeId log_yc = nn::gumbel_log_softmax(t, lc, cfg_.temperature, gc);
    Eigen::MatrixXd a2(2 * n, b);
    a2.topRows(n) = t.value(log_ye).array().exp();
    if (opts_.uniform_channel_head)
        a2.bottomRows(n).setConstant(1.0 / n);
    else
        a2.bottomRows(n) = t.value(log_yc).array().exp();

    Eigen::VectorXd logp(b);
    for (int j = 0; j < b; ++j) {
        logp[j] = concrete_log_density_plain(t.value(le).col(j), t.value(log_ye).col(j), cfg_.temperature);
        if (!opts_.uniform_channel_head)
            logp[j] +=
                concrete_log_density_plain(t.value(lc).col(j), t.value(log_yc).col(j), cfg_.temperature);
    }

    NodeId an = t.constant(a2);
    const int base = expert_stream || opts_.combined_reward_critics ? 0 : 2;
    NodeId q1 = self.critic_q(t, targets_[static_cast<std::size_t>(base)], s2, an);
    NodeId q2 = self.critic_q(t, targets_[static_cast<std::size_t>(base + 1)], s2, an);
    Eigen::VectorXd qmin = t.value(q1).row(0).cwiseMin(t.value(q2).row(0)).transpose();

    Eigen::VectorXd y(b);
    for (int j = 0; j < b; ++j) {
        const double bootstrap = done[static_cast<std::size_t>(j)]
                                     ? 0.0
                                     : cfg_.gamma * (qmin[j] - cfg_.entropy_coef * logp[j]);
        y[j] = rewards[j] + bootstrap;
    }
    return y;
}

double Agent::critic_loss_forward(int critic, const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                                  const Eigen::VectorXd& targets, bool backprop) {
    Tape t;
    NodeId s = t.constant(states);
    NodeId a = t.constant(actions);
    NodeId q = critic_q(t, critics_[static_cast<std::size_t>(critic)], s, a);
    NodeId y = t.constant(Eigen::MatrixXd(targets.transpose()));
    NodeId loss = t.mean_all(t.scale(t.square_(t.sub(q, y)), 0.5));
    const double value = t.scalar(loss);
    if (backprop) t.backward(loss);
    return value;
}

UpdateMetrics Agent::update_critics(const std::vector<int>& batch_idx, std::mt19937_64& rng,
                                    bool do_expert, bool do_channel) {
    const int b = static_cast<int>(batch_idx.size());
    const int ds = cfg_.state_dim();
    const int da = cfg_.action_dim();
    Eigen::MatrixXd S(ds, b), A(da, b), S2(ds, b);
    Eigen::VectorXd r_e(b), r_c(b);
    std::vector<char> done(static_cast<std::size_t>(b));
    for (int j = 0; j < b; ++j) {
        const Transition& tr = buffer_.at(batch_idx[static_cast<std::size_t>(j)]);
        S.col(j) = tr.state.cast<double>();
        A.col(j) = tr.action.cast<double>();
        S2.col(j) = tr.next_state.cast<double>();
        if (opts_.combined_reward_critics) {
            r_e[j] = 0.5 * (static_cast<double>(tr.r_llm) + static_cast<double>(tr.r_channel));
        } else {
            r_e[j] = tr.r_llm;
        }
        r_c[j] = tr.r_channel;
        done[static_cast<std::size_t>(j)] = tr.done ? 1 : 0;
    }

    UpdateMetrics m;
    if (do_expert && (opts_.train_expert_critics || opts_.combined_reward_critics)) {
        const Eigen::VectorXd y_e = target_y(S2, r_e, done, true, rng);
        for (int k = 0; k < 2; ++k) {
            critic_ps_[static_cast<std::size_t>(k)].zero_grad();
            const double loss = critic_loss_forward(k, S, A, y_e, true);
            critic_ps_[static_cast<std::size_t>(k)].adam_update(cfg_.learning_rate);
            (k == 0 ? m.loss_e1 : m.loss_e2) = loss;
        }
    }
    if (do_channel && opts_.train_channel_critics && !opts_.combined_reward_critics) {
        const Eigen::VectorXd y_c = target_y(S2, r_c, done, false, rng);
        for (int k = 2; k < 4; ++k) {
            critic_ps_[static_cast<std::size_t>(k)].zero_grad();
            const double loss = critic_loss_forward(k, S, A, y_c, true);
            critic_ps_[static_cast<std::size_t>(k)].adam_update(cfg_.learning_rate);
            (k == 2 ? m.loss_c1 : m.loss_c2) = loss;
        }
    }
    m.updated = true;
    return m;
}

double Agent::actor_loss_forward(const Eigen::MatrixXd& states, const Eigen::MatrixXd& noise_e,
                                 const Eigen::MatrixXd& noise_c, bool backprop) {
    const int n = cfg_.n_experts;
    const int b = static_cast<int>(states.cols());
    Tape t;
    NodeId s = t.constant(states);
    auto [le, lc] = actor_heads(t, s);
    NodeId log_ye = nn::gumbel_log_softmax(t, le, cfg_.temperature, noise_e);
    NodeId ye = t.exp_(log_ye);
    NodeId logp = nn::concrete_log_density(t, le, log_ye, cfg_.temperature);

    NodeId yc;
    if (opts_.uniform_channel_head) {
        yc = t.constant(Eigen::MatrixXd::Constant(n, b, 1.0 / n));
    } else {
        NodeId log_yc = nn::gumbel_log_softmax(t, lc, cfg_.temperature, noise_c);
        yc = t.exp_(log_yc);
        logp = t.add(logp, nn::concrete_log_density(t, lc, log_yc, cfg_.temperature));
    }

    NodeId a = t.concat_rows({ye, yc});
    NodeId mix;
    if (opts_.combined_reward_critics) {
        mix = t.min_elem(critic_q(t, critics_[0], s, a), critic_q(t, critics_[1], s, a));
    } else {
        NodeId min_e = t.min_elem(critic_q(t, critics_[0], s, a), critic_q(t, critics_[1], s, a));
        NodeId min_c = t.min_elem(critic_q(t, critics_[2], s, a), critic_q(t, critics_[3], s, a));
        double lam = opts_.uniform_channel_head || !opts_.train_channel_critics ? 1.0 : cfg_.lambda_mix;
        mix = t.add(t.scale(min_e, lam), t.scale(min_c, 1.0 - lam));
    }
    NodeId loss = t.mean_all(t.sub(t.scale(logp, cfg_.entropy_coef), mix));
    const double value = t.scalar(loss);
    if (backprop) t.backward(loss);
    return value;
}

double Agent::update_actor(const std::vector<int>& batch_idx, std::mt19937_64& rng) {
    const int b = static_cast<int>(batch_idx.size());
    Eigen::MatrixXd S(cfg_.state_dim(), b);
    for (int j = 0; j < b; ++j)
        S.col(j) = buffer_.at(batch_idx[static_cast<std::size_t>(j)]).state.cast<double>();
    const Eigen::MatrixXd ge = nn::gumbel_noise(cfg_.n_experts, b, rng);
    const Eigen::MatrixXd gc = nn::gumbel_noise(cfg_.n_experts, b, rng);
    actor_ps_.zero_grad();
    for (auto& ps : critic_ps_) ps.zero_grad();
    const double loss = actor_loss_forward(S, ge, gc, true);
    actor_ps_.adam_update(cfg_.learning_rate);
    for (auto& ps : critic_ps_) ps.zero_grad();  // discard pass-through critic gradients
    return loss;
}

void Agent::soft_update_targets() {
    for (int k = 0; k < 4; ++k)
        soft_update(target_ps_[static_cast<std::size_t>(k)], critic_ps_[static_cast<std::size_t>(k)],
                    cfg_.polyak);
}

UpdateMetrics Agent::update(std::mt19937_64& rng) {
    if (!ready()) return {};
    const auto idx = buffer_.sample_indices(cfg_.batch, rng);
    UpdateMetrics m = update_critics(idx, rng, true, true);
    m.actor_loss = update_actor(idx, rng);
    soft_update_targets();
    return m;
}

std::map<std::string, const nn::ParameterSet*> Agent::checkpoint_sets() const {
    std::map<std::string, const nn::ParameterSet*> sets;
    sets["actor"] = &actor_ps_;
    const char* names[4] = {"critic_e1", "critic_e2", "critic_c1", "critic_c2"};
    const char* tnames[4] = {"target_e1", "target_e2", "target_c1", "target_c2"};
    for (int k = 0; k < 4; ++k) {
        sets[names[k]] = &critic_ps_[static_cast<std::size_t>(k)];
        sets[tnames[k]] = &target_ps_[static_cast<std::size_t>(k)];
    }
    return sets;
}

std::map<std::string, nn::ParameterSet*> Agent::checkpoint_sets_mutable() {
    std::map<std::string, nn::ParameterSet*> sets;
    sets["actor"] = &actor_ps_;
    const char* names[4] = {"critic_e1", "critic_e2", "critic_c1", "critic_c2"};
    const char* tnames[4] = {"target_e1", "target_e2", "target_c1", "target_c2"};
    for (int k = 0; k < 4; ++k) {
        sets[names[k]] = &critic_ps_[static_cast<std::size_t>(k)];
        sets[tnames[k]] = &target_ps_[static_cast<std::size_t>(k)];
    }
    return sets;
}

}  // namespace m3::agent
