#include "m3/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "m3/nn/checkpoint.hpp"

namespace m3::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

std::string join_vec(const Eigen::VectorXd& v) {
    std::string out;
    for (int i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt(v[i]);
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(v[i]);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

double normalized_entropy(const Eigen::VectorXd& w) {
    const double total = w.sum();
    if (total <= 0.0 || w.size() <= 1) return 0.0;
    double h = 0.0;
    for (int i = 0; i < w.size(); ++i) {
        const double p = w[i] / total;
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h / std::log2(static_cast<double>(w.size()));
}

std::string digest_state(const Eigen::VectorXd& s) {
    std::string bytes(reinterpret_cast<const char*>(s.data()), static_cast<std::size_t>(s.size()) * sizeof(double));
    return mesh::digest_hex(bytes);
}

}  // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::random_baseline: return "random";
        case Variant::semantic_only: return "semantic_only";
        case Variant::network_first: return "network_first";
        case Variant::no_asem: return "no_asem";
        case Variant::no_cesac: return "no_cesac";
        case Variant::no_mcp: return "no_mcp";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::full, Variant::random_baseline, Variant::semantic_only,
                      Variant::network_first, Variant::no_asem, Variant::no_cesac, Variant::no_mcp})
        if (variant_name(v) == name) return v;
    throw std::invalid_argument("unknown variant/baseline/ablation: " + name);
}

bool variant_trains(Variant v) {
    return v == Variant::full || v == Variant::semantic_only || v == Variant::no_asem ||
           v == Variant::no_cesac || v == Variant::no_mcp;
}

void ScenarioConfig::validate() const {
    double csum = 0.0;
    for (double c : category_distribution) {
        if (c < 0.0) throw std::invalid_argument("scenario: negative category probability");
        csum += c;
    }
    if (std::abs(csum - 1.0) > 1e-9) throw std::invalid_argument("scenario: category distribution must sum to 1");
    if (n_experts < 1) throw std::invalid_argument("scenario: n_experts must be >= 1");
    if (episodes < 0 || steps_per_episode < 1) throw std::invalid_argument("scenario: bad episode sizing");
    if (update_every < 1 || updates_per_round < 1) throw std::invalid_argument("scenario: bad update cadence");
    if (lr_decay_to <= 0.0 || lr_decay_to > 1.0) throw std::invalid_argument("scenario: lr_decay_to must be in (0, 1]");
    channel.validate();
    agent.validate();
    const double rsum = reward.alpha[0] + reward.alpha[1] + reward.alpha[2] + reward.alpha[3];
    const double wsum = reward.channel_w[0] + reward.channel_w[1] + reward.channel_w[2] + reward.channel_w[3];
    if (std::abs(rsum - 1.0) > 1e-9 || std::abs(wsum - 1.0) > 1e-9)
        throw std::invalid_argument("scenario: reward component weights must sum to 1");
}

std::string ScenarioConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["n_experts"] = n_experts;
    j["episodes"] = episodes;
    j["steps_per_episode"] = steps_per_episode;
    j["eval_episodes"] = eval_episodes;
    j["update_every"] = update_every;
    j["updates_per_round"] = updates_per_round;
    j["lr_decay_to"] = lr_decay_to;
    j["checkpoint_every"] = checkpoint_every;
    j["category_distribution"] = category_distribution;
    j["feature_scale"] = feature_scale;
    j["feature_noise"] = feature_noise;
    j["asem_lr"] = asem_lr;
    j["meta_lr"] = meta_lr;
    j["self_check"] = self_check;
    json ch;
    ch["mean_snr_mean"] = channel.mean_snr_mean;
    ch["mean_snr_std"] = channel.mean_snr_std;
    ch["dist_mean"] = channel.dist_mean;
    ch["dist_std"] = channel.dist_std;
    ch["shadow_mean"] = channel.shadow_mean;
    ch["shadow_std"] = channel.shadow_std;
    ch["path_loss_exponent"] = channel.path_loss_exponent;
    ch["ref_loss"] = channel.ref_loss;
    ch["ref_dist"] = channel.ref_dist;
    ch["tx_power"] = channel.tx_power;
    ch["noise_density"] = channel.noise_density;
    ch["bandwidth"] = channel.bandwidth;
    ch["correlation"] = channel.correlation;
    ch["snr_min"] = channel.snr_min;
    ch["snr_max"] = channel.snr_max;
    ch["snr_floor"] = channel.snr_floor;
    ch["fading_sign_mode"] = channel.fading_sign_mode == channel::FadingSignMode::verbatim ? "verbatim" : "corrected";
    j["channel"] = ch;
    json rw;
    rw["alpha"] = reward.alpha;
    rw["channel_w"] = reward.channel_w;
    rw["theta_act"] = reward.theta_act;
    rw["theta_sup"] = reward.theta_sup;
    rw["top_k"] = reward.top_k;
    rw["epsilon"] = reward.epsilon;
    rw["final_alpha"] = reward.final_alpha;
    rw["final_beta"] = reward.final_beta;
    rw["raw_entropy"] = reward.raw_entropy;
    j["reward"] = rw;
    json ag;
    ag["gamma"] = agent.gamma;
    ag["temperature"] = agent.temperature;
    ag["learning_rate"] = agent.learning_rate;
    ag["entropy_coef"] = agent.entropy_coef;
    ag["polyak"] = agent.polyak;
    ag["buffer_capacity"] = agent.buffer_capacity;
    ag["batch"] = agent.batch;
    ag["fuse_eps"] = agent.fuse_eps;
    ag["invoke_threshold"] = agent.invoke_threshold;
    ag["lambda_mix"] = agent.lambda_mix;
    ag["hidden1"] = agent.hidden1;
    ag["hidden2"] = agent.hidden2;
    j["agent"] = ag;
    json mp;
    mp["top_k"] = mask_policy.top_k;
    mp["threshold"] = mask_policy.threshold;
    j["mask_policy"] = mp;
    json bursts_j = json::array();
    for (const auto& b : bursts) {
        json e;
        e["start_step"] = b.start_step;
        e["duration"] = b.duration;
        e["snr_penalty"] = b.snr_penalty;
        e["affected_channels"] = b.affected_channels;
        bursts_j.push_back(e);
    }
    j["bursts"] = bursts_j;
    return j.dump(2);
}

ScenarioConfig ScenarioConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ScenarioConfig c;
    auto get = [&](const json& obj, const char* key, auto& dst) {
        if (obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get(j, "seed", c.seed);
    get(j, "n_experts", c.n_experts);
    get(j, "episodes", c.episodes);
    get(j, "steps_per_episode", c.steps_per_episode);
    get(j, "eval_episodes", c.eval_episodes);
    get(j, "update_every", c.update_every);
    get(j, "updates_per_round", c.updates_per_round);
    get(j, "lr_decay_to", c.lr_decay_to);
    get(j, "checkpoint_every", c.checkpoint_every);
    get(j, "category_distribution", c.category_distribution);
    get(j, "feature_scale", c.feature_scale);
    get(j, "feature_noise", c.feature_noise);
    get(j, "asem_lr", c.asem_lr);
    get(j, "meta_lr", c.meta_lr);
    get(j, "self_check", c.self_check);
    if (j.contains("channel")) {
        const json& ch = j.at("channel");
        get(ch, "mean_snr_mean", c.channel.mean_snr_mean);
        get(ch, "mean_snr_std", c.channel.mean_snr_std);
        get(ch, "dist_mean", c.channel.dist_mean);
        get(ch, "dist_std", c.channel.dist_std);
        get(ch, "shadow_mean", c.channel.shadow_mean);
        get(ch, "shadow_std", c.channel.shadow_std);
        get(ch, "path_loss_exponent", c.channel.path_loss_exponent);
        get(ch, "ref_loss", c.channel.ref_loss);
        get(ch, "ref_dist", c.channel.ref_dist);
        get(ch, "tx_power", c.channel.tx_power);
        get(ch, "noise_density", c.channel.noise_density);
        get(ch, "bandwidth", c.channel.bandwidth);
        get(ch, "correlation", c.channel.correlation);
        get(ch, "snr_min", c.channel.snr_min);
        get(ch, "snr_max", c.channel.snr_max);
        get(ch, "snr_floor", c.channel.snr_floor);
        if (ch.contains("fading_sign_mode"))
            c.channel.fading_sign_mode = ch.at("fading_sign_mode").get<std::string>() == "verbatim"
                                             ? channel::FadingSignMode::verbatim
                                             : channel::FadingSignMode::corrected;
    }
    if (j.contains("reward")) {
        const json& rw = j.at("reward");
        get(rw, "alpha", c.reward.alpha);
        get(rw, "channel_w", c.reward.channel_w);
        get(rw, "theta_act", c.reward.theta_act);
        get(rw, "theta_sup", c.reward.theta_sup);
        get(rw, "top_k", c.reward.top_k);
        get(rw, "epsilon", c.reward.epsilon);
        get(rw, "final_alpha", c.reward.final_alpha);
        get(rw, "final_beta", c.reward.final_beta);
        get(rw, "raw_entropy", c.reward.raw_entropy);
    }
    if (j.contains("agent")) {
        const json& ag = j.at("agent");
        get(ag, "gamma", c.agent.gamma);
        get(ag, "temperature", c.agent.temperature);
        get(ag, "learning_rate", c.agent.learning_rate);
        get(ag, "entropy_coef", c.agent.entropy_coef);
        get(ag, "polyak", c.agent.polyak);
        get(ag, "buffer_capacity", c.agent.buffer_capacity);
        get(ag, "batch", c.agent.batch);
        get(ag, "fuse_eps", c.agent.fuse_eps);
        get(ag, "invoke_threshold", c.agent.invoke_threshold);
        get(ag, "lambda_mix", c.agent.lambda_mix);
        get(ag, "hidden1", c.agent.hidden1);
        get(ag, "hidden2", c.agent.hidden2);
    }
    if (j.contains("mask_policy")) {
        const json& mp = j.at("mask_policy");
        get(mp, "top_k", c.mask_policy.top_k);
        get(mp, "threshold", c.mask_policy.threshold);
    }
    if (j.contains("bursts")) {
        for (const auto& e : j.at("bursts")) {
            channel::InterferenceEvent ev;
            ev.start_step = e.at("start_step").get<int>();
            ev.duration = e.at("duration").get<int>();
            ev.snr_penalty = e.at("snr_penalty").get<double>();
            ev.affected_channels = e.at("affected_channels").get<std::vector<int>>();
            c.bursts.push_back(ev);
        }
    }
    c.agent.n_experts = c.n_experts;
    // reward bounds track the channel bounds used for normalization
    c.reward.snr_min = c.channel.snr_min;
    c.reward.snr_max = c.channel.snr_max;
    c.validate();
    return c;
}

ScenarioConfig ScenarioConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scenario: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

TaskGenerator::TaskGenerator(const ScenarioConfig& cfg, const router::Lexicon& lexicon, std::uint64_t seed)
    : cfg_(cfg), lexicon_(lexicon), rng_(seed) {
    // class directions are fixed by category, independent of the run seed;
    // unit-magnitude coordinates (random signs) so per-dimension signal is
    // comparable to the additive noise
    for (int c = 0; c < router::kNumCategories; ++c) {
        std::mt19937_64 dir_rng(0xd1c7u + static_cast<std::uint64_t>(c));
        std::bernoulli_distribution sign(0.5);
        Eigen::VectorXd di(cfg_.agent.f_img_dim), dt(cfg_.agent.f_text_dim);
        for (int i = 0; i < di.size(); ++i) di[i] = sign(dir_rng) ? 1.0 : -1.0;
        for (int i = 0; i < dt.size(); ++i) dt[i] = sign(dir_rng) ? 1.0 : -1.0;
        img_dirs_.push_back(di * cfg_.feature_scale);
        text_dirs_.push_back(dt * cfg_.feature_scale);
    }
}

GeneratedTask TaskGenerator::next() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng_);
    int cat = router::kNumCategories - 1;
    double acc = 0.0;
    for (int c = 0; c < router::kNumCategories; ++c) {
        acc += cfg_.category_distribution[static_cast<std::size_t>(c)];
        if (r < acc) {
            cat = c;
            break;
        }
    }
    const std::string cat_name = router::category_names()[static_cast<std::size_t>(cat)];
    const auto& words = lexicon_.words(cat_name);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    // two true-category keywords plus one keyword from each of two other
    // categories: the tag classifier still resolves the majority category,
    // but retrieval sees cross-category similarity, so the coarse mask is a
    // genuine candidate set rather than a single expert
    const std::size_t w1 = pick(rng_);
    std::size_t w2 = pick(rng_);
    while (w2 == w1) w2 = pick(rng_);  // two distinct keywords: majority is unambiguous
    std::string text = "please handle this query: " + words[w1] + " " + words[w2];
    std::uniform_int_distribution<int> pick_cat(0, router::kNumCategories - 1);
    int d1 = pick_cat(rng_);
    while (d1 == cat) d1 = pick_cat(rng_);
    int d2 = pick_cat(rng_);
    while (d2 == cat || d2 == d1) d2 = pick_cat(rng_);
    for (int d : {d1, d2}) {
        const auto& dwords = lexicon_.words(router::category_names()[static_cast<std::size_t>(d)]);
        std::uniform_int_distribution<std::size_t> dpick(0, dwords.size() - 1);
        text += " " + dwords[dpick(rng_)];
    }

    GeneratedTask g;
    g.task.category = cat_name;
    g.task.instruction_text = text;
    g.task.difficulty = u(rng_);
    g.task.seed = rng_();
    std::normal_distribution<double> n(0.0, cfg_.feature_noise);
    g.f_img = img_dirs_[static_cast<std::size_t>(cat)];
    g.f_text = text_dirs_[static_cast<std::size_t>(cat)];
    for (int i = 0; i < g.f_img.size(); ++i) g.f_img[i] += n(rng_);
    for (int i = 0; i < g.f_text.size(); ++i) g.f_text[i] += n(rng_);
    return g;
}

std::string trace_header() {
    return "episode,step,category,tag,mask,state_digest,w_expert,w_channel,w_final,invoked,"
           "r1,r2,r3,r4,r_llm,q_bar,stability,load_entropy,spectral_eff,r_channel,r_final,"
           "diversity,meta_w_llm,meta_w_channel,actor_loss,critic_e,critic_c,asem_loss,snr";
}

std::string MetricsRow::to_csv() const {
    std::string out = "metric,mean,std\n";
    out += "llm_quality," + fmt(llm_quality) + "," + fmt(llm_quality_std) + "\n";
    out += "task_expert_alignment," + fmt(task_expert_alignment) + "," + fmt(task_expert_alignment_std) + "\n";
    out += "expert_diversity," + fmt(expert_diversity) + "," + fmt(expert_diversity_std) + "\n";
    out += "channel_quality," + fmt(channel_quality) + "," + fmt(channel_quality_std) + "\n";
    out += "snr_quality," + fmt(snr_quality) + "," + fmt(snr_quality_std) + "\n";
    out += "channel_stability," + fmt(channel_stability) + "," + fmt(channel_stability_std) + "\n";
    out += "mean_r_final," + fmt(mean_r_final) + ",0\n";
    out += "convergence_episode," + std::to_string(convergence_episode) + ",0\n";
    return out;
}

namespace {

struct EpisodeAccumulator {
    std::vector<double> llm, align, div, chan, snrq, stab, rfin;
    void clear() { llm.clear(); align.clear(); div.clear(); chan.clear(); snrq.clear(); stab.clear(); rfin.clear(); }
};

MetricsRow summarize(const std::vector<std::array<double, 7>>& episode_means, int eval_episodes) {
    MetricsRow row;
    const int n = static_cast<int>(episode_means.size());
    const int start = std::max(0, n - eval_episodes);
    std::array<std::vector<double>, 7> cols;
    for (int e = start; e < n; ++e)
        for (int k = 0; k < 7; ++k) cols[static_cast<std::size_t>(k)].push_back(episode_means[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)]);
    row.llm_quality = mean_of(cols[0]);
    row.llm_quality_std = std_of(cols[0]);
    row.task_expert_alignment = mean_of(cols[1]);
    row.task_expert_alignment_std = std_of(cols[1]);
    row.expert_diversity = mean_of(cols[2]);
    row.expert_diversity_std = std_of(cols[2]);
    row.channel_quality = mean_of(cols[3]);
    row.channel_quality_std = std_of(cols[3]);
    row.snr_quality = mean_of(cols[4]);
    row.snr_quality_std = std_of(cols[4]);
    row.channel_stability = mean_of(cols[5]);
    row.channel_stability_std = std_of(cols[5]);
    row.mean_r_final = mean_of(cols[6]);
    // convergence: first episode whose 50-episode moving average of R_final
    // reaches 95% of the final value (informational only)
    if (n > 0 && row.mean_r_final > 0.0) {
        constexpr int kWin = 50;
        double acc = 0.0;
        std::vector<double> rf;
        for (const auto& e : episode_means) rf.push_back(e[6]);
        for (int e = 0; e < n; ++e) {
            acc += rf[static_cast<std::size_t>(e)];
            if (e >= kWin) acc -= rf[static_cast<std::size_t>(e - kWin)];
            const int w = std::min(e + 1, kWin);
            if (acc / w >= 0.95 * row.mean_r_final) {
                row.convergence_episode = e;
                break;
            }
        }
    }
    return row;
}

}  // namespace

RunResult run(const ScenarioConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    fs::create_directories(opts.out_dir);

    std::uint64_t seq = cfg.seed;
    const std::uint64_t env_seed = splitmix64(seq);
    const std::uint64_t task_seed = splitmix64(seq);
    const std::uint64_t agent_seed = splitmix64(seq);
    const std::uint64_t asem_seed = splitmix64(seq);
    const std::uint64_t meta_seed = splitmix64(seq);
    const std::uint64_t act_seed = splitmix64(seq);
    const std::uint64_t update_seed = splitmix64(seq);

    const Variant variant = opts.variant;
    const bool trains = opts.train && variant_trains(variant);

    // environment and task stream are identical across variants for a seed
    channel::Environment env(cfg.channel, cfg.n_experts, env_seed);
    if (opts.inject_bursts)
        for (const auto& b : cfg.bursts) env.inject_burst(b);

    router::Lexicon lexicon = router::Lexicon::defaults();
    TaskGenerator taskgen(cfg, lexicon, task_seed);

    mesh::Registry registry;
    mesh::register_default_experts(registry);
    if (cfg.competence_override) {
        // competence override is applied by rebuilding profiles in order
        throw std::runtime_error("competence_override: not supported via run(); edit the registry instead");
    }
    if (static_cast<int>(registry.size()) != cfg.n_experts)
        throw std::runtime_error("scenario: n_experts must match the registry size (7 default experts)");
    const auto descriptor_index = registry.descriptor_index();
    const auto category_map = registry.category_map();
    const auto expert_order = registry.order();
    std::vector<std::array<double, 5>> competence;
    for (const auto& id : expert_order) competence.push_back(registry.profile(id).competence);

    agent::AgentConfig acfg = cfg.agent;
    acfg.n_experts = cfg.n_experts;
    agent::AgentOptions aopts;
    switch (variant) {
        case Variant::semantic_only:
            aopts.uniform_channel_head = true;
            aopts.train_channel_critics = false;
            break;
        case Variant::no_cesac:
            aopts.combined_reward_critics = true;
            break;
        default:
            break;
    }
    const bool uses_agent = variant != Variant::random_baseline && variant != Variant::network_first;
    std::optional<agent::Agent> agent_opt;
    if (uses_agent) agent_opt.emplace(acfg, aopts, agent_seed);

    asem::AsemConfig asem_cfg;
    asem_cfg.n_channels = cfg.n_experts;
    asem::Asem asem_model(asem_cfg, asem_seed);
    reward::MetaAnalysis meta(meta_seed);
    reward::ConfidenceTracker tracker(10);

    if (!opts.load_checkpoint.empty()) {
        std::map<std::string, nn::ParameterSet*> sets;
        if (agent_opt) sets = agent_opt->checkpoint_sets_mutable();
        sets["asem"] = &asem_model.params();
        sets["meta"] = &meta.params();
        nn::load_checkpoint_file(opts.load_checkpoint, sets);
    }

    std::mt19937_64 act_rng(act_seed), update_rng(update_seed);
    mesh::LoopbackTransport transport;
    mesh::LinkModel link;

    std::string trace = trace_header() + "\n";
    std::string channel_trace = channel::Environment::trace_header() + "\n";
    std::vector<std::array<double, 7>> episode_means;

    const int n = cfg.n_experts;
    int global_step = 0;
    std::optional<agent::Transition> pending;
    agent::UpdateMetrics last_update;
    double last_asem_loss = 0.0;

    const int explore_episodes = std::max(1, cfg.episodes - cfg.eval_episodes);
    for (int episode = 0; episode < cfg.episodes; ++episode) {
        // Trailing evaluation window: the policy acts in mean mode and the
        // networks are frozen, so the reported tail metrics measure the
        // learned policy rather than exploration noise.
        const bool eval_phase = trains && episode >= explore_episodes;
        if (trains && uses_agent && !eval_phase && cfg.lr_decay_to < 1.0) {
            const double frac = static_cast<double>(episode) / static_cast<double>(explore_episodes);
            agent_opt->set_learning_rate(cfg.agent.learning_rate *
                                         (1.0 - (1.0 - cfg.lr_decay_to) * frac));
        }
        Eigen::VectorXd hidden = asem_model.initial_hidden();
        asem_model.reset_prior();
        tracker.reset();
        double prev_reward = 0.0;
        EpisodeAccumulator acc;

        for (int step = 0; step < cfg.steps_per_episode; ++step) {
            GeneratedTask g = taskgen.next();
            const std::string true_cat = g.task.category;
            const int true_cat_idx = router::category_index(true_cat);

            // Stage 1
            std::string tag = lexicon.extract_tag(g.task.instruction_text);
            router::CoarseMask mask;
            Eigen::VectorXd r_tag = Eigen::VectorXd::Zero(router::kNumCategories);
            if (variant == Variant::no_mcp) {
                mask.bits.assign(static_cast<std::size_t>(n), 1);
            } else {
                mask = router::coarse_mask(g.task, lexicon, descriptor_index, category_map, expert_order,
                                           cfg.mask_policy);
                r_tag[static_cast<std::size_t>(router::category_index(tag))] = 1.0;
            }
            if (cfg.self_check && mask.cardinality() == 0)
                throw std::runtime_error("self-check: all-zero coarse mask");

            // observations and ASEM latent
            const std::vector<double> q = env.observe();
            Eigen::VectorXd q_norm(n);
            for (int i = 0; i < n; ++i)
                q_norm[i] = std::clamp((q[static_cast<std::size_t>(i)] - cfg.channel.snr_min) /
                                           (cfg.channel.snr_max - cfg.channel.snr_min),
                                       0.0, 1.0);
            Eigen::VectorXd z = Eigen::VectorXd::Zero(asem_cfg.z_dim());
            if (variant != Variant::no_asem) {
                asem::AsemInput ain;
                ain.q_norm = q_norm;
                ain.tau = router::embed_text(g.task.instruction_text);
                ain.prev_reward = prev_reward;
                ain.prev_hidden = hidden;
                auto res = asem_model.step(ain, act_rng, trains, cfg.asem_lr);
                z = res.z_asem;
                hidden = res.new_hidden;
                if (res.loss) last_asem_loss = *res.loss;
            }

            Eigen::VectorXd mask_vec(n);
            for (int i = 0; i < n; ++i) mask_vec[i] = mask.bits[static_cast<std::size_t>(i)];
            const Eigen::VectorXd state =
                agent::assemble_state(g.f_img, g.f_text, r_tag, mask_vec, z, acfg);

            // action
            Eigen::VectorXd w_expert(n), w_channel(n);
            if (variant == Variant::random_baseline) {
                std::exponential_distribution<double> ex(1.0);
                Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
                for (int i = 0; i < n; ++i)
                    if (mask.bits[static_cast<std::size_t>(i)]) d[i] = ex(act_rng);
                if (d.sum() <= 0.0) d.setConstant(1.0);
                w_expert = d / d.sum();
                w_channel = Eigen::VectorXd::Constant(n, 1.0 / n);
            } else if (variant == Variant::network_first) {
                const double mask_total = static_cast<double>(mask.cardinality());
                for (int i = 0; i < n; ++i)
                    w_expert[i] = mask.bits[static_cast<std::size_t>(i)] ? 1.0 / mask_total : 0.0;
                Eigen::VectorXd logits(n);
                for (int i = 0; i < n; ++i) logits[i] = q[static_cast<std::size_t>(i)] / 2.0;
                w_channel = nn::softmax_vec(logits);
            } else {
                const auto sample = agent_opt->act(state, act_rng, trains && !eval_phase);
                w_expert = sample.w_expert;
                w_channel = sample.w_channel;
            }

            auto fusion = agent::fuse_weights(w_expert, w_channel, mask.bits, acfg.fuse_eps);
            Eigen::VectorXd w_invoke = fusion.w_final;
            if (fusion.degenerate) {
                const double mask_total = static_cast<double>(mask.cardinality());
                for (int i = 0; i < n; ++i)
                    w_invoke[i] = mask.bits[static_cast<std::size_t>(i)] ? 1.0 / mask_total : 0.0;
            }

            // invoke experts above the threshold
            std::vector<int> invoked;
            for (int i = 0; i < n; ++i)
                if (w_invoke[i] > acfg.invoke_threshold) invoked.push_back(i);
            if (cfg.self_check)
                for (int i : invoked)
                    if (!mask.bits[static_cast<std::size_t>(i)])
                        throw std::runtime_error("self-check: invocation of a masked-out expert");

            mesh::ContextEnvelope envelope = mesh::build_context(
                g.task, tag, q, {}, global_step);
            std::vector<double> qualities(static_cast<std::size_t>(n), 0.0);
            std::vector<mesh::InvocationResponse> responses;
            std::vector<double> agg_weights;
            double inv_sum = 0.0;
            for (int i : invoked) inv_sum += w_invoke[i];
            for (int i : invoked) {
                mesh::InvocationRequest req;
                req.expert_id = expert_order[static_cast<std::size_t>(i)];
                req.envelope = envelope;
                req.routing_weight = w_invoke[i];
                auto resp = mesh::invoke_expert(registry, transport, req, q[static_cast<std::size_t>(i)], link);
                qualities[static_cast<std::size_t>(i)] = resp.quality;
                responses.push_back(resp);
                agg_weights.push_back(inv_sum > 0.0 ? w_invoke[i] / inv_sum : 0.0);
            }
            const auto aggregate = mesh::aggregate_responses(responses, agg_weights);
            (void)aggregate;

            // rewards (evaluated against the task's true category)
            const auto sets = reward::derive_task_sets(competence, true_cat_idx);
            const auto llm = reward::llm_reward(fusion.degenerate ? w_invoke : fusion.w_final, sets,
                                                qualities, cfg.reward);
            const auto chan = reward::channel_reward(invoked, agg_weights, q, cfg.reward);
            const double r_final = reward::final_reward(llm.r_llm, chan.r_channel, cfg.reward);

            // meta-analysis stream
            double snr_mean = 0.0, snr_std = 0.0;
            if (!invoked.empty()) {
                std::vector<double> vals;
                for (int i : invoked) vals.push_back(q_norm[i]);
                snr_mean = mean_of(vals);
                snr_std = std_of(vals);
            }
            tracker.push(llm.r_llm, chan.r_channel, snr_mean, snr_std);
            const double progress = (static_cast<double>(step) + 1.0) / cfg.steps_per_episode;
            const Eigen::VectorXd conf = tracker.features(progress);
            auto [meta_wl, meta_wc] = meta.reliability(conf);
            if (trains) meta.train_step(conf, conf[1] * conf[1], conf[4] * conf[4], cfg.meta_lr);

            // replay: rewards stored separately, never pre-combined
            if (uses_agent) {
                if (pending) {
                    pending->next_state = state.cast<float>();
                    pending->done = false;
                    agent_opt->push_transition(*pending);
                }
                agent::Transition tr;
                tr.state = state.cast<float>();
                Eigen::VectorXd a(2 * n);
                a << w_expert, w_channel;
                tr.action = a.cast<float>();
                tr.r_llm = static_cast<float>(llm.r_llm);
                tr.r_channel = static_cast<float>(chan.r_channel);
                pending = tr;
            }

            if (trains && uses_agent && !eval_phase && agent_opt->ready() &&
                (global_step % cfg.update_every == 0))
                for (int u = 0; u < cfg.updates_per_round; ++u) last_update = agent_opt->update(update_rng);

            const double diversity = normalized_entropy(fusion.degenerate ? w_invoke : fusion.w_final);

            std::string mask_str;
            for (int i = 0; i < n; ++i) mask_str += mask.bits[static_cast<std::size_t>(i)] ? '1' : '0';
            Eigen::VectorXd q_vec(n);
            for (int i = 0; i < n; ++i) q_vec[i] = q[static_cast<std::size_t>(i)];
            trace += std::to_string(episode) + "," + std::to_string(step) + "," + true_cat + "," + tag +
                     "," + mask_str + "," + digest_state(state) + "," + join_vec(w_expert) + "," +
                     join_vec(w_channel) + "," + join_vec(w_invoke) + "," + join_ints(invoked) + "," +
                     fmt(llm.r1) + "," + fmt(llm.r2) + "," + fmt(llm.r3) + "," + fmt(llm.r4) + "," +
                     fmt(llm.r_llm) + "," + fmt(chan.q_bar) + "," + fmt(chan.stability) + "," +
                     fmt(chan.load_entropy) + "," + fmt(chan.spectral_eff) + "," + fmt(chan.r_channel) +
                     "," + fmt(r_final) + "," + fmt(diversity) + "," + fmt(meta_wl) + "," + fmt(meta_wc) +
                     "," + fmt(last_update.actor_loss) + "," + fmt(last_update.loss_e1) + "," +
                     fmt(last_update.loss_c1) + "," + fmt(last_asem_loss) + "," + join_vec(q_vec) + "\n";
            if (opts.write_channel_trace) env.append_trace(channel_trace);

            acc.llm.push_back(llm.r_llm);
            acc.align.push_back(0.5 * (llm.r1 + llm.r2));
            acc.div.push_back(diversity);
            acc.chan.push_back(chan.r_channel);
            acc.snrq.push_back(chan.q_bar);
            acc.stab.push_back(chan.stability);
            acc.rfin.push_back(r_final);

            prev_reward = r_final;
            env.step();
            ++global_step;
        }

        if (uses_agent && pending) {
            pending->next_state = Eigen::VectorXf::Zero(acfg.state_dim());
            pending->done = true;
            agent_opt->push_transition(*pending);
            pending.reset();
        }
        episode_means.push_back({mean_of(acc.llm), mean_of(acc.align), mean_of(acc.div), mean_of(acc.chan),
                                 mean_of(acc.snrq), mean_of(acc.stab), mean_of(acc.rfin)});

        if (trains && uses_agent && cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0) {
            auto sets = agent_opt->checkpoint_sets();
            sets["asem"] = &asem_model.params();
            sets["meta"] = &meta.params();
            nn::save_checkpoint_file(opts.out_dir + "/checkpoint_ep" + std::to_string(episode + 1) + ".m3ckpt",
                                     sets);
        }
    }

    RunResult result;
    result.trace_path = opts.out_dir + "/trace.csv";
    result.metrics_path = opts.out_dir + "/metrics.csv";
    {
        std::ofstream tf(result.trace_path);
        tf << trace;
        json snapshot = json::parse(cfg.to_json());
        snapshot["variant"] = variant_name(variant);
        std::ofstream cf(opts.out_dir + "/config.json");
        cf << snapshot.dump(2) << "\n";
    }
    if (opts.write_channel_trace) {
        std::ofstream cf(opts.out_dir + "/channel_trace.csv");
        cf << channel_trace;
    }
    result.metrics = summarize(episode_means, cfg.eval_episodes);
    {
        std::ofstream mf(result.metrics_path);
        mf << result.metrics.to_csv();
    }
    if (uses_agent) {
        result.checkpoint_path = opts.out_dir + "/checkpoint_final.m3ckpt";
        auto sets = agent_opt->checkpoint_sets();
        sets["asem"] = &asem_model.params();
        sets["meta"] = &meta.params();
        nn::save_checkpoint_file(result.checkpoint_path, sets);
    }
    return result;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

MetricsRow compute_metrics_from_trace(const std::string& trace_path, int eval_episodes) {
    std::ifstream in(trace_path);
    if (!in) throw std::runtime_error("metrics: cannot open " + trace_path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("metrics: empty trace");
    const auto header = split(line, ',');
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::runtime_error("metrics: missing column " + name);
    };
    const int c_ep = col("episode"), c_llm = col("r_llm"), c_r1 = col("r1"), c_r2 = col("r2"),
              c_div = col("diversity"), c_chan = col("r_channel"), c_qbar = col("q_bar"),
              c_stab = col("stability"), c_rfin = col("r_final");

    std::map<int, EpisodeAccumulator> episodes;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        const int ep = std::stoi(f[static_cast<std::size_t>(c_ep)]);
        auto& a = episodes[ep];
        a.llm.push_back(std::stod(f[static_cast<std::size_t>(c_llm)]));
        a.align.push_back(0.5 * (std::stod(f[static_cast<std::size_t>(c_r1)]) + std::stod(f[static_cast<std::size_t>(c_r2)])));
        a.div.push_back(std::stod(f[static_cast<std::size_t>(c_div)]));
        a.chan.push_back(std::stod(f[static_cast<std::size_t>(c_chan)]));
        a.snrq.push_back(std::stod(f[static_cast<std::size_t>(c_qbar)]));
        a.stab.push_back(std::stod(f[static_cast<std::size_t>(c_stab)]));
        a.rfin.push_back(std::stod(f[static_cast<std::size_t>(c_rfin)]));
    }
    if (episodes.empty()) throw std::runtime_error("metrics: trace has no rows");
    std::vector<std::array<double, 7>> means;
    for (auto& [ep, a] : episodes)
        means.push_back({mean_of(a.llm), mean_of(a.align), mean_of(a.div), mean_of(a.chan), mean_of(a.snrq),
                         mean_of(a.stab), mean_of(a.rfin)});
    return summarize(means, eval_episodes);
}

std::string BurstReport::to_json() const {
    json j;
    j["pre_event_avg"] = pre_event_avg;
    j["dip_depth"] = dip_depth;
    j["recovery_steps"] = recovery_steps;
    return j.dump(2);
}

BurstReport burst_report_from_trace(const std::string& trace_path, const channel::InterferenceEvent& event,
                                    int window) {
    std::ifstream in(trace_path);
    if (!in) throw std::runtime_error("burst report: cannot open " + trace_path);
    std::string line;
    std::getline(in, line);
    const auto header = split(line, ',');
    int c_rfin = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "r_final") c_rfin = static_cast<int>(i);
    if (c_rfin < 0) throw std::runtime_error("burst report: missing r_final column");
    std::vector<double> rf;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rf.push_back(std::stod(split(line, ',')[static_cast<std::size_t>(c_rfin)]));
    }
    const int start = event.start_step;
    const int end = event.start_step + event.duration;
    if (start <= window || end >= static_cast<int>(rf.size()))
        throw std::runtime_error("burst report: event window does not fit the trace");

    BurstReport rep;
    double pre = 0.0;
    for (int t = start - window; t < start; ++t) pre += rf[static_cast<std::size_t>(t)];
    rep.pre_event_avg = pre / window;
    double mn = rf[static_cast<std::size_t>(start)];
    for (int t = start; t < end; ++t) mn = std::min(mn, rf[static_cast<std::size_t>(t)]);
    rep.dip_depth = rep.pre_event_avg - mn;
    rep.recovery_steps = static_cast<int>(rf.size()) - end;  // pessimistic default: never recovered
    for (int t = end; t < static_cast<int>(rf.size()); ++t) {
        if (rf[static_cast<std::size_t>(t)] >= 0.9 * rep.pre_event_avg) {
            rep.recovery_steps = t - end;
            break;
        }
    }
    return rep;
}

}  // namespace m3::harness
