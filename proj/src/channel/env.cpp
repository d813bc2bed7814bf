#include "m3/channel/env.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace m3::channel {

namespace {
constexpr double kEulerGamma = 0.57721566490153286;
}

double expected_fading_db() { return -10.0 * kEulerGamma / std::log(10.0); }

void ChannelConfig::validate() const {
    if (ref_dist <= 0.0) throw std::invalid_argument("channel config: ref_dist must be > 0");
    if (correlation < 0.0 || correlation > 1.0)
        throw std::invalid_argument("channel config: correlation must be in [0,1]");
    if (snr_min >= snr_max) throw std::invalid_argument("channel config: snr_min must be < snr_max");
    if (bandwidth <= 0.0) throw std::invalid_argument("channel config: bandwidth must be > 0");
}

double ChannelConfig::noise_power() const { return noise_density + 10.0 * std::log10(bandwidth); }

double path_loss(double d, double shadow_db, const ChannelConfig& cfg) {
    if (d < cfg.ref_dist) d = cfg.ref_dist;  // documented clamp
    return cfg.ref_loss + 10.0 * cfg.path_loss_exponent * std::log10(d / cfg.ref_dist) + shadow_db;
}

double small_scale_gain(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double re = n(rng);
    const double im = n(rng);
    return re * re + im * im;
}

double compute_snr(int i, const ChannelState& state, const ChannelConfig& cfg) {
    if (i < 0 || i >= state.n) throw std::invalid_argument("compute_snr: channel index out of range");
    const double loss = path_loss(state.distance[i], state.shadow[i], cfg);
    const double g = state.fading_gain[i];
    double fading_db;
    if (g <= 0.0) {
        fading_db = 0.0;  // handled by the floor clamp below
    } else {
        fading_db = 10.0 * std::log10(g);
    }
    if (cfg.fading_sign_mode == FadingSignMode::verbatim) fading_db = -fading_db;
    double snr = cfg.tx_power - loss + fading_db - cfg.noise_power() + state.snr_offset[i];
    for (const auto& ev : state.events) {
        if (!ev.active_at(state.t)) continue;
        for (int c : ev.affected_channels)
            if (c == i) snr -= ev.snr_penalty;
    }
    if (g <= 0.0 || snr < cfg.snr_floor) snr = cfg.snr_floor;
    return snr;
}

Environment::Environment(const ChannelConfig& cfg, int n_experts, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    if (n_experts < 1) throw std::invalid_argument("init_channels: n_experts must be >= 1");
    state_.n = n_experts;
    state_.t = 0;
    state_.mean_snr.resize(n_experts);
    state_.distance.resize(n_experts);
    state_.shadow_std.resize(n_experts);
    state_.shadow.resize(n_experts);
    state_.fading_gain.resize(n_experts);
    state_.snr_offset.resize(n_experts);

    std::normal_distribution<double> snr_d(cfg_.mean_snr_mean, cfg_.mean_snr_std);
    std::normal_distribution<double> dist_d(cfg_.dist_mean, cfg_.dist_std);
    std::normal_distribution<double> shadow_d(cfg_.shadow_mean, cfg_.shadow_std);
    std::normal_distribution<double> unit(0.0, 1.0);

    const double fade_mean_db =
        cfg_.fading_sign_mode == FadingSignMode::verbatim ? -expected_fading_db() : expected_fading_db();
    for (int i = 0; i < n_experts; ++i) {
        state_.mean_snr[i] = cfg_.mean_snr_std == 0.0 ? cfg_.mean_snr_mean : snr_d(rng_);
        double d = cfg_.dist_std == 0.0 ? cfg_.dist_mean : dist_d(rng_);
        state_.distance[i] = std::max(d, cfg_.ref_dist);
        double ss = cfg_.shadow_std == 0.0 ? cfg_.shadow_mean : shadow_d(rng_);
        state_.shadow_std[i] = std::max(ss, 0.0);
        state_.shadow[i] = state_.shadow_std[i] * unit(rng_);
        state_.fading_gain[i] = small_scale_gain(rng_);
        // Eq-level link budget and the per-channel mean SNR double-specify the
        // long-run mean; reconcile with a constant offset so that
        // E[SNR_i] == mean_snr[i] (shadow mean 0, E[10log10 G] analytic).
        const double det = cfg_.tx_power -
                           path_loss(state_.distance[i], 0.0, cfg_) + fade_mean_db -
                           cfg_.noise_power();
        state_.snr_offset[i] = state_.mean_snr[i] - det;
    }
}

void Environment::step() {
    std::normal_distribution<double> unit(0.0, 1.0);
    const double rho = cfg_.correlation;
    const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (int i = 0; i < state_.n; ++i) {
        state_.shadow[i] = rho * state_.shadow[i] + mix * state_.shadow_std[i] * unit(rng_);
        state_.fading_gain[i] = small_scale_gain(rng_);
    }
    state_.t += 1;
}

std::vector<double> Environment::observe() const {
    std::vector<double> q(state_.n);
    for (int i = 0; i < state_.n; ++i) q[i] = compute_snr(i, state_, cfg_);
    return q;
}

void Environment::inject_burst(const InterferenceEvent& event) {
    if (event.duration < 1) throw std::invalid_argument("inject_burst: duration must be >= 1");
    if (event.snr_penalty < 0.0) throw std::invalid_argument("inject_burst: penalty must be >= 0");
    if (event.start_step < state_.t)
        throw std::invalid_argument("inject_burst: event window must not start in the past");
    state_.events.push_back(event);
}

std::string Environment::trace_header() { return "step,channel,shadow_db,fading_gain,snr_db,event_active"; }

void Environment::append_trace(std::string& out) const {
    char buf[160];
    for (int i = 0; i < state_.n; ++i) {
        int active = 0;
        for (const auto& ev : state_.events)
            if (ev.active_at(state_.t))
                for (int c : ev.affected_channels)
                    if (c == i) active = 1;
        std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%d\n", state_.t, i, state_.shadow[i],
                      state_.fading_gain[i], compute_snr(i, state_, cfg_), active);
        out += buf;
    }
}

}  // namespace m3::channel
