#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace m3::channel {

enum class FadingSignMode {
    corrected,  // fading gain added in the link budget (standard convention)
    verbatim,   // fading gain subtracted, exactly as printed in the source model
};

struct ChannelConfig {
    double mean_snr_mean = 25.0;    // dB
    double mean_snr_std = 5.0;      // dB
    double dist_mean = 275.0;       // m
    double dist_std = 75.0;         // m
    double shadow_mean = 8.0;       // dB
    double shadow_std = 1.3;        // dB
    double path_loss_exponent = 3.5;
    double ref_loss = 40.0;         // dB at d0
    double ref_dist = 1.0;          // m
    double tx_power = 23.0;         // dBm
    double noise_density = -174.0;  // dBm/Hz
    double bandwidth = 10e6;        // Hz
    double correlation = 0.9;       // shadowing AR(1) rho
    double snr_min = 5.0;           // dB (reward normalization bound)
    double snr_max = 25.0;          // dB
    double snr_floor = -50.0;       // dB clamp for zero fading gain
    FadingSignMode fading_sign_mode = FadingSignMode::corrected;

    void validate() const;
    double noise_power() const;  // N0 + 10log10(B), dBm
};

struct InterferenceEvent {
    int start_step = 0;
    int duration = 1;              // steps
    double snr_penalty = 0.0;      // dB, >= 0
    std::vector<int> affected_channels;

    bool active_at(int t) const { return t >= start_step && t < start_step + duration; }
};

struct ChannelState {
    int n = 0;
    int t = 0;
    std::vector<double> mean_snr;      // mu_SNR,i (dB)
    std::vector<double> distance;      // d_i (m), >= d0
    std::vector<double> shadow_std;    // sigma_shadow,i (dB), >= 0
    std::vector<double> shadow;        // X_sigma,i(t) (dB)
    std::vector<double> fading_gain;   // G_SS,i(t), linear
    std::vector<double> snr_offset;    // calibration so long-run mean SNR == mean_snr[i]
    std::vector<InterferenceEvent> events;
};

/// L = L0 + 10 n log10(d/d0) + shadow. Distances below d0 are clamped to d0.
double path_loss(double d, double shadow_db, const ChannelConfig& cfg);

/// Exponential(1) small-scale power gain, G = |h|^2 with h ~ CN(0,1).
double small_scale_gain(std::mt19937_64& rng);

/// Instantaneous SNR (dB) of channel i from the link budget, including the
/// calibration offset and any interference events active at state.t.
double compute_snr(int i, const ChannelState& state, const ChannelConfig& cfg);

class Environment {
public:
    Environment(const ChannelConfig& cfg, int n_experts, std::uint64_t seed);

    /// Advances shadowing (AR(1)) and redraws fading; t += 1.
    void step();

    /// Current per-channel SNR vector (dB), expert-index order. Pure read.
    std::vector<double> observe() const;

    void inject_burst(const InterferenceEvent& event);

    const ChannelState& state() const { return state_; }
    const ChannelConfig& config() const { return cfg_; }

    /// Appends one CSV row per channel for the current step.
    /// Header: step,channel,shadow_db,fading_gain,snr_db,event_active
    static std::string trace_header();
    void append_trace(std::string& out) const;

private:
    ChannelConfig cfg_;
    ChannelState state_;
    std::mt19937_64 rng_;
};

/// Mean of 10*log10(G) for G ~ Exp(1): -10*gamma/ln(10).
double expected_fading_db();

}  // namespace m3::channel
