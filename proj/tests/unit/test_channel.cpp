#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "m3/channel/env.hpp"

using namespace m3::channel;

namespace {

ChannelConfig degenerate_config() {
    ChannelConfig cfg;
    cfg.mean_snr_std = 0.0;
    cfg.dist_std = 0.0;
    cfg.shadow_mean = 0.0;  // per-channel sigma draws collapse to zero
    cfg.shadow_std = 0.0;
    return cfg;
}

ChannelState manual_state(int n) {
    ChannelState s;
    s.n = n;
    s.t = 0;
    s.mean_snr.assign(n, 0.0);
    s.distance.assign(n, 100.0);
    s.shadow_std.assign(n, 0.0);
    s.shadow.assign(n, 0.0);
    s.fading_gain.assign(n, 1.0);
    s.snr_offset.assign(n, 0.0);
    return s;
}

}  // namespace

TEST_CASE("path loss worked examples: 40 dB at d0, 110 dB at 100 m, 145 dB at 1 km") {
    ChannelConfig cfg;  // n = 3.5, L0 = 40, d0 = 1
    CHECK(path_loss(1.0, 0.0, cfg) == doctest::Approx(40.0));
    CHECK(path_loss(100.0, 0.0, cfg) == doctest::Approx(110.0));
    CHECK(path_loss(1000.0, 0.0, cfg) == doctest::Approx(145.0));
}

TEST_CASE("path loss clamps distances below the reference distance") {
    ChannelConfig cfg;
    CHECK(path_loss(0.1, 0.0, cfg) == doctest::Approx(path_loss(1.0, 0.0, cfg)));
    CHECK(path_loss(0.0, 2.0, cfg) == doctest::Approx(42.0));
}

TEST_CASE("noise power is N0 + 10log10(B) = -104 dBm at 10 MHz") {
    ChannelConfig cfg;
    CHECK(cfg.noise_power() == doctest::Approx(-104.0));
}

TEST_CASE("link budget worked example: 23 dBm - 110 dB loss, unit fading -> 17 dB") {
    ChannelConfig cfg;
    ChannelState s = manual_state(1);  // distance 100 m -> L = 110 dB, G = 1
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(17.0));
}

TEST_CASE("fading gain below unity subtracts in dB: G=0.1 -> -10 dB") {
    ChannelConfig cfg;
    ChannelState s = manual_state(1);
    s.fading_gain[0] = 0.1;
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(7.0));
}

TEST_CASE("verbatim fading sign mode flips the fading contribution") {
    ChannelConfig cfg;
    cfg.fading_sign_mode = FadingSignMode::verbatim;
    ChannelState s = manual_state(1);
    s.fading_gain[0] = 0.1;
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(27.0));
    // G = 1 is the fixed point: both conventions agree.
    s.fading_gain[0] = 1.0;
    ChannelConfig corrected;
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(compute_snr(0, s, corrected)));
}

TEST_CASE("zero fading gain hits the SNR floor") {
    ChannelConfig cfg;
    ChannelState s = manual_state(1);
    s.fading_gain[0] = 0.0;
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(cfg.snr_floor));
}

TEST_CASE("calibration offset shifts SNR one-for-one") {
    ChannelConfig cfg;
    ChannelState s = manual_state(1);
    s.snr_offset[0] = 4.5;
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(21.5));
}

TEST_CASE("degenerate config produces identical channels") {
    Environment env(degenerate_config(), 4, 7);
    const auto& st = env.state();
    for (int i = 1; i < 4; ++i) {
        CHECK(st.mean_snr[i] == doctest::Approx(st.mean_snr[0]));
        CHECK(st.distance[i] == doctest::Approx(st.distance[0]));
        CHECK(st.shadow_std[i] == doctest::Approx(0.0));
        CHECK(st.shadow[i] == doctest::Approx(0.0));
    }
}

TEST_CASE("long-run mean SNR matches the configured per-channel mean within 2%") {
    ChannelConfig cfg;
    cfg.mean_snr_mean = 15.0;
    Environment env(cfg, 3, 2024);
    const int steps = 100000;
    std::vector<double> sum(3, 0.0);
    for (int t = 0; t < steps; ++t) {
        env.step();
        auto q = env.observe();
        for (int i = 0; i < 3; ++i) sum[i] += q[i];
    }
    for (int i = 0; i < 3; ++i) {
        const double mean = sum[i] / steps;
        const double target = env.state().mean_snr[i];
        CHECK(std::abs(mean - target) <= std::max(0.02 * std::abs(target), 0.15));
    }
}

TEST_CASE("shadowing with rho=1 is frozen") {
    ChannelConfig cfg;
    cfg.correlation = 1.0;
    Environment env(cfg, 2, 5);
    const double s0 = env.state().shadow[0];
    for (int t = 0; t < 50; ++t) env.step();
    CHECK(env.state().shadow[0] == doctest::Approx(s0));
}

TEST_CASE("shadowing with rho=0 is serially uncorrelated") {
    ChannelConfig cfg;
    cfg.correlation = 0.0;
    Environment env(cfg, 1, 31);
    std::vector<double> xs;
    for (int t = 0; t < 20000; ++t) {
        env.step();
        xs.push_back(env.state().shadow[0]);
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) num += (xs[i] - mean) * (xs[i + 1] - mean);
    for (double x : xs) den += (x - mean) * (x - mean);
    CHECK(std::abs(num / den) < 0.05);
}

TEST_CASE("AR(1) shadowing: stationary variance and lag-1 autocorrelation at rho=0.9") {
    ChannelConfig cfg;
    cfg.correlation = 0.9;
    cfg.shadow_mean = 1.3;  // per-channel sigma drawn degenerate below
    cfg.shadow_std = 0.0;   // all channels get sigma = 1.3 exactly
    Environment env(cfg, 1, 77);
    REQUIRE(env.state().shadow_std[0] == doctest::Approx(1.3));
    std::vector<double> xs;
    xs.reserve(100000);
    for (int t = 0; t < 100000; ++t) {
        env.step();
        xs.push_back(env.state().shadow[0]);
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    CHECK(var == doctest::Approx(1.69).epsilon(0.05));
    double num = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) num += (xs[i] - mean) * (xs[i + 1] - mean);
    const double rho1 = num / (var * static_cast<double>(xs.size() - 1));
    CHECK(rho1 == doctest::Approx(0.9).epsilon(0.056));
}

TEST_CASE("rayleigh power gain: unit mean and exponential distribution") {
    std::mt19937_64 rng(13);
    const int n = 200000;
    std::vector<double> g(n);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        g[i] = small_scale_gain(rng);
        mean += g[i];
    }
    mean /= n;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
    // Kolmogorov-Smirnov distance against Exp(1).
    std::sort(g.begin(), g.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double cdf = 1.0 - std::exp(-g[i]);
        ks = std::max(ks, std::max(std::abs(cdf - static_cast<double>(i) / n),
                                   std::abs(cdf - static_cast<double>(i + 1) / n)));
    }
    CHECK(ks < 0.01);
}

TEST_CASE("expected fading dB constant matches -10*gamma/ln(10)") {
    const double ref = -10.0 * 0.57721566490153286 / std::log(10.0);
    CHECK(expected_fading_db() == doctest::Approx(ref).epsilon(1e-12));
    CHECK(expected_fading_db() == doctest::Approx(-2.5068).epsilon(1e-4));
}

TEST_CASE("observe is pure: repeated calls do not advance state") {
    Environment env(ChannelConfig{}, 3, 9);
    auto a = env.observe();
    auto b = env.observe();
    CHECK(a == b);
    CHECK(env.state().t == 0);
}

TEST_CASE("burst subtracts the penalty exactly inside its window") {
    ChannelConfig cfg;
    ChannelState s = manual_state(2);
    InterferenceEvent ev;
    ev.start_step = 3;
    ev.duration = 2;
    ev.snr_penalty = 20.0;
    ev.affected_channels = {0};
    s.events.push_back(ev);
    for (int t = 0; t < 8; ++t) {
        s.t = t;
        const double snr0 = compute_snr(0, s, cfg);
        const double snr1 = compute_snr(1, s, cfg);
        const bool active = t >= 3 && t < 5;
        CHECK(snr0 == doctest::Approx(active ? -3.0 : 17.0));
        CHECK(snr1 == doctest::Approx(17.0));  // unaffected channel
    }
}

TEST_CASE("zero-penalty burst is a no-op; empty affected set touches nothing") {
    ChannelConfig cfg;
    ChannelState s = manual_state(1);
    InterferenceEvent ev;
    ev.start_step = 0;
    ev.duration = 5;
    ev.snr_penalty = 0.0;
    ev.affected_channels = {0};
    s.events.push_back(ev);
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(17.0));
    s.events[0].snr_penalty = 20.0;
    s.events[0].affected_channels.clear();
    CHECK(compute_snr(0, s, cfg) == doctest::Approx(17.0));
}

TEST_CASE("environment evolution is bit-reproducible per seed") {
    ChannelConfig cfg;
    Environment a(cfg, 5, 321), b(cfg, 5, 321);
    for (int t = 0; t < 200; ++t) {
        a.step();
        b.step();
    }
    auto qa = a.observe(), qb = b.observe();
    for (int i = 0; i < 5; ++i) CHECK(qa[i] == qb[i]);
    Environment c(cfg, 5, 322);
    for (int t = 0; t < 200; ++t) c.step();
    bool any_diff = false;
    auto qc = c.observe();
    for (int i = 0; i < 5; ++i) any_diff = any_diff || qc[i] != qa[i];
    CHECK(any_diff);
}

TEST_CASE("config validation rejects inconsistent settings") {
    ChannelConfig cfg;
    cfg.snr_min = 30.0;  // above snr_max
    CHECK_THROWS(cfg.validate());
    ChannelConfig cfg2;
    cfg2.correlation = 1.5;
    CHECK_THROWS(cfg2.validate());
    ChannelConfig cfg3;
    cfg3.ref_dist = 0.0;
    CHECK_THROWS(cfg3.validate());
}

TEST_CASE("inject_burst validates its arguments") {
    Environment env(ChannelConfig{}, 2, 1);
    InterferenceEvent bad;
    bad.duration = 0;
    CHECK_THROWS(env.inject_burst(bad));
    bad.duration = 1;
    bad.snr_penalty = -1.0;
    CHECK_THROWS(env.inject_burst(bad));
}
