#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "m3/reward/reward.hpp"

using namespace m3::reward;

namespace {

std::vector<std::array<double, 5>> default_competence() {
    // dinov2, co-detr, sam, pix2struct, deplot, vary, biomedclip
    // columns: general, detection-segmentation, document-chart, ocr-text, medical
    return {
        {0.95, 0.30, 0.30, 0.30, 0.30},
        {0.30, 0.95, 0.10, 0.10, 0.10},
        {0.30, 0.95, 0.10, 0.10, 0.10},
        {0.10, 0.10, 0.95, 0.30, 0.10},
        {0.10, 0.10, 0.95, 0.10, 0.10},
        {0.10, 0.10, 0.30, 0.95, 0.10},
        {0.10, 0.10, 0.10, 0.10, 0.95},
    };
}

// Independent brute-force recomputation of R1/R2/R3 straight from the
// definitions, sharing no code with the library implementation.
struct Brute {
    double r1, r2, r3;
};

Brute brute_force(const Eigen::VectorXd& w, const TaskExpertSets& sets, const RewardConfig& cfg) {
    Brute out{0.0, 1.0, 0.0};
    if (!sets.core.empty()) {
        double hits = 0;
        for (int i : sets.core)
            if (w[i] >= cfg.theta_act) hits += 1;
        out.r1 = hits / static_cast<double>(sets.core.size());
    }
    if (!sets.irrelevant.empty()) {
        double bad = 0;
        for (int i : sets.irrelevant)
            if (w[i] >= cfg.theta_sup) bad += 1;
        out.r2 = 1.0 - bad / static_cast<double>(sets.irrelevant.size());
    }
    const double total = w.sum();
    if (total > 0.0) {
        double core_mass = 0.0;
        for (int i : sets.core) core_mass += w[i];
        double h = 0.0;
        for (int i = 0; i < w.size(); ++i) {
            const double p = w[i] / total;
            if (p > 0.0) h -= p * std::log2(p);
        }
        const double hnorm = w.size() > 1 ? h / std::log2(static_cast<double>(w.size())) : 0.0;
        out.r3 = (core_mass / total) * (1.0 - hnorm);
    }
    return out;
}

}  // namespace

TEST_CASE("derive_task_sets applies the 0.9 / 0.1 thresholds") {
    auto comp = default_competence();
    // medical column: only biomedclip (index 6) is core; all others <= 0.3,
    // and everything at exactly 0.1 lands in the irrelevant set.
    TaskExpertSets sets = derive_task_sets(comp, 4);
    CHECK(sets.core == std::set<int>{6});
    CHECK(sets.irrelevant == std::set<int>{1, 2, 3, 4, 5});
    // detection column has two core experts
    TaskExpertSets det = derive_task_sets(comp, 1);
    CHECK(det.core == std::set<int>{1, 2});
    CHECK_THROWS(derive_task_sets(comp, 5));
}

TEST_CASE("R1 worked example: one of two core experts activated gives 0.5") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {0, 1};
    Eigen::VectorXd w(4);
    w << 0.5, 0.1, 0.2, 0.2;  // expert 0 above theta_act=0.2, expert 1 below
    auto r = llm_reward(w, sets, std::vector<double>(4, 0.0), cfg);
    CHECK(r.r1 == doctest::Approx(0.5));
}

TEST_CASE("R2 is 1 when every irrelevant expert stays under theta_sup") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {0};
    sets.irrelevant = {2, 3};
    Eigen::VectorXd w(4);
    w << 0.8, 0.1, 0.05, 0.05;
    auto r = llm_reward(w, sets, std::vector<double>(4, 0.0), cfg);
    CHECK(r.r2 == doctest::Approx(1.0));
    w[2] = 0.2;  // violation
    r = llm_reward(w, sets, std::vector<double>(4, 0.0), cfg);
    CHECK(r.r2 == doctest::Approx(0.5));
}

TEST_CASE("R3 extremes: one-hot core weight gives 1, uniform gives 0") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {1};
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(5);
    onehot[1] = 1.0;
    CHECK(llm_reward(onehot, sets, std::vector<double>(5, 0.0), cfg).r3 == doctest::Approx(1.0));
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(5, 0.2);
    CHECK(llm_reward(uniform, sets, std::vector<double>(5, 0.0), cfg).r3 == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero-mass weights flag zero_mass and score R3 = 0") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {0};
    Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
    auto r = llm_reward(w, sets, std::vector<double>(3, 0.5), cfg);
    CHECK(r.zero_mass);
    CHECK(r.r3 == doctest::Approx(0.0));
}

TEST_CASE("R4 renormalizes the top-3 weights against oracle quality") {
    RewardConfig cfg;
    TaskExpertSets sets;
    Eigen::VectorXd w(4);
    w << 0.4, 0.3, 0.2, 0.1;  // top-3: 0,1,2 with renormalized 4/9, 3/9, 2/9
    std::vector<double> q = {0.9, 0.6, 0.3, 1.0};
    auto r = llm_reward(w, sets, q, cfg);
    CHECK(r.r4 == doctest::Approx((0.4 * 0.9 + 0.3 * 0.6 + 0.2 * 0.3) / 0.9).epsilon(1e-12));
}

TEST_CASE("R_LLM mixes the components with alpha = (0.4, 0.3, 0.2, 0.1)") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {0};
    sets.irrelevant = {2};
    Eigen::VectorXd w(3);
    w << 0.7, 0.25, 0.05;
    std::vector<double> q = {0.8, 0.5, 0.1};
    auto r = llm_reward(w, sets, q, cfg);
    CHECK(r.r_llm == doctest::Approx(0.4 * r.r1 + 0.3 * r.r2 + 0.2 * r.r3 + 0.1 * r.r4).epsilon(1e-12));
}

TEST_CASE("1000 random weight vectors: bounds and brute-force R1/R2/R3 agreement") {
    RewardConfig cfg;
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto comp = default_competence();
    for (int k = 0; k < 1000; ++k) {
        const int cat = static_cast<int>(rng() % 5);
        TaskExpertSets sets = derive_task_sets(comp, cat);
        Eigen::VectorXd w(7);
        for (int i = 0; i < 7; ++i) w[i] = u(rng);
        if (k % 97 == 0) w.setZero();  // exercise the zero-mass branch too
        std::vector<double> q(7);
        for (auto& x : q) x = u(rng);
        auto r = llm_reward(w, sets, q, cfg);
        for (double v : {r.r1, r.r2, r.r3, r.r4, r.r_llm}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        Brute b = brute_force(w, sets, cfg);
        CHECK(r.r1 == doctest::Approx(b.r1).epsilon(1e-12));
        CHECK(r.r2 == doctest::Approx(b.r2).epsilon(1e-12));
        CHECK(std::abs(r.r3 - b.r3) < 1e-12);
    }
}

TEST_CASE("R_LLM is invariant to permuting non-core, non-irrelevant experts") {
    RewardConfig cfg;
    TaskExpertSets sets;
    sets.core = {0};
    Eigen::VectorXd w(4);
    w << 0.6, 0.15, 0.2, 0.05;
    std::vector<double> q(4, 0.5);
    auto a = llm_reward(w, sets, q, cfg);
    std::swap(w[1], w[2]);
    auto b = llm_reward(w, sets, q, cfg);
    CHECK(a.r_llm == doctest::Approx(b.r_llm).epsilon(1e-12));
}

TEST_CASE("Q-bar worked example: 15 dB normalizes to 0.5 on [5, 25]") {
    RewardConfig cfg;
    auto r = channel_reward({0}, {1.0}, {15.0}, cfg);
    CHECK(r.q_bar == doctest::Approx(0.5));
}

TEST_CASE("stability is 1 when all active SNRs are equal") {
    RewardConfig cfg;
    auto r = channel_reward({0, 1, 2}, {0.3, 0.3, 0.4}, {18.0, 18.0, 18.0}, cfg);
    CHECK(r.stability == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("load entropy is 1 for uniform weights over two channels") {
    RewardConfig cfg;
    auto r = channel_reward({0, 1}, {0.5, 0.5}, {20.0, 10.0}, cfg);
    CHECK(r.load_entropy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single active channel scores load entropy 1 by convention") {
    RewardConfig cfg;
    auto r = channel_reward({2}, {1.0}, {10.0, 12.0, 14.0}, cfg);
    CHECK(r.load_entropy == doctest::Approx(1.0));
}

TEST_CASE("spectral efficiency: 1 at snr_max, log2(11)/log2(1+10^2.5) at 10 dB") {
    RewardConfig cfg;
    CHECK(channel_reward({0}, {1.0}, {25.0}, cfg).spectral_eff == doctest::Approx(1.0).epsilon(1e-12));
    const double ref = std::log2(11.0) / std::log2(1.0 + std::pow(10.0, 2.5));
    CHECK(ref == doctest::Approx(0.416).epsilon(2e-3));
    CHECK(channel_reward({0}, {1.0}, {10.0}, cfg).spectral_eff == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("channel reward mixes Q,S,D,E with weights (0.4, 0.3, 0.2, 0.1)") {
    RewardConfig cfg;
    auto r = channel_reward({0, 1}, {0.7, 0.3}, {22.0, 9.0}, cfg);
    CHECK(r.r_channel ==
          doctest::Approx(0.4 * r.q_bar + 0.3 * r.stability + 0.2 * r.load_entropy + 0.1 * r.spectral_eff)
              .epsilon(1e-12));
    for (double v : {r.q_bar, r.stability, r.load_entropy, r.spectral_eff, r.r_channel}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("empty active set flags no_active with zero reward") {
    RewardConfig cfg;
    auto r = channel_reward({}, {}, {15.0}, cfg);
    CHECK(r.no_active);
    CHECK(r.r_channel == doctest::Approx(0.0));
}

TEST_CASE("channel reward validates its inputs") {
    RewardConfig cfg;
    CHECK_THROWS(channel_reward({0, 1}, {1.0}, {15.0, 15.0}, cfg));  // size mismatch
    CHECK_THROWS(channel_reward({5}, {1.0}, {15.0}, cfg));           // index out of range
    RewardConfig bad = cfg;
    bad.snr_min = 30.0;
    CHECK_THROWS(channel_reward({0}, {1.0}, {15.0}, bad));
}

TEST_CASE("final reward worked example: (0.73, 0.57) -> 0.65") {
    RewardConfig cfg;
    CHECK(final_reward(0.73, 0.57, cfg) == doctest::Approx(0.65));
}

TEST_CASE("confidence tracker features have length 9 and track the window") {
    ConfidenceTracker tr(10);
    for (int i = 0; i < 25; ++i) tr.push(0.5, 0.7, 15.0, 2.0);
    Eigen::VectorXd f = tr.features(0.5);
    REQUIRE(f.size() == kConfidenceDim);
    CHECK(f[0] == doctest::Approx(0.5));   // llm mean
    CHECK(f[1] == doctest::Approx(0.0));   // llm std (constant stream)
    CHECK(f[2] == doctest::Approx(0.0));   // llm slope
    CHECK(f[3] == doctest::Approx(0.7));   // channel mean
    CHECK(f[6] == doctest::Approx(15.0));  // snr mean
    CHECK(f[8] == doctest::Approx(0.5));   // progress
    tr.reset();
    CHECK(tr.features(0.0).norm() == doctest::Approx(0.0));
}

TEST_CASE("confidence tracker slope is positive on an increasing stream") {
    ConfidenceTracker tr(10);
    for (int i = 0; i < 10; ++i) tr.push(0.1 * i, 1.0 - 0.05 * i, 10.0, 1.0);
    Eigen::VectorXd f = tr.features(1.0);
    CHECK(f[2] == doctest::Approx(0.1).epsilon(1e-9));    // llm slope
    CHECK(f[5] == doctest::Approx(-0.05).epsilon(1e-9));  // channel slope
}

TEST_CASE("meta net reliability is a softmax pair") {
    MetaAnalysis meta(7);
    ConfidenceTracker tr(10);
    tr.push(0.4, 0.6, 12.0, 1.0);
    auto [a, b] = meta.reliability(tr.features(0.1));
    CHECK(a >= 0.0);
    CHECK(b >= 0.0);
    CHECK(a + b == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("meta net with zeroed parameters outputs (0.5, 0.5)") {
    MetaAnalysis meta(7);
    for (auto& [name, tb] : meta.params().all())
        for (auto& v : tb.values) v = 0.0;
    auto [a, b] = meta.reliability(Eigen::VectorXd::Ones(kConfidenceDim));
    CHECK(a == doctest::Approx(0.5));
    CHECK(b == doctest::Approx(0.5));
}

TEST_CASE("meta training drives reliability toward the lower-variance stream") {
    MetaAnalysis meta(11);
    Eigen::VectorXd f = Eigen::VectorXd::Constant(kConfidenceDim, 0.3);
    for (int k = 0; k < 300; ++k) meta.train_step(f, 0.01, 0.5, 1e-2);
    auto [llm_w, chan_w] = meta.reliability(f);
    CHECK(llm_w > 0.9);
    CHECK(llm_w + chan_w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("meta parameters are isolated from other components") {
    MetaAnalysis meta(13);
    // only meta.* names exist in its parameter set
    for (const auto& [name, tb] : meta.params().all()) CHECK(name.rfind("meta.", 0) == 0);
}
