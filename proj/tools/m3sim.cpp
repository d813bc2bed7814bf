#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "m3/harness/harness.hpp"

namespace {

using namespace m3;

harness::ScenarioConfig load_config(const std::string& path, std::uint64_t seed_override, bool have_seed) {
    harness::ScenarioConfig cfg =
        path.empty() ? harness::ScenarioConfig{} : harness::ScenarioConfig::from_json_file(path);
    if (have_seed) cfg.seed = seed_override;
    cfg.agent.n_experts = cfg.n_experts;
    cfg.reward.snr_min = cfg.channel.snr_min;
    cfg.reward.snr_max = cfg.channel.snr_max;
    return cfg;
}

int run_variant(const harness::ScenarioConfig& cfg, harness::Variant variant, const std::string& out_dir,
                bool train, const std::string& checkpoint, bool bursts, bool channel_trace) {
    harness::RunOptions opts;
    opts.variant = variant;
    opts.out_dir = out_dir.empty() ? ("runs/" + harness::variant_name(variant) + "_seed" +
                                      std::to_string(cfg.seed))
                                   : out_dir;
    opts.train = train;
    opts.load_checkpoint = checkpoint;
    opts.inject_bursts = bursts;
    opts.write_channel_trace = channel_trace;
    const auto result = harness::run(cfg, opts);
    std::cout << "variant: " << harness::variant_name(variant) << "\n"
              << "trace: " << result.trace_path << "\n"
              << "metrics: " << result.metrics_path << "\n";
    if (!result.checkpoint_path.empty()) std::cout << "checkpoint: " << result.checkpoint_path << "\n";
    std::cout << result.metrics.to_csv();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"m3sim: semantic/network-aware expert routing simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint;
    std::uint64_t seed = 0;
    bool channel_trace = false;
    app.add_option("--config", config_path, "scenario JSON file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the scenario seed");
    app.add_option("--out", out_dir, "output directory (default runs/<variant>_seed<seed>)");
    app.add_flag("--channel-trace", channel_trace, "also write the per-channel SNR trace");

    auto* train_cmd = app.add_subcommand("train", "train the full system");
    auto* baseline_cmd = app.add_subcommand("baseline", "run a baseline policy");
    std::string baseline_kind;
    baseline_cmd->add_option("kind", baseline_kind, "random | semantic_only | network_first")->required();
    auto* ablate_cmd = app.add_subcommand("ablate", "train an ablated system");
    std::string ablate_kind;
    ablate_cmd->add_option("kind", ablate_kind, "no_asem | no_cesac | no_mcp")->required();

    auto* burst_cmd = app.add_subcommand("burst-test", "evaluate a checkpoint under burst interference");
    burst_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint to evaluate")
        ->required()
        ->check(CLI::ExistingFile);
    std::string burst_variant = "full";
    int burst_start = 200, burst_duration = 40;
    double burst_penalty = 15.0;
    int burst_episodes = 150, burst_window = 20;
    burst_cmd->add_option("--variant", burst_variant, "variant the checkpoint was trained as");
    burst_cmd->add_option("--start", burst_start, "burst start (global step)");
    burst_cmd->add_option("--duration", burst_duration, "burst duration (steps)");
    burst_cmd->add_option("--penalty", burst_penalty, "SNR penalty (dB)");
    burst_cmd->add_option("--episodes", burst_episodes, "evaluation episodes");
    burst_cmd->add_option("--window", burst_window, "pre-event moving-average window (steps)");

    auto* metrics_cmd = app.add_subcommand("metrics", "recompute metrics from a trace");
    std::string trace_path;
    int eval_episodes = 100;
    metrics_cmd->add_option("trace", trace_path, "trace.csv path")->required()->check(CLI::ExistingFile);
    metrics_cmd->add_option("--eval-episodes", eval_episodes, "trailing window (episodes)");

    auto* replay_cmd = app.add_subcommand("replay", "print per-episode reward summaries from a trace");
    std::string replay_path;
    replay_cmd->add_option("trace", replay_path, "trace.csv path")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    const bool have_seed = app.count("--seed") > 0;

    try {
        if (*train_cmd) {
            auto cfg = load_config(config_path, seed, have_seed);
            return run_variant(cfg, harness::Variant::full, out_dir, true, "", false, channel_trace);
        }
        if (*baseline_cmd) {
            auto cfg = load_config(config_path, seed, have_seed);
            const auto v = harness::variant_from_name(baseline_kind == "random" ? "random" : baseline_kind);
            if (v != harness::Variant::random_baseline && v != harness::Variant::semantic_only &&
                v != harness::Variant::network_first)
                throw std::invalid_argument("baseline kind must be random, semantic_only, or network_first");
            return run_variant(cfg, v, out_dir, harness::variant_trains(v), "", false, channel_trace);
        }
        if (*ablate_cmd) {
            auto cfg = load_config(config_path, seed, have_seed);
            const auto v = harness::variant_from_name(ablate_kind);
            if (v != harness::Variant::no_asem && v != harness::Variant::no_cesac &&
                v != harness::Variant::no_mcp)
                throw std::invalid_argument("ablate kind must be no_asem, no_cesac, or no_mcp");
            return run_variant(cfg, v, out_dir, true, "", false, channel_trace);
        }
        if (*burst_cmd) {
            auto cfg = load_config(config_path, seed, have_seed);
            cfg.episodes = burst_episodes;
            channel::InterferenceEvent ev;
            ev.start_step = burst_start;
            ev.duration = burst_duration;
            ev.snr_penalty = burst_penalty;
            for (int i = 0; i < cfg.n_experts; ++i) ev.affected_channels.push_back(i);
            cfg.bursts = {ev};
            harness::RunOptions opts;
            opts.variant = harness::variant_from_name(burst_variant);
            opts.out_dir = out_dir.empty() ? "runs/burst_" + burst_variant + "_seed" + std::to_string(cfg.seed)
                                           : out_dir;
            opts.train = false;
            opts.load_checkpoint = checkpoint;
            opts.inject_bursts = true;
            opts.write_channel_trace = channel_trace;
            const auto result = harness::run(cfg, opts);
            const auto report = harness::burst_report_from_trace(result.trace_path, ev, burst_window);
            std::cout << report.to_json() << "\n";
            return 0;
        }
        if (*metrics_cmd) {
            std::cout << harness::compute_metrics_from_trace(trace_path, eval_episodes).to_csv();
            return 0;
        }
        if (*replay_cmd) {
            const auto row = harness::compute_metrics_from_trace(replay_path, 1 << 30);
            std::cout << "episodes replayed; whole-trace averages:\n" << row.to_csv();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
