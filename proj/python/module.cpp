#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "m3/agent/agent.hpp"
#include "m3/channel/env.hpp"
#include "m3/harness/harness.hpp"
#include "m3/mesh/mesh.hpp"
#include "m3/reward/reward.hpp"
#include "m3/router/router.hpp"

namespace py = pybind11;
using namespace m3;

PYBIND11_MODULE(m3py, m) {
    m.doc() = "semantic/network-aware expert routing simulator";
    py::module_::import("numpy");  // eager init; the lazy numpy API lookup is unreliable

    py::class_<channel::ChannelConfig>(m, "ChannelConfig")
        .def(py::init<>())
        .def_readwrite("mean_snr_mean", &channel::ChannelConfig::mean_snr_mean)
        .def_readwrite("mean_snr_std", &channel::ChannelConfig::mean_snr_std)
        .def_readwrite("dist_mean", &channel::ChannelConfig::dist_mean)
        .def_readwrite("dist_std", &channel::ChannelConfig::dist_std)
        .def_readwrite("correlation", &channel::ChannelConfig::correlation)
        .def_readwrite("snr_min", &channel::ChannelConfig::snr_min)
        .def_readwrite("snr_max", &channel::ChannelConfig::snr_max);

    py::class_<channel::Environment>(m, "Environment")
        .def(py::init<const channel::ChannelConfig&, int, std::uint64_t>(), py::arg("config"),
             py::arg("n_experts"), py::arg("seed"))
        .def("step", &channel::Environment::step)
        .def("observe", &channel::Environment::observe);

    m.def("path_loss", &channel::path_loss, py::arg("d"), py::arg("shadow_db"), py::arg("config"));
    m.def("extract_tag",
          [](const std::string& text) { return router::Lexicon::defaults().extract_tag(text); });
    m.def("embed_text", [](const std::string& text) { return router::embed_text(text); });
    m.def("category_names", [] {
        const auto& names = router::category_names();
        return std::vector<std::string>(names.begin(), names.end());
    });

    m.def("fuse_weights",
          [](const Eigen::VectorXd& we, const Eigen::VectorXd& wc, const std::vector<int>& mask,
             double eps) {
              auto r = agent::fuse_weights(we, wc, mask, eps);
              return py::make_tuple(r.w_final, r.degenerate);
          },
          py::arg("w_expert"), py::arg("w_channel"), py::arg("mask"), py::arg("fuse_eps") = 1e-6);

    m.def("llm_reward",
          [](const Eigen::VectorXd& weights, const std::vector<int>& core, const std::vector<int>& irr,
             const std::vector<double>& quality) {
              reward::TaskExpertSets sets;
              sets.core.insert(core.begin(), core.end());
              sets.irrelevant.insert(irr.begin(), irr.end());
              reward::RewardConfig cfg;
              auto r = reward::llm_reward(weights, sets, quality, cfg);
              return py::make_tuple(r.r1, r.r2, r.r3, r.r4, r.r_llm);
          });
    m.def("channel_reward", [](const std::vector<int>& active, const std::vector<double>& weights,
                               const std::vector<double>& snr_db) {
        reward::RewardConfig cfg;
        auto r = reward::channel_reward(active, weights, snr_db, cfg);
        return py::make_tuple(r.q_bar, r.stability, r.load_entropy, r.spectral_eff, r.r_channel);
    });

    m.def("run_scenario",
          [](const std::string& config_json, const std::string& variant, const std::string& out_dir,
             bool train) {
              auto cfg = config_json.empty() ? harness::ScenarioConfig{}
                                             : harness::ScenarioConfig::from_json(config_json);
              harness::RunOptions opts;
              opts.variant = harness::variant_from_name(variant);
              opts.out_dir = out_dir;
              opts.train = train;
              auto result = harness::run(cfg, opts);
              py::dict d;
              d["trace_path"] = result.trace_path;
              d["metrics_path"] = result.metrics_path;
              d["checkpoint_path"] = result.checkpoint_path;
              d["mean_r_final"] = result.metrics.mean_r_final;
              d["llm_quality"] = result.metrics.llm_quality;
              d["channel_quality"] = result.metrics.channel_quality;
              return d;
          },
          py::arg("config_json") = "", py::arg("variant") = "full", py::arg("out_dir") = "runs/py",
          py::arg("train") = true);
    m.def("default_config_json", [] { return harness::ScenarioConfig{}.to_json(); });
}
