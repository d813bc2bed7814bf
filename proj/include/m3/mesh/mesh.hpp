#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m3/router/router.hpp"

namespace m3::mesh {

constexpr int kSchemaVersion = 1;

struct DeviceProfile {
    std::string compute_class = "edge";
    std::int64_t max_payload = 1 << 20;  // bytes
};

struct CapabilityDescriptor {
    std::string expert_id;
    std::string display_name;
    std::vector<std::string> task_categories;  // at least one
    std::string capability_text;
    Eigen::VectorXd descriptor_embedding;      // length 768
    DeviceProfile device_profile;

    void validate() const;
};

struct ExpertProfile {
    std::string expert_id;
    std::array<double, router::kNumCategories> competence{};  // each in [0,1]

    void validate() const;
    double competence_for(const std::string& category) const;
};

struct ContextEnvelope {
    std::string task_tag;
    std::string instruction_digest;
    std::string image_feature_ref;
    std::vector<std::string> requested_experts;
    std::vector<double> channel_snapshot;  // SNR dB, length N
    int timestamp = 0;

    /// Canonical JSON: sorted keys, UTF-8, schema version field.
    std::string serialize() const;
    static ContextEnvelope parse(const std::string& json_text);
};

struct InvocationRequest {
    std::string expert_id;
    ContextEnvelope envelope;
    double routing_weight = 0.0;
};

struct InvocationResponse {
    std::string expert_id;
    double quality = 0.0;       // [0,1]
    std::string payload_digest;
    double link_success = 0.0;  // [0,1]
    int latency_steps = 1;
    bool error = false;
};

struct LinkModel {
    double steepness = 1.0;     // k, per dB
    double snr_threshold = 10.0;  // dB midpoint

    double success(double snr_db) const;
};

/// Pluggable transport; the default loopback evaluates the synthetic expert
/// in-process. A socket transport can be slotted in without touching routing.
class Transport {
public:
    virtual ~Transport() = default;
    virtual InvocationResponse deliver(const InvocationRequest& request, double channel_snr,
                                       const ExpertProfile& profile, const LinkModel& link) = 0;
};

class LoopbackTransport : public Transport {
public:
    InvocationResponse deliver(const InvocationRequest& request, double channel_snr,
                               const ExpertProfile& profile, const LinkModel& link) override;
};

class Registry {
public:
    void register_expert(const CapabilityDescriptor& descriptor, const ExpertProfile& profile);
    bool has(const std::string& expert_id) const;
    const CapabilityDescriptor& descriptor(const std::string& expert_id) const;
    const ExpertProfile& profile(const std::string& expert_id) const;
    std::size_t size() const { return order_.size(); }
    const std::vector<std::string>& order() const { return order_; }  // registration order
    int index_of(const std::string& expert_id) const;

    std::vector<router::IndexEntry> descriptor_index() const;
    std::map<std::string, std::vector<std::string>> category_map() const;

    /// Registry snapshot in the same canonical JSON format as envelopes.
    std::string snapshot() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, CapabilityDescriptor> descriptors_;
    std::map<std::string, ExpertProfile> profiles_;
};

ContextEnvelope build_context(const router::TaskInstance& task, const std::string& resolved_tag,
                              const std::vector<double>& channel_obs,
                              const std::vector<std::string>& requested, int timestamp);

InvocationResponse invoke_expert(const Registry& registry, Transport& transport,
                                 const InvocationRequest& request, double channel_snr,
                                 const LinkModel& link);

struct AggregateResult {
    double aggregate_quality = 0.0;
    std::vector<std::string> contributing;
    bool no_experts = false;
};

/// Convex combination sum_i w[i] * quality_i, expert-index order.
/// Weights must be normalized over the invoked experts.
AggregateResult aggregate_responses(const std::vector<InvocationResponse>& responses,
                                    const std::vector<double>& weights, double epsilon = 1e-9);

/// The seven default synthetic experts with the stock competence matrix.
void register_default_experts(Registry& registry);

std::string digest_hex(const std::string& data);

}  // namespace m3::mesh
