#include "m3/mesh/mesh.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace m3::mesh {

using nlohmann::json;

void CapabilityDescriptor::validate() const {
    if (expert_id.empty()) throw std::invalid_argument("descriptor: empty expert_id");
    if (task_categories.empty()) throw std::invalid_argument("descriptor: needs at least one task category");
    for (const auto& c : task_categories)
        if (router::category_index(c) < 0) throw std::invalid_argument("descriptor: unknown category " + c);
    if (descriptor_embedding.size() != router::kEmbeddingDim)
        throw std::invalid_argument("descriptor: embedding must have length 768");
}

void ExpertProfile::validate() const {
    for (double c : competence)
        if (c < 0.0 || c > 1.0) throw std::invalid_argument("profile: competence entries must be in [0,1]");
}

double ExpertProfile::competence_for(const std::string& category) const {
    const int idx = router::category_index(category);
    if (idx < 0) throw std::invalid_argument("profile: unknown category " + category);
    return competence[static_cast<std::size_t>(idx)];
}

double LinkModel::success(double snr_db) const {
    return 1.0 / (1.0 + std::exp(-steepness * (snr_db - snr_threshold)));
}

std::string digest_hex(const std::string& data) {
    // FNV-1a 64-bit; payloads are represented as digests only.
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string ContextEnvelope::serialize() const {
    json j;  // nlohmann objects keep keys sorted: canonical form
    j["schema_version"] = kSchemaVersion;
    j["task_tag"] = task_tag;
    j["instruction_digest"] = instruction_digest;
    j["image_feature_ref"] = image_feature_ref;
    j["requested_experts"] = requested_experts;
    j["channel_snapshot"] = channel_snapshot;
    j["timestamp"] = timestamp;
    return j.dump();
}

ContextEnvelope ContextEnvelope::parse(const std::string& json_text) {
    json j = json::parse(json_text);
    if (j.at("schema_version").get<int>() != kSchemaVersion)
        throw std::runtime_error("envelope: unsupported schema version");
    ContextEnvelope e;
    e.task_tag = j.at("task_tag").get<std::string>();
    e.instruction_digest = j.at("instruction_digest").get<std::string>();
    e.image_feature_ref = j.at("image_feature_ref").get<std::string>();
    e.requested_experts = j.at("requested_experts").get<std::vector<std::string>>();
    e.channel_snapshot = j.at("channel_snapshot").get<std::vector<double>>();
    e.timestamp = j.at("timestamp").get<int>();
    return e;
}

void Registry::register_expert(const CapabilityDescriptor& descriptor, const ExpertProfile& profile) {
    descriptor.validate();
    profile.validate();
    if (descriptor.expert_id != profile.expert_id)
        throw std::invalid_argument("register_expert: descriptor/profile id mismatch");
    if (descriptors_.count(descriptor.expert_id))
        throw std::invalid_argument("register_expert: duplicate id " + descriptor.expert_id);
    order_.push_back(descriptor.expert_id);
    descriptors_[descriptor.expert_id] = descriptor;
    profiles_[descriptor.expert_id] = profile;
}

bool Registry::has(const std::string& expert_id) const { return descriptors_.count(expert_id) != 0; }

const CapabilityDescriptor& Registry::descriptor(const std::string& expert_id) const {
    auto it = descriptors_.find(expert_id);
    if (it == descriptors_.end()) throw std::invalid_argument("registry: unknown expert " + expert_id);
    return it->second;
}

const ExpertProfile& Registry::profile(const std::string& expert_id) const {
    auto it = profiles_.find(expert_id);
    if (it == profiles_.end()) throw std::invalid_argument("registry: unknown expert " + expert_id);
    return it->second;
}

int Registry::index_of(const std::string& expert_id) const {
    for (std::size_t i = 0; i < order_.size(); ++i)
        if (order_[i] == expert_id) return static_cast<int>(i);
    return -1;
}

std::vector<router::IndexEntry> Registry::descriptor_index() const {
    std::vector<router::IndexEntry> entries;
    for (const auto& id : order_)
        entries.push_back({id, descriptors_.at(id).descriptor_embedding});
    return entries;
}

std::map<std::string, std::vector<std::string>> Registry::category_map() const {
    std::map<std::string, std::vector<std::string>> m;
    for (const auto& [id, d] : descriptors_) m[id] = d.task_categories;
    return m;
}

std::string Registry::snapshot() const {
    json experts = json::array();
    for (const auto& id : order_) {
        const auto& d = descriptors_.at(id);
        const auto& p = profiles_.at(id);
        json e;
        e["expert_id"] = d.expert_id;
        e["display_name"] = d.display_name;
        e["task_categories"] = d.task_categories;
        e["capability_text"] = d.capability_text;
        e["compute_class"] = d.device_profile.compute_class;
        e["max_payload"] = d.device_profile.max_payload;
        e["competence"] = p.competence;
        experts.push_back(e);
    }
    json j;
    j["schema_version"] = kSchemaVersion;
    j["experts"] = experts;
    return j.dump();
}

ContextEnvelope build_context(const router::TaskInstance& task, const std::string& resolved_tag,
                              const std::vector<double>& channel_obs,
                              const std::vector<std::string>& requested, int timestamp) {
    if (router::category_index(resolved_tag) < 0)
        throw std::invalid_argument("build_context: unknown category " + resolved_tag);
    ContextEnvelope e;
    e.task_tag = resolved_tag;
    e.instruction_digest = digest_hex(task.instruction_text);
    e.image_feature_ref = "img-" + digest_hex(task.instruction_text + "#img");
    e.requested_experts = requested;
    e.channel_snapshot = channel_obs;
    e.timestamp = timestamp;
    return e;
}

InvocationResponse LoopbackTransport::deliver(const InvocationRequest& request, double channel_snr,
                                              const ExpertProfile& profile, const LinkModel& link) {
    InvocationResponse r;
    r.expert_id = request.expert_id;
    r.link_success = link.success(channel_snr);
    r.quality = profile.competence_for(request.envelope.task_tag) * r.link_success;
    r.payload_digest = digest_hex(request.expert_id + request.envelope.instruction_digest);
    r.latency_steps = 1;
    return r;
}

InvocationResponse invoke_expert(const Registry& registry, Transport& transport,
                                 const InvocationRequest& request, double channel_snr,
                                 const LinkModel& link) {
    if (!registry.has(request.expert_id)) {
        InvocationResponse r;
        r.expert_id = request.expert_id;
        r.error = true;
        return r;
    }
    return transport.deliver(request, channel_snr, registry.profile(request.expert_id), link);
}

AggregateResult aggregate_responses(const std::vector<InvocationResponse>& responses,
                                    const std::vector<double>& weights, double epsilon) {
    AggregateResult out;
    if (responses.empty()) {
        out.no_experts = true;
        return out;
    }
    if (responses.size() != weights.size())
        throw std::invalid_argument("aggregate_responses: weight/response count mismatch");
    for (std::size_t i = 0; i < responses.size(); ++i) {
        out.aggregate_quality += weights[i] * responses[i].quality;
        if (weights[i] > epsilon) out.contributing.push_back(responses[i].expert_id);
    }
    return out;
}

void register_default_experts(Registry& registry) {
    struct Spec {
        const char* id;
        const char* name;
        std::vector<std::string> cats;
        const char* text;
    };
    const std::vector<Spec> specs = {
        {"dinov2", "DINOv2", {"general"},
         "general feature extraction for everyday photo and scene understanding, describe object color"},
        {"co-detr", "Co-DETR", {"detection-segmentation"},
         "detect objects with bounding boxes, locate and count instances"},
        {"sam", "SAM", {"detection-segmentation"},
         "segment anything, pixel mask outline for instances"},
        {"pix2struct", "Pix2Struct", {"document-chart"},
         "document understanding, parse table figure and layout structure"},
        {"deplot", "Deplot", {"document-chart"},
         "chart analysis, plot graph axis legend and trend reading"},
        {"vary", "Vary", {"ocr-text"},
         "read text in images, ocr sign label words transcribe handwriting"},
        {"biomedclip", "BiomedCLIP", {"medical"},
         "medical image analysis, scan xray mri ct lesion clinical radiology"},
    };
    for (const auto& s : specs) {
        CapabilityDescriptor d;
        d.expert_id = s.id;
        d.display_name = s.name;
        d.task_categories = s.cats;
        d.capability_text = s.text;
        d.descriptor_embedding = router::embed_text(s.text);
        ExpertProfile p;
        p.expert_id = s.id;
        const std::string specialty = s.cats.front();
        for (int c = 0; c < router::kNumCategories; ++c) {
            const std::string cat = router::category_names()[static_cast<std::size_t>(c)];
            bool is_specialty = false;
            for (const auto& sc : s.cats)
                if (sc == cat) is_specialty = true;
            if (is_specialty)
                p.competence[static_cast<std::size_t>(c)] = 0.95;
            else if (cat == "general" && specialty != "general")
                p.competence[static_cast<std::size_t>(c)] = 0.3;
            else
                p.competence[static_cast<std::size_t>(c)] = 0.1;
        }
        registry.register_expert(d, p);
    }
}

}  // namespace m3::mesh
