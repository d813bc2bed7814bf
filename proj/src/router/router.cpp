#include "m3/router/router.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace m3::router {

const std::array<std::string, kNumCategories>& category_names() {
    static const std::array<std::string, kNumCategories> names = {
        "general", "detection-segmentation", "document-chart", "ocr-text", "medical"};
    return names;
}

int category_index(const std::string& name) {
    const auto& names = category_names();
    for (int i = 0; i < kNumCategories; ++i)
        if (names[i] == name) return i;
    return -1;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

Lexicon Lexicon::defaults() {
    Lexicon lx;
    lx.words_["general"] = {"describe", "scene",  "photo",   "picture", "object",
                            "color",    "animal", "outdoor", "everyday"};
    lx.words_["detection-segmentation"] = {"detect", "segment", "bounding", "boxes", "mask",
                                           "locate", "count",   "instances", "outline"};
    lx.words_["document-chart"] = {"document", "chart", "table", "plot",  "graph",
                                   "figure",   "axis",  "trend", "legend"};
    lx.words_["ocr-text"] = {"read", "text", "ocr", "sign", "label", "words", "transcribe", "handwriting"};
    lx.words_["medical"] = {"scan", "tumor", "xray", "mri", "lesion", "ct", "clinical", "radiology", "biopsy"};
    return lx;
}

Lexicon Lexicon::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("lexicon: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    Lexicon lx;
    for (const auto& name : category_names()) {
        if (!j.contains(name)) throw std::runtime_error("lexicon: missing category " + name);
        lx.words_[name] = j.at(name).get<std::vector<std::string>>();
    }
    return lx;
}

std::string Lexicon::to_json() const {
    nlohmann::json j;
    for (const auto& [cat, words] : words_) j[cat] = words;
    return j.dump(2);
}

const std::vector<std::string>& Lexicon::words(const std::string& category) const {
    auto it = words_.find(category);
    if (it == words_.end()) throw std::invalid_argument("lexicon: unknown category " + category);
    return it->second;
}

void Lexicon::set_words(const std::string& category, std::vector<std::string> words) {
    if (category_index(category) < 0) throw std::invalid_argument("lexicon: unknown category " + category);
    words_[category] = std::move(words);
}

std::string Lexicon::extract_tag(const std::string& text) const {
    if (text.empty()) throw std::invalid_argument("extract_tag: empty text");
    const auto tokens = tokenize(text);
    int best_count = 0;
    std::string best = "general";
    for (const auto& cat : category_names()) {
        const auto& lex = words_.at(cat);
        std::set<std::string> lexset(lex.begin(), lex.end());
        int count = 0;
        for (const auto& tok : tokens) count += lexset.count(tok) ? 1 : 0;
        if (count > best_count) {
            best_count = count;
            best = cat;
        }
    }
    return best;
}

namespace {

std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed) {
    std::uint64_t h = 14695981039346656037ull ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

EmbeddingVector embed_text(const std::string& text, std::uint64_t hash_seed) {
    if (text.empty()) throw std::invalid_argument("embed_text: empty text");
    EmbeddingVector v = EmbeddingVector::Zero(kEmbeddingDim);
    for (const auto& tok : tokenize(text)) {
        const std::uint64_t h = fnv1a64(tok, hash_seed);
        const int idx = static_cast<int>(h % kEmbeddingDim);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        v[idx] += sign;
    }
    const double norm = v.norm();
    if (norm > 0.0) v /= norm;
    return v;
}

std::vector<std::string> index_query(const EmbeddingVector& query, const std::vector<IndexEntry>& entries,
                                     int top_k, double threshold) {
    if (top_k < 1) throw std::invalid_argument("index_query: top_k must be >= 1");
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const double qn = query.norm();
        const double en = entries[i].embedding.norm();
        const double sim = (qn > 0.0 && en > 0.0) ? query.dot(entries[i].embedding) / (qn * en) : 0.0;
        if (sim >= threshold) scored.emplace_back(sim, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::string> ids;
    for (const auto& [sim, i] : scored) {
        if (static_cast<int>(ids.size()) >= top_k) break;
        ids.push_back(entries[i].id);
    }
    return ids;
}

CoarseMask coarse_mask(const TaskInstance& task, const Lexicon& lexicon,
                       const std::vector<IndexEntry>& descriptor_index,
                       const std::map<std::string, std::vector<std::string>>& expert_categories,
                       const std::vector<std::string>& expert_order, const MaskPolicy& policy) {
    if (expert_order.empty()) throw std::invalid_argument("coarse_mask: empty registry");
    const std::string tag = lexicon.extract_tag(task.instruction_text);
    const EmbeddingVector q = embed_text(task.instruction_text);
    const auto retrieved = index_query(q, descriptor_index, policy.top_k, policy.threshold);
    const std::set<std::string> retrieved_set(retrieved.begin(), retrieved.end());

    CoarseMask mask;
    mask.bits.assign(expert_order.size(), 0);
    for (std::size_t i = 0; i < expert_order.size(); ++i) {
        const std::string& id = expert_order[i];
        if (retrieved_set.count(id)) mask.bits[i] = 1;
        auto it = expert_categories.find(id);
        if (it != expert_categories.end()) {
            for (const auto& cat : it->second)
                if (cat == tag) mask.bits[i] = 1;
        }
    }
    if (mask.cardinality() == 0) mask.bits.assign(expert_order.size(), 1);  // fallback
    return mask;
}

}  // namespace m3::router
