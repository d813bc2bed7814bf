#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace m3::router {

constexpr int kEmbeddingDim = 768;
constexpr int kNumCategories = 5;

/// Fixed category order; ties in tag extraction resolve to the earliest.
const std::array<std::string, kNumCategories>& category_names();
int category_index(const std::string& name);  // -1 if unknown

struct TaskInstance {
    std::string category;
    std::string instruction_text;
    double difficulty = 0.5;
    std::uint64_t seed = 0;
};

using EmbeddingVector = Eigen::VectorXd;  // length kEmbeddingDim, unit L2 norm

struct CoarseMask {
    std::vector<int> bits;  // 0/1 per expert
    int cardinality() const {
        int c = 0;
        for (int b : bits) c += b;
        return c;
    }
};

/// Keyword lexicons per category; human-editable via a JSON corpus file.
class Lexicon {
public:
    static Lexicon defaults();
    static Lexicon from_json_file(const std::string& path);
    std::string to_json() const;

    const std::vector<std::string>& words(const std::string& category) const;
    void set_words(const std::string& category, std::vector<std::string> words);

    /// Highest keyword hit count wins; ties break in fixed category order;
    /// zero hits falls back to "general". Empty text is an error.
    std::string extract_tag(const std::string& text) const;

private:
    std::map<std::string, std::vector<std::string>> words_;
};

/// Feature-hashed bag-of-words embedding (fixed hash seed), L2-normalized.
EmbeddingVector embed_text(const std::string& text, std::uint64_t hash_seed = 0x6d334c4c4d ^ 0x9e3779b9);

struct IndexEntry {
    std::string id;
    EmbeddingVector embedding;
};

/// Exhaustive cosine scan: ids with similarity >= threshold, descending,
/// truncated to top_k.
std::vector<std::string> index_query(const EmbeddingVector& query, const std::vector<IndexEntry>& entries,
                                     int top_k, double threshold);

struct MaskPolicy {
    int top_k = 4;
    double threshold = 0.15;
};

/// Stage-1 mask: retrieval hits OR category membership; never all-zero
/// (falls back to all ones).
CoarseMask coarse_mask(const TaskInstance& task, const Lexicon& lexicon,
                       const std::vector<IndexEntry>& descriptor_index,
                       const std::map<std::string, std::vector<std::string>>& expert_categories,
                       const std::vector<std::string>& expert_order, const MaskPolicy& policy);

std::vector<std::string> tokenize(const std::string& text);

}  // namespace m3::router
