#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mercat/embedding.hpp"

namespace mercat {

struct ItemDoc {
    std::string item_id;
    std::string title;
    std::optional<std::size_t> embedding_ref;
};

/// Lowercases and splits on whitespace and punctuation. Maximal runs of CJK
/// characters become overlapping character bigrams (a lone CJK character is
/// kept as a unigram), so unsegmented text still produces matchable terms.
std::vector<std::string> tokenize(std::string_view text);

struct ScoredItem {
    std::string item_id;
    double score = 0.0;

    friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Score descending, then item_id ascending.
bool ranks_before(const ScoredItem& a, const ScoredItem& b) noexcept;

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over an in-memory inverted index. Build once, then share
/// read-only; `upsert` is for single-writer maintenance.
class LexicalIndex {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    explicit LexicalIndex(Bm25Params params = {}) : params_(params) {}

    static LexicalIndex build(std::span<const ItemDoc> docs, Bm25Params params = {});

    /// Adds a document or replaces the terms of an existing item_id; returns
    /// its ordinal. Ordinals never change once assigned.
    std::uint32_t upsert(const std::string& item_id, std::string_view title);

    std::size_t doc_count() const noexcept { return ids_.size(); }
    double avgdl() const noexcept;
    std::uint32_t doc_length(std::uint32_t doc) const { return lengths_.at(doc); }
    const std::string& doc_id(std::uint32_t doc) const { return ids_.at(doc); }
    std::optional<std::uint32_t> ordinal_of(const std::string& item_id) const;
    std::size_t document_frequency(const std::string& term) const;
    const std::vector<Posting>* postings(const std::string& term) const;
    const Bm25Params& params() const noexcept { return params_; }

    /// ln(1 + (N - df + 0.5) / (df + 0.5))
    double idf(const std::string& term) const;

    /// Sum over unique query tokens present in `doc`.
    double bm25_score(std::span<const std::string> query_tokens, std::uint32_t doc) const;

    /// Exact top-k over documents containing at least one query token.
    /// `total_matches`, when given, receives the number of such documents.
    std::vector<ScoredItem> search(std::string_view query, std::size_t k,
                                   std::size_t* total_matches = nullptr) const;

    void save(std::ostream& out) const;
    static LexicalIndex load(std::istream& in);

private:
    double term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const noexcept;
    void remove_terms(std::uint32_t doc);

    Bm25Params params_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> ordinal_;
    std::vector<std::uint32_t> lengths_;
    std::uint64_t total_length_ = 0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::vector<std::string>> doc_terms_;
};

/// Exact flat index over unit-norm f32 rows (zero rows allowed and kept zero).
class DenseIndex {
public:
    explicit DenseIndex(std::size_t dim = 0) : dim_(dim) {}

    static DenseIndex from_table(const EmbeddingTable& table);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::string& id(std::size_t i) const { return ids_.at(i); }
    std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }
    Embedding embedding(std::size_t i) const;
    std::optional<std::size_t> find(const std::string& item_id) const;

    /// Stores l2_normalize(e); replaces the row if the id already exists.
    void upsert(const std::string& item_id, const Embedding& e);

    /// Cosine of the normalized query against every row, exact top-k.
    std::vector<ScoredItem> search(const Embedding& query, std::size_t k) const;

    EmbeddingTable to_table() const;

private:
    std::size_t dim_;
    std::vector<float> data_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> row_of_;
};

struct HybridConfig {
    double tau = 0.90;
    std::size_t lexical_k = 100;
    std::size_t dense_k = 100;
    std::size_t low_hit_threshold = 10;

    void validate() const;
};

enum class CandidateSource { Lexical, Dense, Both };
std::string_view source_name(CandidateSource s) noexcept;

struct RankedCandidate {
    std::string item_id;
    std::optional<double> lexical_score;
    std::optional<double> dense_score;
    CandidateSource source = CandidateSource::Lexical;
};

/// `zero_hit`: no lexical match. `low_hit`: 1..low_hit_threshold-1 lexical
/// matches. `recovered`: a zero-hit gained at least one dense-only candidate,
/// or a low-hit reached low_hit_threshold candidates in total.
struct HybridDiagnostics {
    std::size_t lexical_hits = 0;
    std::size_t dense_added = 0;
    bool zero_hit = false;
    bool low_hit = false;
    bool recovered = false;
};

struct HybridResult {
    std::vector<RankedCandidate> candidates;
    HybridDiagnostics diagnostics;
};

/// Dense candidates are admitted only when strictly above the threshold.
constexpr bool passes_similarity_gate(double score, double tau) noexcept { return score > tau; }

/// Lexical top lexical_k, then dense-only candidates from the dense top
/// dense_k that pass the gate, in dense rank order. Items found by both
/// routes stay at their lexical position with source Both.
HybridResult hybrid_search(const LexicalIndex& lexical, const DenseIndex& dense,
                           std::string_view query_text, const Embedding& query_embedding,
                           const HybridConfig& config);

constexpr std::size_t ltr_feature_length(std::size_t dim_budget) noexcept { return 1 + 2 * dim_budget; }

/// Per candidate: [cosine(q, t)] ++ q[:budget] ++ t[:budget]. Prefixes are
/// renormalized unless budget equals the full dimension, in which case the
/// vectors pass through unchanged.
std::vector<std::vector<double>> extract_ltr_features(const Embedding& query,
                                                      std::span<const Embedding> candidates,
                                                      std::size_t dim_budget);

}  // namespace mercat
