#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/encoder.hpp"

namespace mercat {

/// Logged feedback, strongest first.
enum class FeedbackGrade { Purchase, Like, Comment, Click, View };

FeedbackGrade parse_grade(std::string_view name);
std::string_view grade_name(FeedbackGrade g) noexcept;

/// Grade -> integer gain g; DCG uses 2^g - 1. Items with gain >= threshold
/// count as relevant for precision/recall.
struct GainMapping {
    int purchase = 4;
    int like = 3;
    int comment = 2;
    int click = 1;
    int view = 0;
    int relevance_threshold = 1;

    int gain(FeedbackGrade g) const noexcept;
};

inline constexpr std::size_t kLongQueryChars = 10;

struct EvalQuery {
    std::string query_id;
    std::string text;
    std::vector<std::pair<std::string, FeedbackGrade>> candidates;

    /// At least kLongQueryChars code points.
    bool is_long() const;
};

std::vector<EvalQuery> read_eval_jsonl(const std::filesystem::path& path);
void write_eval_jsonl(const std::filesystem::path& path, std::span<const EvalQuery> queries);
nlohmann::json eval_query_to_json(const EvalQuery& q);

/// `ranked_gains` is the query's whole candidate pool in ranked order; the
/// ideal ordering is the same multiset sorted descending. 0 when IDCG is 0.
double ndcg_at_k(std::span<const int> ranked_gains, std::size_t k);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};

PrecisionRecall precision_recall_at_k(std::span<const int> ranked_gains, std::size_t k,
                                      std::size_t total_relevant, int relevance_threshold = 1);

struct KMetrics {
    double ndcg = 0.0;
    double ndcg_long = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct QueryMetrics {
    std::string query_id;
    bool is_long = false;
    std::map<std::size_t, KMetrics> per_k;  // ndcg_long unused per query
};

struct MetricReport {
    std::vector<std::size_t> ks;
    std::map<std::size_t, KMetrics> per_k;
    std::size_t query_count = 0;
    std::size_t long_count = 0;
    std::size_t skipped = 0;
    std::vector<std::string> errors;
    std::uint64_t query_set_fingerprint = 0;
    std::vector<QueryMetrics> per_query;

    nlohmann::json to_json(bool include_per_query = false) const;
    static MetricReport from_json(const nlohmann::json& j);
    std::string to_table() const;
};

/// Returns nullopt for an item it cannot score. Must be safe to call from
/// several threads when replay_evaluate runs with threads > 1.
using Scorer = std::function<std::optional<double>(const std::string& query_text, const std::string& item_id)>;

/// Ranks each query's own candidate pool by score (ties: ascending item_id)
/// and macro-averages nDCG/P/R at every k. Queries with an unscorable item
/// are skipped and reported.
MetricReport replay_evaluate(std::span<const EvalQuery> queries, const Scorer& scorer,
                             std::span<const std::size_t> ks, const GainMapping& gains = {},
                             unsigned threads = 1);

double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson over average (fractional) ranks.
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> fractional_ranks(std::span<const double> x);

struct StsPair {
    std::string sentence_a;
    std::string sentence_b;
    double gold = 0.0;
};

std::vector<StsPair> read_sts_tsv(const std::filesystem::path& path);
void write_sts_tsv(const std::filesystem::path& path, std::span<const StsPair> pairs);

struct StsResult {
    std::size_t dim = 0;
    double pearson = 0.0;
    double spearman = 0.0;
};

/// Both sentences encoded as passages, truncated and renormalized to each
/// dim, cosine correlated against gold.
std::vector<StsResult> sts_evaluate(std::span<const StsPair> pairs, const EncoderModel& model,
                                    std::span<const std::size_t> dims, unsigned threads = 1);

struct MetricDelta {
    std::string metric;
    std::size_t k = 0;
    double a = 0.0;
    double b = 0.0;
    double absolute = 0.0;
    std::optional<double> relative;  // (b - a) / a, absent when a == 0
};

struct DeltaReport {
    std::vector<MetricDelta> rows;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

/// "+7.6%" style rendering of a relative delta.
std::string format_relative(std::optional<double> relative);

DeltaReport compare_models(const MetricReport& a, const MetricReport& b);

}  // namespace mercat
