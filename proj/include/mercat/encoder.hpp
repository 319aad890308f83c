#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/embedding.hpp"

namespace mercat {

/// Which side of the query/item asymmetry a text is encoded as.
enum class Role { Query, Passage };

Role parse_role(std::string_view name);
std::string_view role_name(Role role) noexcept;

struct EncoderConfig {
    std::uint32_t hash_space = 1u << 18;
    std::uint32_t ngram_min = 2;
    std::uint32_t ngram_max = 4;
    std::uint32_t full_dim = 64;
    std::string query_prefix = "query: ";
    std::string passage_prefix = "passage: ";
    std::uint64_t seed = 0;

    const std::string& prefix(Role role) const noexcept {
        return role == Role::Query ? query_prefix : passage_prefix;
    }

    void validate() const;

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Sparse bag of hashed character n-grams: (bucket, count), sorted by bucket.
using FeatureCounts = std::vector<std::pair<std::uint32_t, std::uint32_t>>;
/// Same buckets with values scaled to unit L2 norm.
using FeatureVector = std::vector<std::pair<std::uint32_t, double>>;

/// Prepends the role prefix, lowercases, and hashes every character n-gram
/// (n in [ngram_min, ngram_max]) with FNV-1a 64 modulo hash_space.
FeatureCounts featurize(std::string_view text, Role role, const EncoderConfig& config);

/// Counts scaled by 1/sqrt(sum of squared counts).
FeatureVector unit_features(const FeatureCounts& counts);

struct TextInput {
    std::string text;
    Role role = Role::Passage;
};

inline constexpr std::uint8_t kModelFormatVersion = 1;

/// Linear projection of hashed n-gram features followed by L2 normalization.
/// Weights are kept bucket-major in memory (one contiguous column of
/// `full_dim` values per bucket) so a sparse input touches contiguous memory.
class EncoderModel {
public:
    /// i.i.d. uniform(-1/sqrt(hash_space), +1/sqrt(hash_space)) from config.seed.
    static EncoderModel random_init(const EncoderConfig& config);
    static EncoderModel zeros(const EncoderConfig& config);

    const EncoderConfig& config() const noexcept { return config_; }
    std::size_t full_dim() const noexcept { return config_.full_dim; }

    std::span<const double> column(std::uint32_t bucket) const noexcept {
        return {weights_.data() + std::size_t{bucket} * config_.full_dim, config_.full_dim};
    }
    std::span<double> column(std::uint32_t bucket) noexcept {
        return {weights_.data() + std::size_t{bucket} * config_.full_dim, config_.full_dim};
    }
    std::span<const double> weights() const noexcept { return weights_; }

    /// Unnormalized projection W·x for already-scaled features.
    std::vector<double> project(const FeatureVector& x) const;

    Embedding encode(std::string_view text, Role role) const;

    /// Elementwise equal to encode(); `threads` > 1 splits the batch into
    /// contiguous chunks.
    std::vector<Embedding> encode_batch(std::span<const TextInput> inputs, unsigned threads = 1) const;

    void save(const std::filesystem::path& path) const;
    static EncoderModel load(const std::filesystem::path& path);
    void save(std::ostream& out) const;
    static EncoderModel load(std::istream& in);

    friend bool operator==(const EncoderModel&, const EncoderModel&) = default;

private:
    EncoderModel(EncoderConfig config, std::vector<double> weights)
        : config_(std::move(config)), weights_(std::move(weights)) {}

    EncoderConfig config_;
    std::vector<double> weights_;
};

/// Splits [0, n) across worker threads and runs `fn(begin, end)` on each slice.
template <typename Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn);

/// Thread count from an explicit value, else MERCAT_THREADS, else 1.
unsigned resolve_threads(unsigned requested);

}  // namespace mercat

#include <thread>

template <typename Fn>
void mercat::parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
}
