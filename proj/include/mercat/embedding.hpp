#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mercat {

/// Norms at or below this are treated as zero everywhere.
inline constexpr double kZeroNorm = 1e-12;

/// Immutable dense vector with nested-prefix semantics: the first d
/// coordinates of an embedding are themselves a d-dimensional embedding.
class Embedding {
public:
    Embedding() = default;

    /// Throws ShapeError on an empty vector and RangeError on non-finite values.
    explicit Embedding(std::vector<double> values);

    static Embedding zeros(std::size_t dim);

    std::size_t dim() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double norm() const noexcept;

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<double> values_;
};

/// Leading `d` coordinates, optionally rescaled to unit norm. A prefix whose
/// norm is <= kZeroNorm is returned as a zero vector.
Embedding truncate(const Embedding& e, std::size_t d, bool renormalize = true);

Embedding l2_normalize(const Embedding& e);

/// Cosine similarity clamped to [-1, 1]; 0 when either side is a zero vector.
double cosine(const Embedding& a, const Embedding& b);
double cosine(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double dot(std::span<const float> a, std::span<const double> b) noexcept;

/// Matryoshka levels: strictly decreasing prefix lengths d_1 > ... > d_K with
/// one weight per level.
struct NestedDims {
    std::vector<std::size_t> dims;
    std::vector<double> weights;

    static NestedDims uniform(std::vector<std::size_t> dims);

    /// Throws ConfigError unless dims are strictly decreasing, >= 1, start at
    /// `full_dim`, and weights are positive (or non-negative if allowed).
    void validate(std::size_t full_dim, bool allow_zero_weights = false) const;
};

/// Parses "64,32,16,8" into a list of positive integers.
std::vector<std::size_t> parse_dim_list(const std::string& text);

/// In-memory form of the "MEMB" binary embedding file: `count` rows of
/// `dim` f32 values plus one item id per row.
struct EmbeddingTable {
    std::uint32_t dim = 0;
    std::vector<float> data;
    std::vector<std::string> ids;

    std::size_t count() const noexcept { return ids.size(); }
    std::span<const float> row(std::size_t i) const noexcept {
        return {data.data() + i * dim, dim};
    }
    Embedding embedding(std::size_t i) const;
    void append(const std::string& id, const Embedding& e);

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

inline constexpr std::uint8_t kEmbeddingFileVersion = 1;

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path);
void write_embeddings(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable read_embeddings(std::istream& in);

}  // namespace mercat
