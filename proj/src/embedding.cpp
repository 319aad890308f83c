#include "mercat/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mercat/binary_io.hpp"
#include "mercat/error.hpp"
#include "mercat/matrix.hpp"

namespace mercat {

namespace {

double norm_of(std::span<const double> v) noexcept { return std::sqrt(dot(v, v)); }

}  // namespace

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw ShapeError("embedding must have a positive dimension");
    for (double v : values_)
        if (!std::isfinite(v)) throw RangeError("embedding contains a non-finite value");
}

Embedding Embedding::zeros(std::size_t dim) { return Embedding(std::vector<double>(dim, 0.0)); }

double Embedding::norm() const noexcept { return norm_of(values_); }

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double dot(std::span<const float> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

Embedding l2_normalize(const Embedding& e) {
    const double n = e.norm();
    if (n <= kZeroNorm) return e;
    std::vector<double> out(e.values().begin(), e.values().end());
    for (double& v : out) v /= n;
    return Embedding(std::move(out));
}

Embedding truncate(const Embedding& e, std::size_t d, bool renormalize) {
    if (d < 1 || d > e.dim())
        throw RangeError("truncate: d=" + std::to_string(d) + " outside [1, " +
                         std::to_string(e.dim()) + "]");
    Embedding prefix(std::vector<double>(e.values().begin(), e.values().begin() + d));
    return renormalize ? l2_normalize(prefix) : prefix;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ShapeError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    const double na = norm_of(a);
    const double nb = norm_of(b);
    if (na <= kZeroNorm || nb <= kZeroNorm) {
        if (na <= kZeroNorm && nb <= kZeroNorm) spdlog::debug("cosine of two zero vectors, returning 0");
        return 0.0;
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine(const Embedding& a, const Embedding& b) { return cosine(a.values(), b.values()); }

NestedDims NestedDims::uniform(std::vector<std::size_t> dims) {
    NestedDims n;
    n.weights.assign(dims.size(), 1.0);
    n.dims = std::move(dims);
    return n;
}

void NestedDims::validate(std::size_t full_dim, bool allow_zero_weights) const {
    if (dims.empty()) throw ConfigError("nested dims must not be empty");
    if (weights.size() != dims.size())
        throw ConfigError("nested dims and weights differ in length");
    if (dims.front() != full_dim)
        throw ConfigError("first nested dim " + std::to_string(dims.front()) +
                          " must equal the full dimension " + std::to_string(full_dim));
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (dims[k] < 1) throw ConfigError("nested dims must be >= 1");
        if (k > 0 && dims[k] >= dims[k - 1])
            throw ConfigError("nested dims must be strictly decreasing");
        const double w = weights[k];
        if (!std::isfinite(w) || w < 0.0 || (!allow_zero_weights && w == 0.0))
            throw ConfigError("nested weights must be positive");
    }
}

std::vector<std::size_t> parse_dim_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) throw ConfigError("empty entry in dimension list '" + text + "'");
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(part, &used);
        } catch (const std::exception&) {
            throw ConfigError("not an integer: '" + part + "'");
        }
        if (used != part.size() || v < 1) throw ConfigError("bad dimension: '" + part + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw ConfigError("empty dimension list");
    return out;
}

RowMatrix RowMatrix::from_embeddings(std::span<const Embedding> rows) {
    if (rows.empty()) return {};
    RowMatrix m(rows.size(), rows.front().dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].dim() != m.cols) throw ShapeError("rows of unequal dimension");
        std::copy(rows[i].values().begin(), rows[i].values().end(), m.row(i).begin());
    }
    return m;
}

RowMatrix RowMatrix::prefix_columns(std::size_t d) const {
    if (d > cols) throw RangeError("prefix_columns: d exceeds column count");
    RowMatrix m(rows, d);
    for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(row(i).begin(), d, m.row(i).begin());
    return m;
}

// ---------------------------------------------------------------------------
// MEMB file: "MEMB" u8(version) u32(dim) u64(count) f32[count*dim]
//            then count x (u32 length + UTF-8 id)

Embedding EmbeddingTable::embedding(std::size_t i) const {
    const auto r = row(i);
    return Embedding(std::vector<double>(r.begin(), r.end()));
}

void EmbeddingTable::append(const std::string& id, const Embedding& e) {
    if (dim == 0 && ids.empty()) dim = static_cast<std::uint32_t>(e.dim());
    if (e.dim() != dim) throw ShapeError("embedding dim does not match table dim");
    for (double v : e.values()) data.push_back(static_cast<float>(v));
    ids.push_back(id);
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
    if (table.data.size() != table.count() * table.dim)
        throw ShapeError("embedding table data size inconsistent with count x dim");
    io::write_magic(out, "MEMB");
    io::write_uint<std::uint8_t>(out, kEmbeddingFileVersion);
    io::write_uint<std::uint32_t>(out, table.dim);
    io::write_uint<std::uint64_t>(out, table.count());
    io::write_f32_array<float>(out, table.data);
    for (const auto& id : table.ids) io::write_string(out, id);
}

EmbeddingTable read_embeddings(std::istream& in) {
    io::expect_magic(in, "MEMB");
    const auto version = io::read_uint<std::uint8_t>(in);
    if (version != kEmbeddingFileVersion)
        throw FormatError("unsupported MEMB version " + std::to_string(version));
    EmbeddingTable t;
    t.dim = io::read_uint<std::uint32_t>(in);
    const auto count = io::read_uint<std::uint64_t>(in);
    t.data.resize(count * t.dim);
    io::read_f32_array(in, t.data);
    t.ids.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) t.ids.push_back(io::read_string(in));
    return t;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    write_embeddings(out, table);
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path.string());
    return read_embeddings(in);
}

}  // namespace mercat
