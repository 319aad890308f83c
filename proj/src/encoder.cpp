#include "mercat/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "mercat/binary_io.hpp"
#include "mercat/error.hpp"
#include "mercat/hash.hpp"
#include "mercat/rng.hpp"
#include "mercat/text.hpp"

namespace mercat {

Role parse_role(std::string_view name) {
    if (name == "query") return Role::Query;
    if (name == "passage") return Role::Passage;
    throw ConfigError("unknown role '" + std::string(name) + "' (expected query|passage)");
}

std::string_view role_name(Role role) noexcept { return role == Role::Query ? "query" : "passage"; }

void EncoderConfig::validate() const {
    if (ngram_min < 1 || ngram_min > ngram_max) throw ConfigError("need 1 <= ngram_min <= ngram_max");
    if (full_dim < 1) throw ConfigError("full_dim must be positive");
    if (hash_space < full_dim) throw ConfigError("hash_space must be >= full_dim");
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"hash_space", hash_space},         {"ngram_min", ngram_min},
            {"ngram_max", ngram_max},           {"full_dim", full_dim},
            {"query_prefix", query_prefix},     {"passage_prefix", passage_prefix},
            {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.hash_space = j.value("hash_space", c.hash_space);
    c.ngram_min = j.value("ngram_min", c.ngram_min);
    c.ngram_max = j.value("ngram_max", c.ngram_max);
    c.full_dim = j.value("full_dim", c.full_dim);
    c.query_prefix = j.value("query_prefix", c.query_prefix);
    c.passage_prefix = j.value("passage_prefix", c.passage_prefix);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

FeatureCounts featurize(std::string_view input, Role role, const EncoderConfig& config) {
    std::string joined = config.prefix(role);
    joined.append(input);
    const std::u32string cps = text::to_lower(text::decode_utf8(joined));

    // UTF-8 bytes of each code point, so n-grams hash identical bytes to the
    // lowercased string's encoding.
    std::vector<std::string> units;
    units.reserve(cps.size());
    for (char32_t cp : cps) {
        std::string u;
        text::append_utf8(u, cp);
        units.push_back(std::move(u));
    }

    std::vector<std::uint32_t> buckets;
    for (std::uint32_t n = config.ngram_min; n <= config.ngram_max; ++n) {
        if (units.size() < n) break;
        for (std::size_t i = 0; i + n <= units.size(); ++i) {
            std::uint64_t h = kFnvOffset;
            for (std::size_t k = i; k < i + n; ++k) h = fnv1a64(units[k], h);
            buckets.push_back(static_cast<std::uint32_t>(h % config.hash_space));
        }
    }
    std::sort(buckets.begin(), buckets.end());

    FeatureCounts out;
    for (std::uint32_t b : buckets) {
        if (!out.empty() && out.back().first == b)
            ++out.back().second;
        else
            out.emplace_back(b, 1u);
    }
    return out;
}

FeatureVector unit_features(const FeatureCounts& counts) {
    double sq = 0.0;
    for (const auto& [b, c] : counts) sq += static_cast<double>(c) * c;
    FeatureVector x;
    x.reserve(counts.size());
    if (sq == 0.0) return x;
    const double inv = 1.0 / std::sqrt(sq);
    for (const auto& [b, c] : counts) x.emplace_back(b, c * inv);
    return x;
}

EncoderModel EncoderModel::random_init(const EncoderConfig& config) {
    config.validate();
    std::vector<double> w(std::size_t{config.hash_space} * config.full_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.hash_space));
    Rng rng(config.seed);
    // Draw in the on-disk (row-major, row = output dim) order so the stream of
    // draws maps onto W independently of the in-memory layout.
    for (std::uint32_t r = 0; r < config.full_dim; ++r)
        for (std::uint32_t b = 0; b < config.hash_space; ++b)
            w[std::size_t{b} * config.full_dim + r] = rng.uniform(-bound, bound);
    return EncoderModel(config, std::move(w));
}

EncoderModel EncoderModel::zeros(const EncoderConfig& config) {
    config.validate();
    return EncoderModel(config, std::vector<double>(std::size_t{config.hash_space} * config.full_dim));
}

std::vector<double> EncoderModel::project(const FeatureVector& x) const {
    std::vector<double> y(config_.full_dim, 0.0);
    for (const auto& [b, xv] : x) {
        const auto col = column(b);
        for (std::size_t r = 0; r < y.size(); ++r) y[r] += col[r] * xv;
    }
    return y;
}

Embedding EncoderModel::encode(std::string_view input, Role role) const {
    return l2_normalize(Embedding(project(unit_features(featurize(input, role, config_)))));
}

std::vector<Embedding> EncoderModel::encode_batch(std::span<const TextInput> inputs,
                                                  unsigned threads) const {
    std::vector<Embedding> out(inputs.size());
    parallel_chunks(inputs.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = encode(inputs[i].text, inputs[i].role);
    });
    return out;
}

// ---------------------------------------------------------------------------
// MENC file: "MENC" u8(version) u32(json length) canonical-JSON config
//            then W as f32, row-major full_dim x hash_space.

void EncoderModel::save(std::ostream& out) const {
    io::write_magic(out, "MENC");
    io::write_uint<std::uint8_t>(out, kModelFormatVersion);
    io::write_string(out, config_.to_json().dump());
    std::vector<float> row(config_.hash_space);
    for (std::uint32_t r = 0; r < config_.full_dim; ++r) {
        for (std::uint32_t b = 0; b < config_.hash_space; ++b)
            row[b] = static_cast<float>(weights_[std::size_t{b} * config_.full_dim + r]);
        io::write_f32_array<float>(out, row);
    }
}

EncoderModel EncoderModel::load(std::istream& in) {
    io::expect_magic(in, "MENC");
    const auto version = io::read_uint<std::uint8_t>(in);
    if (version != kModelFormatVersion)
        throw FormatError("unsupported MENC version " + std::to_string(version));
    EncoderConfig config;
    try {
        config = EncoderConfig::from_json(nlohmann::json::parse(io::read_string(in)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model config: ") + e.what());
    }
    std::vector<double> w(std::size_t{config.hash_space} * config.full_dim);
    std::vector<float> row(config.hash_space);
    for (std::uint32_t r = 0; r < config.full_dim; ++r) {
        io::read_f32_array(in, row);
        for (std::uint32_t b = 0; b < config.hash_space; ++b) {
            if (!std::isfinite(row[b])) throw FormatError("non-finite weight in model file");
            w[std::size_t{b} * config.full_dim + r] = row[b];
        }
    }
    return EncoderModel(std::move(config), std::move(w));
}

void EncoderModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    save(out);
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open model: " + path.string());
    return load(in);
}

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MERCAT_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return 1;
}

}  // namespace mercat
