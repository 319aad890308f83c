#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/evaluation.hpp"
#include "mercat/retrieval.hpp"
#include "mercat/training.hpp"

namespace mercat::datagen {

/// Parameters of the synthetic marketplace. JSON keys match the field names.
struct WorldSpec {
    std::uint64_t seed = 7;
    std::size_t n_brands = 150;
    std::size_t n_categories = 256;
    std::size_t n_items = 10000;
    std::size_t n_queries = 2000;       // eval sessions
    double ambiguity_rate = 0.25;       // fraction of product senses sharing a surface term
    double accessory_rate = 0.2;        // fraction of items that are accessories
    double noise_rate = 0.5;            // per-word alias/typo probability in queries
    std::size_t senses_per_category = 8;
    std::size_t train_sessions = 150000;
    std::size_t pool_size = 400;        // candidates per eval session
    bool cjk = false;                   // render words in katakana without spaces

    void validate() const;
    nlohmann::json to_json() const;
    static WorldSpec from_json(const nlohmann::json& j);
};

/// A latent product meaning. Accessory senses point at their core parent.
struct Sense {
    std::uint32_t id = 0;
    std::uint32_t category = 0;
    std::string surface;
    std::vector<std::string> descriptors;
    bool accessory = false;
    std::optional<std::uint32_t> parent;
    double popularity = 0.0;
};

struct Brand {
    std::string name;
    std::vector<std::uint32_t> categories;
};

struct Item {
    std::string item_id;
    std::string title;
    std::uint32_t sense = 0;
    std::uint32_t brand = 0;
    std::optional<std::uint32_t> descriptor;  // index into the sense's descriptors
    std::optional<std::uint32_t> color;
    std::vector<std::string> words;  // title tokens before joining
};

struct World {
    WorldSpec spec;
    std::vector<std::string> category_names;
    std::vector<Brand> brands;
    std::vector<Sense> senses;
    std::vector<Item> items;
    std::vector<std::string> colors;
    std::vector<std::string> conditions;
    std::vector<std::string> accessory_nouns;
    std::vector<std::string> fillers;
    std::map<std::string, std::string> aliases;  // title word -> query-only synonym
    std::map<std::string, std::vector<std::uint32_t>> surface_senses;
    std::vector<std::vector<std::uint32_t>> items_by_sense;

    std::vector<ItemDoc> item_docs() const;
    nlohmann::json truth() const;
    /// Joins words with spaces, or without in CJK mode.
    std::string join(const std::vector<std::string>& words) const;
};

World generate_world(const WorldSpec& spec);

struct SessionEvent {
    std::string item_id;
    FeedbackGrade grade = FeedbackGrade::View;
    std::uint64_t timestamp = 0;
};

struct SessionLog {
    std::string session_id;
    std::string query;
    std::uint64_t timestamp = 0;
    std::uint32_t intent_sense = 0;
    std::optional<std::uint32_t> intent_brand;
    std::optional<std::uint32_t> intent_descriptor;
    std::optional<std::uint32_t> intent_color;
    bool paraphrase = false;
    std::vector<SessionEvent> events;
};

struct PairRecord {
    std::string query_id;
    std::string query;
    std::string item_id;
    std::string title;
};

struct Sessions {
    std::vector<SessionLog> train;  // purchase events only
    std::vector<SessionLog> eval;   // full candidate pools, temporally after train
    std::vector<PairRecord> pairs;
    std::vector<EvalQuery> eval_queries;
};

/// One query per session; the last spec.n_queries sessions (by timestamp)
/// form the eval slice and the rest yield (query, purchased title) pairs.
Sessions generate_sessions(const World& world, std::size_t n_sessions, const WorldSpec& spec);

/// Title pairs scored 0-5 from latent structure: 5 identical, 4 same sense
/// and brand, 3 same sense, 2 accessory of the other's sense, 1 same
/// category, 0 otherwise.
std::vector<StsPair> generate_sts(const World& world, std::size_t n_pairs, std::uint64_t seed);

struct ParaphraseProbe {
    std::string query;
    std::string target_item_id;
};

/// Queries that restate a core item's title word by word: each content word
/// becomes its alias, or with probability `respell_rate` a misspelling of
/// itself. With respell_rate 0 no query token occurs in any title; misspellings
/// can collide with real words, so callers needing zero-hit probes must check.
std::vector<ParaphraseProbe> generate_paraphrase_probes(const World& world, std::size_t n,
                                                        std::uint64_t seed, double respell_rate = 0.0);

std::vector<TrainingPair> training_pairs(const std::vector<PairRecord>& records);

struct Dataset {
    std::vector<ItemDoc> items;
    std::vector<PairRecord> pairs;
    std::vector<EvalQuery> eval;
    std::vector<StsPair> sts;
};

/// Writes items.jsonl, pairs.jsonl, eval.jsonl, sts.tsv, truth.json.
void write_dataset(const std::filesystem::path& dir, const World& world, const Sessions& sessions,
                   const std::vector<StsPair>& sts);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<PairRecord> read_pairs_jsonl(const std::filesystem::path& path);
void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& pairs);

}  // namespace mercat::datagen
