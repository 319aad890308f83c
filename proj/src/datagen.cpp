#include "mercat/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "mercat/error.hpp"
#include "mercat/hash.hpp"
#include "mercat/index_store.hpp"
#include "mercat/rng.hpp"
#include "mercat/text.hpp"

namespace mercat::datagen {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();
constexpr char32_t kKanaBase = 0x30a2;
constexpr std::uint64_t kSessionEpoch = 1743465600;  // 2025-04-01T00:00:00Z
constexpr std::uint64_t kSessionSpacing = 97;

constexpr std::size_t kColors = 10;
constexpr std::size_t kConditions = 6;
constexpr std::size_t kAccessoryNouns = 8;
constexpr std::size_t kDescriptorsPerSense = 3;
constexpr std::size_t kFillers = 120;
constexpr std::size_t kMaxFillers = 8;
constexpr double kPurchaseRate = 0.85;
constexpr double kPurchaseMatchOdds = 5.0;

class WordFactory {
public:
    WordFactory(std::uint64_t seed, bool cjk) : rng_(seed), cjk_(cjk) {}

    std::string make(std::size_t min_syllables, std::size_t max_syllables) {
        for (;;) {
            const std::size_t n = min_syllables + rng_.below(max_syllables - min_syllables + 1);
            std::string w;
            for (std::size_t i = 0; i < n; ++i) {
                const auto s = static_cast<std::size_t>(rng_.below(kSyllables));
                if (cjk_) {
                    text::append_utf8(w, kKanaBase + static_cast<char32_t>(s));
                } else {
                    w.push_back(kConsonants[s / kVowels.size()]);
                    w.push_back(kVowels[s % kVowels.size()]);
                }
            }
            if (used_.insert(w).second) return w;
        }
    }

    std::vector<std::string> make_many(std::size_t count, std::size_t lo, std::size_t hi) {
        std::vector<std::string> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(make(lo, hi));
        return out;
    }

private:
    Rng rng_;
    bool cjk_;
    std::set<std::string> used_;
};

/// Cumulative-weight sampler over indices.
class Categorical {
public:
    Categorical() = default;
    explicit Categorical(const std::vector<double>& weights) {
        cumulative_.reserve(weights.size());
        double acc = 0.0;
        for (const double w : weights) {
            acc += w;
            cumulative_.push_back(acc);
        }
    }

    bool empty() const noexcept { return cumulative_.empty() || cumulative_.back() <= 0.0; }

    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform() * cumulative_.back();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

std::string typo(const std::string& word, Rng& rng) {
    std::u32string cps = text::decode_utf8(word);
    if (cps.size() < 3) return word + word.substr(word.size() - 1);
    const std::size_t pos = 1 + static_cast<std::size_t>(rng.below(cps.size() - 1));
    switch (rng.below(3)) {
        case 0: cps.erase(pos, 1); break;
        case 1:
            if (cps[pos] != cps[pos - 1]) {
                std::swap(cps[pos], cps[pos - 1]);
                break;
            }
            [[fallthrough]];
        default: cps.insert(pos, 1, cps[pos]); break;
    }
    return text::encode_utf8(cps);
}

std::string item_id_for(std::size_t i) {
    std::string digits = std::to_string(i + 1);
    return "i" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

std::string session_id_for(std::size_t i) {
    std::string digits = std::to_string(i + 1);
    return "s" + std::string(digits.size() < 7 ? 7 - digits.size() : 0, '0') + digits;
}

std::size_t core_count(const World& w) { return w.spec.n_categories * w.spec.senses_per_category; }

struct Intent {
    std::uint32_t sense = 0;
    std::optional<std::uint32_t> brand;
    std::optional<std::uint32_t> descriptor;
    std::optional<std::uint32_t> color;

    std::size_t requested() const noexcept {
        return std::size_t{brand.has_value()} + descriptor.has_value() + color.has_value();
    }
};

class SessionSampler {
public:
    explicit SessionSampler(const World& world) : world_(world) {
        const std::size_t n_core = core_count(world);
        std::vector<double> pop(n_core);
        for (std::size_t s = 0; s < n_core; ++s)
            pop[s] = world.items_by_sense[s].empty() ? 0.0 : world.senses[s].popularity;
        intent_ = Categorical(pop);
        sense_brands_.resize(n_core);
        for (std::size_t s = 0; s < n_core; ++s) {
            std::map<std::uint32_t, double> counts;
            for (const auto idx : world.items_by_sense[s]) counts[world.items[idx].brand] += 1.0;
            std::vector<double> weights;
            for (const auto& [b, c] : counts) {
                sense_brands_[s].first.push_back(b);
                weights.push_back(c);
            }
            sense_brands_[s].second = Categorical(weights);
        }
        for (std::size_t i = 0; i < world.items.size(); ++i) {
            const auto& sense = world.senses[world.items[i].sense];
            by_category_[sense.category].push_back(static_cast<std::uint32_t>(i));
            by_brand_[world.items[i].brand].push_back(static_cast<std::uint32_t>(i));
        }
    }

    Intent intent(Rng& rng) const {
        Intent in;
        in.sense = static_cast<std::uint32_t>(intent_.sample(rng));
        if (rng.bernoulli(0.5) && !sense_brands_[in.sense].first.empty())
            in.brand = sense_brands_[in.sense].first[sense_brands_[in.sense].second.sample(rng)];
        if (rng.bernoulli(0.45)) in.descriptor = static_cast<std::uint32_t>(rng.below(kDescriptorsPerSense));
        if (rng.bernoulli(0.25)) in.color = static_cast<std::uint32_t>(rng.below(world_.colors.size()));
        return in;
    }

    /// Returns the query text; `paraphrase` replaces every word by its alias.
    std::string render_query(const Intent& in, bool paraphrase, Rng& rng) const {
        const Sense& s = world_.senses[in.sense];
        std::vector<std::string> words;
        words.push_back(s.surface);
        if (in.descriptor) words.push_back(s.descriptors[*in.descriptor]);
        if (in.color) words.push_back(world_.colors[*in.color]);
        if (in.brand) {
            const std::string& b = world_.brands[*in.brand].name;
            if (rng.bernoulli(0.7)) words.insert(words.begin(), b);
            else words.push_back(b);
        }
        const double noise = world_.spec.noise_rate;
        for (auto& w : words) {
            if (paraphrase) {
                w = world_.aliases.at(w);
            } else if (rng.bernoulli(noise)) {
                w = rng.bernoulli(0.6) ? world_.aliases.at(w) : typo(w, rng);
            }
        }
        return world_.join(words);
    }

    /// Requested attributes the item carries.
    std::size_t matches(const Intent& in, const Item& it) const noexcept {
        return std::size_t{in.brand && *in.brand == it.brand} + (in.descriptor && it.descriptor == in.descriptor) +
               (in.color && it.color == in.color);
    }

    /// 3 on-sense with every requested attribute, 2 on-sense otherwise,
    /// 1 accessory of the intended product, 0 anything else.
    int relevance(const Intent& in, std::uint32_t item_index) const {
        const Item& it = world_.items[item_index];
        const Sense& s = world_.senses[it.sense];
        if (it.sense == in.sense) return matches(in, it) == in.requested() ? 3 : 2;
        if (s.accessory && s.parent == in.sense) return 1;
        return 0;
    }

    /// Purchase among on-sense items; each matched attribute multiplies the
    /// odds by kPurchaseMatchOdds.
    std::optional<std::uint32_t> purchase(const Intent& in, const std::vector<std::uint32_t>& pool,
                                          Rng& rng) const {
        std::vector<double> weights;
        std::vector<std::uint32_t> choices;
        for (const auto idx : pool) {
            if (world_.items[idx].sense != in.sense) continue;
            choices.push_back(idx);
            weights.push_back(std::pow(kPurchaseMatchOdds, static_cast<double>(matches(in, world_.items[idx]))));
        }
        if (choices.empty()) return std::nullopt;
        return choices[Categorical(weights).sample(rng)];
    }

    std::vector<std::uint32_t> pool(const Intent& in, Rng& rng) const {
        const Sense& s = world_.senses[in.sense];
        std::set<std::uint32_t> chosen;
        auto take = [&](std::vector<std::uint32_t> from, std::size_t limit) {
            rng.shuffle(std::span<std::uint32_t>(from));
            std::size_t added = 0;
            for (const auto idx : from) {
                if (added >= limit || chosen.size() >= world_.spec.pool_size) break;
                if (chosen.insert(idx).second) ++added;
            }
        };
        take(world_.items_by_sense[in.sense], 60);
        std::vector<std::uint32_t> same_surface;
        for (const auto other : world_.surface_senses.at(s.surface))
            if (other != in.sense)
                same_surface.insert(same_surface.end(), world_.items_by_sense[other].begin(),
                                    world_.items_by_sense[other].end());
        take(same_surface, 40);
        take(world_.items_by_sense[core_count(world_) + in.sense], 25);
        if (in.brand) {
            const auto it = by_brand_.find(*in.brand);
            if (it != by_brand_.end()) take(it->second, 20);
        }
        take(by_category_.at(s.category), 100);
        while (chosen.size() < std::min(world_.spec.pool_size, world_.items.size()))
            chosen.insert(static_cast<std::uint32_t>(rng.below(world_.items.size())));
        return {chosen.begin(), chosen.end()};
    }

private:
    const World& world_;
    Categorical intent_;
    std::vector<std::pair<std::vector<std::uint32_t>, Categorical>> sense_brands_;
    std::map<std::uint32_t, std::vector<std::uint32_t>> by_category_;
    std::map<std::uint32_t, std::vector<std::uint32_t>> by_brand_;
};

constexpr double kEngageByRelevance[4] = {0.002, 0.05, 0.15, 0.35};

FeedbackGrade engagement(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.55) return FeedbackGrade::Click;
    if (u < 0.80) return FeedbackGrade::Comment;
    return FeedbackGrade::Like;
}

}  // namespace

void WorldSpec::validate() const {
    if (n_brands == 0 || n_categories == 0 || n_items == 0 || n_queries == 0)
        throw ConfigError("world spec counts must be positive");
    if (senses_per_category == 0 || pool_size == 0) throw ConfigError("world spec counts must be positive");
    for (const auto& [name, v] : {std::pair{"ambiguity_rate", ambiguity_rate},
                                  std::pair{"accessory_rate", accessory_rate},
                                  std::pair{"noise_rate", noise_rate}})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
    if (n_categories < 2 && ambiguity_rate > 0.0)
        throw ConfigError("ambiguity needs at least two categories");
}

nlohmann::json WorldSpec::to_json() const {
    return {{"seed", seed},
            {"n_brands", n_brands},
            {"n_categories", n_categories},
            {"n_items", n_items},
            {"n_queries", n_queries},
            {"ambiguity_rate", ambiguity_rate},
            {"accessory_rate", accessory_rate},
            {"noise_rate", noise_rate},
            {"senses_per_category", senses_per_category},
            {"train_sessions", train_sessions},
            {"pool_size", pool_size},
            {"cjk", cjk}};
}

WorldSpec WorldSpec::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
    WorldSpec s;
    const nlohmann::json defaults = s.to_json();
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw ConfigError("unknown world spec key: " + key);
    try {
        s.seed = j.value("seed", s.seed);
        s.n_brands = j.value("n_brands", s.n_brands);
        s.n_categories = j.value("n_categories", s.n_categories);
        s.n_items = j.value("n_items", s.n_items);
        s.n_queries = j.value("n_queries", s.n_queries);
        s.ambiguity_rate = j.value("ambiguity_rate", s.ambiguity_rate);
        s.accessory_rate = j.value("accessory_rate", s.accessory_rate);
        s.noise_rate = j.value("noise_rate", s.noise_rate);
        s.senses_per_category = j.value("senses_per_category", s.senses_per_category);
        s.train_sessions = j.value("train_sessions", s.train_sessions);
        s.pool_size = j.value("pool_size", s.pool_size);
        s.cjk = j.value("cjk", s.cjk);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("world spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string World::join(const std::vector<std::string>& words) const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0 && !spec.cjk) out.push_back(' ');
        out += words[i];
    }
    return out;
}

std::vector<ItemDoc> World::item_docs() const {
    std::vector<ItemDoc> docs;
    docs.reserve(items.size());
    for (const auto& it : items) docs.push_back({it.item_id, it.title, std::nullopt});
    return docs;
}

nlohmann::json World::truth() const {
    nlohmann::json senses_json = nlohmann::json::array();
    for (const auto& s : senses) {
        nlohmann::json o{{"id", s.id},
                         {"category", category_names[s.category]},
                         {"surface", s.surface},
                         {"descriptors", s.descriptors},
                         {"accessory", s.accessory},
                         {"popularity", s.popularity}};
        o["parent"] = s.parent ? nlohmann::json(*s.parent) : nlohmann::json(nullptr);
        senses_json.push_back(std::move(o));
    }
    nlohmann::json item_json = nlohmann::json::object();
    auto opt = [](const std::optional<std::uint32_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    for (const auto& it : items)
        item_json[it.item_id] = {{"sense", it.sense},
                                 {"brand", brands[it.brand].name},
                                 {"descriptor", opt(it.descriptor)},
                                 {"color", opt(it.color)}};
    nlohmann::json surfaces = nlohmann::json::object();
    for (const auto& [term, ids] : surface_senses) surfaces[term] = ids;
    return {{"spec", spec.to_json()},
            {"senses", senses_json},
            {"items", item_json},
            {"surfaces", surfaces},
            {"aliases", aliases}};
}

World generate_world(const WorldSpec& spec) {
    spec.validate();
    World w;
    w.spec = spec;
    WordFactory words(derive_seed(spec.seed, "vocabulary"), spec.cjk);
    Rng rng(derive_seed(spec.seed, "world"));

    w.category_names = words.make_many(spec.n_categories, 2, 3);
    w.colors = words.make_many(kColors, 2, 2);
    w.conditions = words.make_many(kConditions, 2, 3);
    w.accessory_nouns = words.make_many(kAccessoryNouns, 2, 2);
    w.fillers = words.make_many(kFillers, 1, 3);

    const std::size_t n_core = spec.n_categories * spec.senses_per_category;
    std::vector<std::size_t> rank(n_core);
    for (std::size_t i = 0; i < n_core; ++i) rank[i] = i;
    rng.shuffle(std::span<std::size_t>(rank));
    for (std::size_t i = 0; i < n_core; ++i) {
        Sense s;
        s.id = static_cast<std::uint32_t>(i);
        s.category = static_cast<std::uint32_t>(i / spec.senses_per_category);
        s.surface = words.make(2, 3);
        s.descriptors = words.make_many(kDescriptorsPerSense, 2, 3);
        s.popularity = 1.0 / std::pow(static_cast<double>(rank[i] + 1), 0.7);
        w.senses.push_back(std::move(s));
    }

    // Ambiguity: pair senses from different categories and let the second
    // reuse the first's surface term.
    const auto n_pairs = static_cast<std::size_t>(std::llround(spec.ambiguity_rate * static_cast<double>(n_core) / 2.0));
    if (n_pairs > 0) {
        std::vector<std::uint32_t> order(n_core);
        for (std::size_t i = 0; i < n_core; ++i) order[i] = static_cast<std::uint32_t>(i);
        rng.shuffle(std::span<std::uint32_t>(order));
        std::vector<bool> used(n_core, false);
        std::size_t made = 0;
        for (std::size_t i = 0; i < n_core && made < n_pairs; ++i) {
            const auto a = order[i];
            if (used[a]) continue;
            for (std::size_t j = i + 1; j < n_core; ++j) {
                const auto b = order[j];
                if (used[b] || w.senses[b].category == w.senses[a].category) continue;
                used[a] = used[b] = true;
                w.senses[b].surface = w.senses[a].surface;
                ++made;
                break;
            }
        }
    }

    for (std::size_t i = 0; i < n_core; ++i) {
        Sense acc;
        acc.id = static_cast<std::uint32_t>(n_core + i);
        acc.category = w.senses[i].category;
        acc.surface = w.senses[i].surface;
        acc.accessory = true;
        acc.parent = static_cast<std::uint32_t>(i);
        acc.popularity = 0.0;
        w.senses.push_back(std::move(acc));
    }
    for (std::size_t i = 0; i < n_core; ++i) w.surface_senses[w.senses[i].surface].push_back(static_cast<std::uint32_t>(i));

    std::vector<std::vector<std::uint32_t>> category_brands(spec.n_categories);
    for (std::size_t b = 0; b < spec.n_brands; ++b) {
        Brand brand;
        brand.name = words.make(2, 3);
        brand.categories.push_back(static_cast<std::uint32_t>(b % spec.n_categories));
        if (spec.n_categories > 1 && rng.bernoulli(0.25)) {
            const auto extra = static_cast<std::uint32_t>(rng.below(spec.n_categories));
            if (extra != brand.categories.front()) brand.categories.push_back(extra);
        }
        for (const auto c : brand.categories) category_brands[c].push_back(static_cast<std::uint32_t>(b));
        w.brands.push_back(std::move(brand));
    }
    // With fewer brands than categories, brands also sell in the leftovers.
    for (std::size_t c = 0; c < spec.n_categories; ++c) {
        if (!category_brands[c].empty()) continue;
        const auto b = static_cast<std::uint32_t>(rng.below(spec.n_brands));
        w.brands[b].categories.push_back(static_cast<std::uint32_t>(c));
        category_brands[c].push_back(b);
    }

    auto alias_for = [&](const std::string& word) {
        if (!w.aliases.contains(word)) w.aliases[word] = words.make(2, 3);
    };
    for (const auto& b : w.brands) alias_for(b.name);
    for (std::size_t i = 0; i < n_core; ++i) {
        alias_for(w.senses[i].surface);
        for (const auto& d : w.senses[i].descriptors) alias_for(d);
    }
    for (const auto& c : w.colors) alias_for(c);
    for (const auto& c : w.conditions) alias_for(c);
    for (const auto& a : w.accessory_nouns) alias_for(a);

    double pop_total = 0.0;
    for (std::size_t i = 0; i < n_core; ++i) pop_total += w.senses[i].popularity;
    std::vector<double> item_weights(n_core);
    for (std::size_t i = 0; i < n_core; ++i)
        item_weights[i] = 0.5 * w.senses[i].popularity / pop_total + 0.5 / static_cast<double>(n_core);
    const Categorical item_sense(item_weights);
    std::vector<double> filler_weights(kFillers);
    for (std::size_t i = 0; i < kFillers; ++i) filler_weights[i] = 1.0 / std::sqrt(static_cast<double>(i + 1));
    const Categorical filler_pick(filler_weights);

    w.items_by_sense.assign(w.senses.size(), {});
    w.items.reserve(spec.n_items);
    for (std::size_t i = 0; i < spec.n_items; ++i) {
        const auto core = static_cast<std::uint32_t>(item_sense.sample(rng));
        const bool accessory = rng.bernoulli(spec.accessory_rate);
        const Sense& s = w.senses[core];
        const auto brand = rng.pick(category_brands[s.category]);
        std::vector<std::string> t;
        std::optional<std::uint32_t> descriptor;
        std::optional<std::uint32_t> color;
        if (accessory) {
            t.push_back(rng.pick(w.accessory_nouns));
            t.push_back(w.brands[brand].name);
            t.push_back(s.surface);
            if (rng.bernoulli(0.3)) t.push_back(rng.pick(s.descriptors));
            if (rng.bernoulli(0.5)) t.push_back(rng.pick(w.colors));
            if (rng.bernoulli(0.3)) t.push_back(rng.pick(w.conditions));
        } else {
            t.push_back(w.brands[brand].name);
            t.push_back(s.surface);
            if (rng.bernoulli(0.75)) {
                descriptor = static_cast<std::uint32_t>(rng.below(kDescriptorsPerSense));
                t.push_back(s.descriptors[*descriptor]);
            }
            if (rng.bernoulli(0.5)) {
                color = static_cast<std::uint32_t>(rng.below(kColors));
                t.push_back(w.colors[*color]);
            }
            if (rng.bernoulli(0.35)) t.push_back(rng.pick(w.conditions));
            if (rng.bernoulli(0.3)) t.push_back(std::to_string(100 + rng.below(900)));
            if (rng.bernoulli(0.3)) std::rotate(t.begin(), t.begin() + 1, t.end());
        }
        // Seller boilerplate (shipping, promo, condition chatter) at random
        // positions; it carries no product meaning and never occurs in queries.
        for (auto n = rng.below(kMaxFillers + 1); n > 0; --n) {
            const std::string& f = w.fillers[filler_pick.sample(rng)];
            if (std::find(t.begin(), t.end(), f) != t.end()) continue;
            t.insert(t.begin() + static_cast<std::ptrdiff_t>(rng.below(t.size() + 1)), f);
        }
        Item item;
        item.item_id = item_id_for(i);
        item.title = w.join(t);
        item.words = std::move(t);
        item.sense = accessory ? static_cast<std::uint32_t>(n_core + core) : core;
        item.brand = brand;
        item.descriptor = descriptor;
        item.color = color;
        w.items_by_sense[item.sense].push_back(static_cast<std::uint32_t>(i));
        w.items.push_back(std::move(item));
    }
    return w;
}

Sessions generate_sessions(const World& world, std::size_t n_sessions, const WorldSpec& spec) {
    spec.validate();
    const SessionSampler sampler(world);
    Rng rng(derive_seed(spec.seed, "sessions"));
    const std::size_t n_eval = std::min(spec.n_queries, n_sessions);
    const std::size_t n_train = n_sessions - n_eval;
    const double paraphrase_rate = std::max(0.0, spec.noise_rate - 0.2);

    Sessions out;
    out.train.reserve(n_train);
    out.eval.reserve(n_eval);
    for (std::size_t i = 0; i < n_sessions; ++i) {
        const bool is_eval = i >= n_train;
        SessionLog log;
        log.session_id = session_id_for(i);
        log.timestamp = kSessionEpoch + kSessionSpacing * i;
        const Intent in = sampler.intent(rng);
        log.intent_sense = in.sense;
        log.intent_brand = in.brand;
        log.intent_descriptor = in.descriptor;
        log.intent_color = in.color;
        log.paraphrase = rng.bernoulli(paraphrase_rate) || (is_eval && i == n_train && spec.noise_rate > 0.3);
        log.query = sampler.render_query(in, log.paraphrase, rng);

        if (!is_eval) {
            // Training sessions only contribute their purchase, so the rest
            // of the candidate pool is never materialized.
            if (rng.bernoulli(kPurchaseRate)) {
                if (const auto idx = sampler.purchase(in, world.items_by_sense[in.sense], rng)) {
                    log.events.push_back({world.items[*idx].item_id, FeedbackGrade::Purchase, log.timestamp + 30});
                    out.pairs.push_back({log.session_id, log.query, world.items[*idx].item_id, world.items[*idx].title});
                }
            }
            out.train.push_back(std::move(log));
            continue;
        }

        const auto pool = sampler.pool(in, rng);
        std::vector<FeedbackGrade> grades(pool.size(), FeedbackGrade::View);
        std::uint64_t t = log.timestamp;
        for (std::size_t c = 0; c < pool.size(); ++c) {
            log.events.push_back({world.items[pool[c]].item_id, FeedbackGrade::View, ++t});
            if (rng.bernoulli(kEngageByRelevance[sampler.relevance(in, pool[c])])) {
                grades[c] = engagement(rng);
                log.events.push_back({world.items[pool[c]].item_id, grades[c], ++t});
            }
        }
        if (rng.bernoulli(kPurchaseRate)) {
            if (const auto idx = sampler.purchase(in, pool, rng)) {
                const auto pos = static_cast<std::size_t>(std::find(pool.begin(), pool.end(), *idx) - pool.begin());
                grades[pos] = FeedbackGrade::Purchase;
                log.events.push_back({world.items[*idx].item_id, FeedbackGrade::Purchase, ++t});
            }
        }
        EvalQuery q;
        q.query_id = log.session_id;
        q.text = log.query;
        q.candidates.reserve(pool.size());
        for (std::size_t c = 0; c < pool.size(); ++c) q.candidates.emplace_back(world.items[pool[c]].item_id, grades[c]);
        out.eval_queries.push_back(std::move(q));
        out.eval.push_back(std::move(log));
    }
    return out;
}

std::vector<StsPair> generate_sts(const World& world, std::size_t n_pairs, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "sts"));
    const std::size_t n_core = core_count(world);
    std::vector<std::uint32_t> core_items;
    std::vector<std::uint32_t> accessory_items;
    for (std::size_t i = 0; i < world.items.size(); ++i)
        (world.senses[world.items[i].sense].accessory ? accessory_items : core_items)
            .push_back(static_cast<std::uint32_t>(i));
    if (core_items.size() < 2) throw ValidationError("STS generation needs at least two core items");

    // gold -> relative frequency
    const std::vector<double> gold_weights{2.0, 2.0, 2.0, 2.0, 2.0, 1.0};
    const Categorical gold_pick(gold_weights);
    std::vector<StsPair> out;
    out.reserve(n_pairs);
    std::size_t attempts = 0;
    while (out.size() < n_pairs) {
        if (++attempts > 200 * (n_pairs + 10)) throw ValidationError("world too small for STS generation");
        const int gold = static_cast<int>(gold_pick.sample(rng));
        const auto a = rng.pick(core_items);
        const Item& ia = world.items[a];
        const Sense& sa = world.senses[ia.sense];
        std::optional<std::uint32_t> b;
        auto pick_where = [&](const std::vector<std::uint32_t>& from, auto&& pred) -> std::optional<std::uint32_t> {
            for (int tries = 0; tries < 64 && !from.empty(); ++tries) {
                const auto c = rng.pick(from);
                if (pred(world.items[c], c)) return c;
            }
            return std::nullopt;
        };
        switch (gold) {
            case 5: b = a; break;
            case 4:
                b = pick_where(world.items_by_sense[ia.sense],
                               [&](const Item& c, std::uint32_t ci) { return ci != a && c.brand == ia.brand; });
                break;
            case 3:
                b = pick_where(world.items_by_sense[ia.sense],
                               [&](const Item& c, std::uint32_t) { return c.brand != ia.brand; });
                break;
            case 2:
                b = pick_where(world.items_by_sense[n_core + ia.sense], [](const Item&, std::uint32_t) { return true; });
                break;
            case 1:
                b = pick_where(core_items, [&](const Item& c, std::uint32_t) {
                    return c.sense != ia.sense && world.senses[c.sense].category == sa.category;
                });
                break;
            default:
                b = pick_where(core_items, [&](const Item& c, std::uint32_t) {
                    return world.senses[c.sense].category != sa.category;
                });
                break;
        }
        if (!b) continue;
        StsPair p{ia.title, world.items[*b].title, static_cast<double>(gold)};
        if (rng.bernoulli(0.5)) std::swap(p.sentence_a, p.sentence_b);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<ParaphraseProbe> generate_paraphrase_probes(const World& world, std::size_t n, std::uint64_t seed,
                                                        double respell_rate) {
    if (!(respell_rate >= 0.0 && respell_rate <= 1.0)) throw ConfigError("respell_rate must be in [0, 1]");
    Rng rng(derive_seed(seed, "paraphrase"));
    std::vector<std::uint32_t> core_items;
    for (std::size_t i = 0; i < world.items.size(); ++i)
        if (!world.senses[world.items[i].sense].accessory) core_items.push_back(static_cast<std::uint32_t>(i));
    if (core_items.empty()) return {};
    std::set<std::string> queryable;
    for (const auto& b : world.brands) queryable.insert(b.name);
    for (std::size_t s = 0; s < core_count(world); ++s) {
        queryable.insert(world.senses[s].surface);
        queryable.insert(world.senses[s].descriptors.begin(), world.senses[s].descriptors.end());
    }
    queryable.insert(world.colors.begin(), world.colors.end());

    std::vector<ParaphraseProbe> out;
    out.reserve(n);
    while (out.size() < n) {
        const Item& it = world.items[rng.pick(core_items)];
        std::vector<std::string> aliased;
        for (const auto& word : it.words)
            if (queryable.contains(word))
                aliased.push_back(respell_rate > 0.0 && rng.bernoulli(respell_rate) ? typo(word, rng)
                                                                                    : world.aliases.at(word));
        out.push_back({world.join(aliased), it.item_id});
    }
    return out;
}

std::vector<TrainingPair> training_pairs(const std::vector<PairRecord>& records) {
    std::vector<TrainingPair> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.query, r.title});
    return out;
}

std::vector<PairRecord> read_pairs_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<PairRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("query_id").get<std::string>(), j.at("query").get<std::string>(),
                           j.at("item_id").get<std::string>(), j.at("title").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& pairs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& p : pairs)
        out << nlohmann::json{{"query_id", p.query_id}, {"query", p.query}, {"item_id", p.item_id}, {"title", p.title}}
                   .dump()
            << '\n';
}

void write_dataset(const std::filesystem::path& dir, const World& world, const Sessions& sessions,
                   const std::vector<StsPair>& sts) {
    std::filesystem::create_directories(dir);
    write_items_jsonl(dir / "items.jsonl", world.item_docs());
    write_pairs_jsonl(dir / "pairs.jsonl", sessions.pairs);
    write_eval_jsonl(dir / "eval.jsonl", sessions.eval_queries);
    write_sts_tsv(dir / "sts.tsv", sts);
    nlohmann::json truth = world.truth();
    auto opt = [](const std::optional<std::uint32_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json intents = nlohmann::json::object();
    for (const auto& s : sessions.eval) {
        intents[s.session_id] = {{"sense", s.intent_sense},
                                 {"brand", s.intent_brand ? nlohmann::json(world.brands[*s.intent_brand].name)
                                                          : nlohmann::json(nullptr)},
                                 {"descriptor", opt(s.intent_descriptor)},
                                 {"color", opt(s.intent_color)},
                                 {"paraphrase", s.paraphrase}};
    }
    truth["eval_intents"] = std::move(intents);
    std::ofstream out(dir / "truth.json");
    if (!out) throw Error("cannot write " + (dir / "truth.json").string());
    out << truth.dump() << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("data directory not found: " + dir.string());
    for (const char* name : {"items.jsonl", "pairs.jsonl", "eval.jsonl", "sts.tsv"})
        if (!std::filesystem::exists(dir / name)) throw Error("missing " + (dir / name).string());
    Dataset d;
    d.items = read_items_jsonl(dir / "items.jsonl");
    d.pairs = read_pairs_jsonl(dir / "pairs.jsonl");
    d.eval = read_eval_jsonl(dir / "eval.jsonl");
    d.sts = read_sts_tsv(dir / "sts.tsv");
    return d;
}

}  // namespace mercat::datagen
