#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mercat/datagen.hpp"
#include "mercat/error.hpp"
#include "mercat/retrieval.hpp"

using namespace mercat;
using namespace mercat::datagen;

namespace {

WorldSpec small_spec() {
    WorldSpec s;
    s.seed = 13;
    s.n_brands = 30;
    s.n_categories = 20;
    s.n_items = 1500;
    s.n_queries = 200;
    s.senses_per_category = 4;
    s.train_sessions = 2000;
    s.pool_size = 100;
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("spec json") {
    const auto s = small_spec();
    const auto back = WorldSpec::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
    CHECK_THROWS_AS(WorldSpec::from_json({{"n_itemz", 5}}), ConfigError);
    auto bad = s;
    bad.noise_rate = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = s;
    bad.n_items = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("world generation") {
    const auto spec = small_spec();
    const auto w = generate_world(spec);
    CHECK(w.items.size() == spec.n_items);
    std::set<std::string> ids;
    for (const auto& it : w.items) {
        ids.insert(it.item_id);
        CHECK_FALSE(it.title.empty());
        CHECK(it.sense < w.senses.size());
        CHECK(it.brand < w.brands.size());
    }
    CHECK(ids.size() == spec.n_items);
    for (const auto& s : w.senses)
        if (s.accessory) {
            REQUIRE(s.parent.has_value());
            CHECK_FALSE(w.senses[*s.parent].accessory);
        }
    CHECK(generate_world(spec).truth() == w.truth());
}

TEST_CASE("ambiguity rate zero gives one sense per surface") {
    auto spec = small_spec();
    spec.ambiguity_rate = 0.0;
    const auto w = generate_world(spec);
    for (const auto& [surface, senses] : w.surface_senses) CHECK(senses.size() == 1);
    spec.ambiguity_rate = 0.5;
    const auto amb = generate_world(spec);
    std::size_t shared = 0;
    for (const auto& [surface, senses] : amb.surface_senses) shared += senses.size() >= 2;
    CHECK(shared > 0);
}

TEST_CASE("sessions") {
    const auto spec = small_spec();
    const auto w = generate_world(spec);
    const auto s = generate_sessions(w, spec.train_sessions + spec.n_queries, spec);
    CHECK(s.eval.size() == spec.n_queries);
    CHECK(s.eval_queries.size() == spec.n_queries);

    std::set<std::string> train_ids, eval_ids;
    std::uint64_t last_train = 0;
    for (const auto& l : s.train) {
        train_ids.insert(l.session_id);
        last_train = std::max(last_train, l.timestamp);
    }
    for (const auto& l : s.eval) {
        eval_ids.insert(l.session_id);
        CHECK(l.timestamp > last_train);
    }
    for (const auto& id : eval_ids) CHECK(train_ids.count(id) == 0);
    std::set<std::string> pair_ids;
    for (const auto& p : s.pairs) pair_ids.insert(p.query_id);
    for (const auto& id : eval_ids) CHECK(pair_ids.count(id) == 0);

    std::set<std::string> items;
    for (const auto& it : w.items) items.insert(it.item_id);
    for (const auto& p : s.pairs) CHECK(items.count(p.item_id) == 1);
    for (const auto& q : s.eval_queries) {
        std::set<std::string> seen;
        for (const auto& [id, g] : q.candidates) {
            CHECK(items.count(id) == 1);
            CHECK(seen.insert(id).second);
        }
    }
    for (const auto& l : s.eval) {
        int purchases = 0;
        for (const auto& e : l.events) purchases += e.grade == FeedbackGrade::Purchase;
        CHECK(purchases <= 1);
    }
    std::size_t long_queries = 0;
    for (const auto& q : s.eval_queries) long_queries += q.is_long();
    CHECK(long_queries > 0);
}

TEST_CASE("noise and ambiguity off: purchases share the query's sense") {
    auto spec = small_spec();
    spec.noise_rate = 0.0;
    spec.ambiguity_rate = 0.0;
    const auto w = generate_world(spec);
    const auto s = generate_sessions(w, 3000, spec);
    std::map<std::string, std::uint32_t> sense_of;
    for (const auto& it : w.items) sense_of[it.item_id] = it.sense;
    std::size_t checked = 0;
    for (const auto* logs : {&s.train, &s.eval})
        for (const auto& l : *logs)
            for (const auto& e : l.events)
                if (e.grade == FeedbackGrade::Purchase) {
                    CHECK(sense_of.at(e.item_id) == l.intent_sense);
                    // The rendered query names the sense's surface word.
                    CHECK(l.query.find(w.senses[l.intent_sense].surface) != std::string::npos);
                    ++checked;
                }
    CHECK(checked > 1000);
}

TEST_CASE("grade frequencies follow the grade order") {
    auto spec = small_spec();
    spec.n_queries = 10000;
    const auto w = generate_world(spec);
    const auto s = generate_sessions(w, 10000, spec);
    std::map<FeedbackGrade, std::size_t> count;
    for (const auto& q : s.eval_queries)
        for (const auto& [id, g] : q.candidates) ++count[g];
    CHECK(count[FeedbackGrade::View] >= count[FeedbackGrade::Click]);
    CHECK(count[FeedbackGrade::Click] >= count[FeedbackGrade::Comment]);
    CHECK(count[FeedbackGrade::Comment] >= count[FeedbackGrade::Like]);
    CHECK(count[FeedbackGrade::Like] >= count[FeedbackGrade::Purchase]);
    CHECK(count[FeedbackGrade::Purchase] > 0);
}

TEST_CASE("noisy eval slices contain a zero-hit query") {
    auto spec = small_spec();
    spec.noise_rate = 0.35;
    const auto w = generate_world(spec);
    const auto s = generate_sessions(w, 1000, spec);
    const auto docs = w.item_docs();
    const auto lex = LexicalIndex::build(docs);
    std::size_t zero = 0;
    for (const auto& q : s.eval_queries) {
        std::size_t total = 0;
        lex.search(q.text, 1, &total);
        zero += total == 0;
    }
    CHECK(zero >= 1);
}

TEST_CASE("sts pairs") {
    const auto w = generate_world(small_spec());
    const auto sts = generate_sts(w, 500, 3);
    CHECK(sts.size() == 500);
    std::map<std::string, const Item*> by_title;
    std::map<std::string, int> title_count;
    for (const auto& it : w.items) {
        by_title.emplace(it.title, &it);
        ++title_count[it.title];
    }
    std::set<double> golds;
    for (const auto& p : sts) {
        golds.insert(p.gold);
        if (p.sentence_a == p.sentence_b) CHECK(p.gold == 5.0);
        const auto a = by_title.find(p.sentence_a), b = by_title.find(p.sentence_b);
        if (a == by_title.end() || b == by_title.end()) continue;
        if (title_count[p.sentence_a] > 1 || title_count[p.sentence_b] > 1) continue;
        const auto& sa = w.senses[a->second->sense];
        const auto& sb = w.senses[b->second->sense];
        if (sa.category != sb.category) CHECK(p.gold == 0.0);
    }
    CHECK(golds.size() == 6);
    const auto again = generate_sts(w, 500, 3);
    for (std::size_t i = 0; i < sts.size(); ++i) CHECK(again[i].sentence_a == sts[i].sentence_a);
}

TEST_CASE("paraphrase probes share no token with any title") {
    const auto w = generate_world(small_spec());
    const auto probes = generate_paraphrase_probes(w, 50, 4);
    CHECK(probes.size() == 50);
    const auto lex = LexicalIndex::build(w.item_docs());
    for (const auto& p : probes) {
        std::size_t total = 0;
        lex.search(p.query, 1, &total);
        CHECK(total == 0);
    }
}

TEST_CASE("respelled probes misspell title words instead of aliasing them") {
    const auto w = generate_world(small_spec());
    CHECK(generate_paraphrase_probes(w, 5, 4, 0.0).front().query == generate_paraphrase_probes(w, 5, 4).front().query);
    CHECK_THROWS_AS(generate_paraphrase_probes(w, 5, 4, 1.5), ConfigError);
    std::set<std::string> alias_words;
    for (const auto& [word, alias] : w.aliases) alias_words.insert(alias);
    const auto probes = generate_paraphrase_probes(w, 50, 4, 1.0);
    std::size_t misspelled = 0, tokens = 0;
    for (const auto& p : probes) {
        std::set<std::string> title_words;
        for (const auto& t : tokenize(w.items[std::stoul(p.target_item_id.substr(1)) - 1].title)) title_words.insert(t);
        for (const auto& t : tokenize(p.query)) {
            ++tokens;
            CHECK_FALSE(alias_words.contains(t));
            misspelled += !title_words.contains(t);
        }
    }
    CHECK(tokens > 0);
    CHECK(misspelled == tokens);
}

TEST_CASE("cjk rendering") {
    auto spec = small_spec();
    spec.cjk = true;
    const auto w = generate_world(spec);
    const auto& title = w.items.front().title;
    CHECK(title.find(' ') == std::string::npos);
    CHECK(tokenize(title).size() >= 2);
}

TEST_CASE("written files are deterministic and consistent") {
    const auto spec = small_spec();
    const auto a = fresh_dir("mercat_dg_a"), b = fresh_dir("mercat_dg_b");
    for (const auto& dir : {a, b}) {
        const auto w = generate_world(spec);
        write_dataset(dir, w, generate_sessions(w, 1500, spec), generate_sts(w, 100, spec.seed));
    }
    for (const char* f : {"items.jsonl", "pairs.jsonl", "eval.jsonl", "sts.tsv", "truth.json"})
        CHECK(slurp(a / f) == slurp(b / f));

    const auto d = load_dataset(a);
    CHECK(d.items.size() == spec.n_items);
    CHECK(d.eval.size() == spec.n_queries);
    CHECK(d.sts.size() == 100);
    std::set<std::string> ids;
    for (const auto& it : d.items) ids.insert(it.item_id);
    for (const auto& p : d.pairs) CHECK(ids.count(p.item_id) == 1);
    const auto truth = nlohmann::json::parse(slurp(a / "truth.json"));
    CHECK(truth.at("items").size() == spec.n_items);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}
