#include <doctest.h>

#include <cmath>
#include <sstream>

#include "../support/oracles.hpp"
#include "mercat/error.hpp"
#include "mercat/retrieval.hpp"
#include "mercat/rng.hpp"

using namespace mercat;

namespace {

std::vector<ItemDoc> docs(std::vector<std::string> titles) {
    std::vector<ItemDoc> out;
    for (std::size_t i = 0; i < titles.size(); ++i) out.push_back({"d" + std::to_string(i), titles[i], std::nullopt});
    return out;
}

DenseIndex dense_of(const std::vector<std::vector<double>>& rows) {
    DenseIndex idx(rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) idx.upsert("v" + std::to_string(i), Embedding(rows[i]));
    return idx;
}

}  // namespace

TEST_CASE("tokenize") {
    CHECK(tokenize("Nintendo Switch") == std::vector<std::string>{"nintendo", "switch"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("case, strap/charger!") == std::vector<std::string>{"case", "strap", "charger"});
    CHECK(tokenize("\xe4\xbb\xbb\xe5\xa4\xa9") == std::vector<std::string>{"\xe4\xbb\xbb\xe5\xa4\xa9"});
    CHECK(tokenize("\xe3\x82\xa2\xe3\x82\xa4\xe3\x82\xa6").size() == 2);
}

TEST_CASE("bm25 hand case") {
    const auto lex = LexicalIndex::build(docs({"switch"}));
    const auto q = tokenize("switch");
    CHECK(std::abs(lex.bm25_score(q, 0) - std::log(4.0 / 3.0)) < 1e-12);
    CHECK(std::abs(lex.bm25_score(q, 0) - 0.28768) < 1e-5);
    CHECK(lex.bm25_score(tokenize("lite"), 0) == 0.0);
    CHECK(lex.bm25_score(tokenize("switch switch"), 0) == lex.bm25_score(q, 0));
}

TEST_CASE("bm25 monotonicity") {
    const auto lex = LexicalIndex::build(docs({"red red bag", "red bag bag", "blue bag", "blue shoe"}));
    const auto red = tokenize("red");
    CHECK(lex.bm25_score(red, 0) > lex.bm25_score(red, 1));
    CHECK(lex.idf("shoe") > lex.idf("blue"));
    CHECK(lex.idf("blue") > lex.idf("bag"));
}

TEST_CASE("lexical search") {
    const auto d = docs({"nintendo switch console", "switch case", "lamp switch wall", "camera"});
    const auto lex = LexicalIndex::build(d);
    CHECK(lex.search("", 5).empty());
    std::size_t total = 0;
    const auto all = lex.search("switch", 50, &total);
    CHECK(total == 3);
    CHECK(all == oracle::lexical_search(d, "switch", 50));
    CHECK(lex.search("nintendo case", 10) == oracle::lexical_search(d, "nintendo case", 10));
    CHECK(lex.search("switch", 2).size() == 2);
}

TEST_CASE("lexical search against brute force on random corpora") {
    Rng rng(31);
    const std::vector<std::string> vocab{"ka", "mi", "to", "re", "su", "no", "ha", "ze", "po", "lu"};
    for (int corpus = 0; corpus < 20; ++corpus) {
        std::vector<std::string> titles;
        for (int i = 0; i < 30; ++i) {
            std::string t;
            for (std::size_t w = 0, n = 1 + rng.below(6); w < n; ++w) t += rng.pick(vocab) + " ";
            titles.push_back(t);
        }
        const auto d = docs(titles);
        const auto lex = LexicalIndex::build(d);
        for (int q = 0; q < 5; ++q) {
            const std::string query = rng.pick(vocab) + " " + rng.pick(vocab);
            const auto got = lex.search(query, 10);
            const auto want = oracle::lexical_search(d, query, 10);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].item_id == want[i].item_id);
                CHECK(std::abs(got[i].score - want[i].score) < 1e-9);
            }
        }
    }
}

TEST_CASE("lexical upsert replaces a document") {
    auto lex = LexicalIndex::build(docs({"old title", "other"}));
    lex.upsert("d0", "new title");
    CHECK(lex.search("old", 5).empty());
    CHECK(lex.search("new", 5).front().item_id == "d0");
    CHECK(lex.doc_count() == 2);
    lex.upsert("d9", "new item");
    CHECK(lex.doc_count() == 3);
}

TEST_CASE("lexical index persistence") {
    const auto lex = LexicalIndex::build(docs({"a b c", "b c d", "\xe3\x82\xa2\xe3\x82\xa4"}));
    std::stringstream ss;
    lex.save(ss);
    const auto back = LexicalIndex::load(ss);
    CHECK(back.search("b d", 5) == lex.search("b d", 5));
    CHECK(back.doc_count() == 3);
}

TEST_CASE("dense search") {
    const auto idx = dense_of({{1, 0, 0}, {0, 1, 0}, {0.6, 0.8, 0}, {0, 0, 0}});
    const auto top = idx.search(Embedding({0.6, 0.8, 0}), 4);
    CHECK(top.front().item_id == "v2");
    CHECK(top.front().score == doctest::Approx(1.0));
    CHECK(top.size() == 4);
    for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].score >= top[i].score);
    CHECK_THROWS_AS(idx.search(Embedding({1, 0}), 1), ShapeError);

    Rng rng(2);
    DenseIndex big(12);
    std::vector<std::string> ids;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> v(12);
        for (double& x : v) x = rng.uniform(-1, 1);
        big.upsert("x" + std::to_string(i), Embedding(v));
    }
    const auto table = big.to_table();
    std::vector<double> q(12);
    for (double& x : q) x = rng.uniform(-1, 1);
    CHECK(big.search(Embedding(q), 10) == oracle::dense_search(table.data, table.ids, 12, q, 10));
}

TEST_CASE("hybrid search") {
    const auto d = docs({"switch console", "switch case", "lamp"});
    const auto lex = LexicalIndex::build(d);
    DenseIndex dense(2);
    dense.upsert("d0", Embedding({1, 0}));
    dense.upsert("d1", Embedding({0.8, 0.6}));
    dense.upsert("d2", Embedding({0.95, std::sqrt(1 - 0.95 * 0.95)}));

    HybridConfig cfg;
    SUBCASE("gate closed") {
        const auto r = hybrid_search(lex, dense, "switch", Embedding({0, 1}), cfg);
        REQUIRE(r.candidates.size() == 2);
        for (const auto& c : r.candidates) {
            CHECK(c.source == CandidateSource::Lexical);
            CHECK_FALSE(c.dense_score.has_value());
        }
        CHECK(r.diagnostics.low_hit);
        CHECK_FALSE(r.diagnostics.zero_hit);
    }
    SUBCASE("zero hit recovered") {
        const auto r = hybrid_search(lex, dense, "nothing", Embedding({1, 0}), cfg);
        REQUIRE(r.candidates.size() == 2);
        CHECK(r.candidates[0].item_id == "d0");
        CHECK(r.candidates[0].source == CandidateSource::Dense);
        CHECK_FALSE(r.candidates[0].lexical_score.has_value());
        CHECK(r.diagnostics.zero_hit);
        CHECK(r.diagnostics.recovered);
        CHECK(r.diagnostics.dense_added == 2);
    }
    SUBCASE("overlap becomes both") {
        const auto r = hybrid_search(lex, dense, "lamp", Embedding({1, 0}), cfg);
        CHECK(r.candidates[0].item_id == "d2");
        CHECK(r.candidates[0].source == CandidateSource::Both);
        CHECK(r.candidates[0].lexical_score.has_value());
        CHECK(r.candidates[0].dense_score.has_value());
    }
    SUBCASE("score exactly tau is excluded") {
        DenseIndex one(2);
        one.upsert("d0", Embedding({1, 0}));
        const Embedding q({0.9, std::sqrt(0.19)});
        const double s = one.search(q, 1).front().score;
        auto c = cfg;
        c.tau = s;
        CHECK(hybrid_search(lex, one, "nothing", q, c).candidates.empty());
        c.tau = std::nextafter(s, 0.0);
        CHECK(hybrid_search(lex, one, "nothing", q, c).candidates.size() == 1);
        CHECK_FALSE(passes_similarity_gate(0.90, 0.90));
        CHECK(passes_similarity_gate(std::nextafter(0.90, 1.0), 0.90));
    }
}

TEST_CASE("hybrid config validation") {
    HybridConfig c;
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.tau = 1.0;
    c.validate();
    c.lexical_k = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ltr features") {
    const Embedding q({0.6, 0.8, 0.0, 0.0});
    const std::vector<Embedding> cands{q, Embedding({0.0, 0.0, 1.0, 0.0})};
    const auto f = extract_ltr_features(q, cands, 2);
    REQUIRE(f.size() == 2);
    CHECK(f[0].size() == ltr_feature_length(2));
    CHECK(f[0][0] == doctest::Approx(1.0));
    CHECK(f[1][0] == doctest::Approx(0.0));
    CHECK(f[0][1] == doctest::Approx(0.6));
    const auto full = extract_ltr_features(q, cands, 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(full[1][1 + 4 + j] == cands[1][j]);
}
