#include "mercat/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <unordered_set>

#include "mercat/binary_io.hpp"
#include "mercat/error.hpp"
#include "mercat/text.hpp"

namespace mercat {

std::vector<std::string> tokenize(std::string_view input) {
    const std::u32string cps = text::to_lower(text::decode_utf8(input));
    std::vector<std::string> tokens;
    std::u32string word;
    std::u32string run;

    auto flush_word = [&] {
        if (!word.empty()) tokens.push_back(text::encode_utf8(word));
        word.clear();
    };
    auto flush_run = [&] {
        if (run.size() == 1) {
            tokens.push_back(text::encode_utf8(run));
        } else {
            for (std::size_t i = 0; i + 1 < run.size(); ++i)
                tokens.push_back(text::encode_utf8(run.substr(i, 2)));
        }
        run.clear();
    };

    for (char32_t cp : cps) {
        if (text::is_space(cp) || text::is_punct(cp)) {
            flush_word();
            flush_run();
        } else if (text::is_cjk(cp)) {
            flush_word();
            run.push_back(cp);
        } else {
            flush_run();
            word.push_back(cp);
        }
    }
    flush_word();
    flush_run();
    return tokens;
}

bool ranks_before(const ScoredItem& a, const ScoredItem& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
}

namespace {

std::vector<std::string> unique_in_order(std::span<const std::string> tokens) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& t : tokens)
        if (seen.insert(t).second) out.push_back(t);
    return out;
}

void top_k(std::vector<ScoredItem>& items, std::size_t k) {
    if (items.size() > k) {
        std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(),
                          ranks_before);
        items.resize(k);
    } else {
        std::sort(items.begin(), items.end(), ranks_before);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// LexicalIndex

LexicalIndex LexicalIndex::build(std::span<const ItemDoc> docs, Bm25Params params) {
    LexicalIndex idx(params);
    for (const auto& d : docs) {
        if (idx.ordinal_of(d.item_id)) throw ValidationError("duplicate item_id: " + d.item_id);
        idx.upsert(d.item_id, d.title);
    }
    return idx;
}

double LexicalIndex::avgdl() const noexcept {
    return ids_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(ids_.size());
}

std::optional<std::uint32_t> LexicalIndex::ordinal_of(const std::string& item_id) const {
    const auto it = ordinal_.find(item_id);
    if (it == ordinal_.end()) return std::nullopt;
    return it->second;
}

std::size_t LexicalIndex::document_frequency(const std::string& term) const {
    const auto* p = postings(term);
    return p ? p->size() : 0;
}

const std::vector<LexicalIndex::Posting>* LexicalIndex::postings(const std::string& term) const {
    const auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

double LexicalIndex::idf(const std::string& term) const {
    const auto n = static_cast<double>(ids_.size());
    const auto df = static_cast<double>(document_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double LexicalIndex::term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const noexcept {
    const double f = tf;
    const double norm = 1.0 - params_.b + params_.b * static_cast<double>(dl) / avgdl();
    return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * norm);
}

void LexicalIndex::remove_terms(std::uint32_t doc) {
    for (const auto& term : doc_terms_[doc]) {
        auto it = postings_.find(term);
        auto& list = it->second;
        const auto pos = std::lower_bound(list.begin(), list.end(), doc,
                                          [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        list.erase(pos);
        if (list.empty()) postings_.erase(it);
    }
    total_length_ -= lengths_[doc];
    lengths_[doc] = 0;
    doc_terms_[doc].clear();
}

std::uint32_t LexicalIndex::upsert(const std::string& item_id, std::string_view title) {
    std::uint32_t doc;
    if (const auto existing = ordinal_of(item_id)) {
        doc = *existing;
        remove_terms(doc);
    } else {
        doc = static_cast<std::uint32_t>(ids_.size());
        ids_.push_back(item_id);
        ordinal_.emplace(item_id, doc);
        lengths_.push_back(0);
        doc_terms_.emplace_back();
    }

    const auto tokens = tokenize(title);
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    lengths_[doc] = static_cast<std::uint32_t>(tokens.size());
    total_length_ += tokens.size();
    for (const auto& [term, count] : tf) {
        auto& list = postings_[term];
        const auto pos = std::lower_bound(list.begin(), list.end(), doc,
                                          [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        list.insert(pos, Posting{doc, count});
        doc_terms_[doc].push_back(term);
    }
    return doc;
}

double LexicalIndex::bm25_score(std::span<const std::string> query_tokens, std::uint32_t doc) const {
    if (doc >= ids_.size()) throw RangeError("bm25_score: unknown document ordinal");
    double score = 0.0;
    for (const auto& term : unique_in_order(query_tokens)) {
        const auto* list = postings(term);
        if (!list) continue;
        const auto pos = std::lower_bound(list->begin(), list->end(), doc,
                                          [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (pos == list->end() || pos->doc != doc) continue;
        score += term_weight(idf(term), pos->tf, lengths_[doc]);
    }
    return score;
}

std::vector<ScoredItem> LexicalIndex::search(std::string_view query, std::size_t k,
                                             std::size_t* total_matches) const {
    const auto terms = unique_in_order(tokenize(query));
    std::vector<double> acc(ids_.size(), 0.0);
    std::vector<std::uint32_t> touched;
    std::vector<char> seen(ids_.size(), 0);
    for (const auto& term : terms) {
        const auto* list = postings(term);
        if (!list) continue;
        const double w = idf(term);
        for (const auto& p : *list) {
            acc[p.doc] += term_weight(w, p.tf, lengths_[p.doc]);
            if (!seen[p.doc]) {
                seen[p.doc] = 1;
                touched.push_back(p.doc);
            }
        }
    }
    if (total_matches) *total_matches = touched.size();
    std::vector<ScoredItem> out;
    out.reserve(touched.size());
    for (auto d : touched) out.push_back({ids_[d], acc[d]});
    top_k(out, k);
    return out;
}

// MLEX file: "MLEX" u8(version) f64 k1, f64 b (as raw bits)
//            u32 N, N x (string id, u32 length)
//            u32 T, T x (string term, u32 P, P x (u32 doc, u32 tf)), terms sorted.

void LexicalIndex::save(std::ostream& out) const {
    io::write_magic(out, "MLEX");
    io::write_uint<std::uint8_t>(out, 1);
    io::write_uint(out, std::bit_cast<std::uint64_t>(params_.k1));
    io::write_uint(out, std::bit_cast<std::uint64_t>(params_.b));
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(ids_.size()));
    for (std::size_t d = 0; d < ids_.size(); ++d) {
        io::write_string(out, ids_[d]);
        io::write_uint<std::uint32_t>(out, lengths_[d]);
    }
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [t, _] : postings_) terms.push_back(&t);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(terms.size()));
    for (const auto* t : terms) {
        io::write_string(out, *t);
        const auto& list = postings_.at(*t);
        io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            io::write_uint<std::uint32_t>(out, p.doc);
            io::write_uint<std::uint32_t>(out, p.tf);
        }
    }
}

LexicalIndex LexicalIndex::load(std::istream& in) {
    io::expect_magic(in, "MLEX");
    if (io::read_uint<std::uint8_t>(in) != 1) throw FormatError("unsupported MLEX version");
    Bm25Params params;
    params.k1 = std::bit_cast<double>(io::read_uint<std::uint64_t>(in));
    params.b = std::bit_cast<double>(io::read_uint<std::uint64_t>(in));
    LexicalIndex idx(params);
    const auto n = io::read_uint<std::uint32_t>(in);
    idx.doc_terms_.resize(n);
    for (std::uint32_t d = 0; d < n; ++d) {
        idx.ids_.push_back(io::read_string(in));
        idx.ordinal_.emplace(idx.ids_.back(), d);
        idx.lengths_.push_back(io::read_uint<std::uint32_t>(in));
        idx.total_length_ += idx.lengths_.back();
    }
    const auto terms = io::read_uint<std::uint32_t>(in);
    for (std::uint32_t t = 0; t < terms; ++t) {
        std::string term = io::read_string(in);
        const auto count = io::read_uint<std::uint32_t>(in);
        std::vector<Posting> list(count);
        for (auto& p : list) {
            p.doc = io::read_uint<std::uint32_t>(in);
            p.tf = io::read_uint<std::uint32_t>(in);
            if (p.doc >= n) throw FormatError("posting references unknown document");
            idx.doc_terms_[p.doc].push_back(term);
        }
        idx.postings_.emplace(std::move(term), std::move(list));
    }
    return idx;
}

// ---------------------------------------------------------------------------
// DenseIndex

DenseIndex DenseIndex::from_table(const EmbeddingTable& table) {
    DenseIndex idx(table.dim);
    idx.data_.reserve(table.data.size());
    idx.ids_.reserve(table.count());
    for (std::size_t i = 0; i < table.count(); ++i) idx.upsert(table.ids[i], table.embedding(i));
    return idx;
}

Embedding DenseIndex::embedding(std::size_t i) const {
    const auto r = row(i);
    return Embedding(std::vector<double>(r.begin(), r.end()));
}

std::optional<std::size_t> DenseIndex::find(const std::string& item_id) const {
    const auto it = row_of_.find(item_id);
    if (it == row_of_.end()) return std::nullopt;
    return it->second;
}

void DenseIndex::upsert(const std::string& item_id, const Embedding& e) {
    if (e.dim() != dim_)
        throw ShapeError("dense index dim " + std::to_string(dim_) + " vs embedding dim " +
                         std::to_string(e.dim()));
    const Embedding unit = l2_normalize(e);
    std::size_t r;
    if (const auto existing = find(item_id)) {
        r = *existing;
    } else {
        r = ids_.size();
        ids_.push_back(item_id);
        row_of_.emplace(item_id, r);
        data_.resize(data_.size() + dim_);
    }
    for (std::size_t c = 0; c < dim_; ++c) data_[r * dim_ + c] = static_cast<float>(unit[c]);
}

std::vector<ScoredItem> DenseIndex::search(const Embedding& query, std::size_t k) const {
    if (query.dim() != dim_)
        throw ShapeError("dense_search: query dim " + std::to_string(query.dim()) + " vs index dim " +
                         std::to_string(dim_));
    const Embedding q = l2_normalize(query);
    const auto qv = q.values();

    std::vector<std::pair<double, std::uint32_t>> scored(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
        scored[i] = {std::clamp(dot(row(i), qv), -1.0, 1.0), static_cast<std::uint32_t>(i)};

    auto before = [this](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return ids_[a.second] < ids_[b.second];
    };
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      before);
    std::vector<ScoredItem> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back({ids_[scored[i].second], scored[i].first});
    return out;
}

EmbeddingTable DenseIndex::to_table() const {
    EmbeddingTable t;
    t.dim = static_cast<std::uint32_t>(dim_);
    t.data = data_;
    t.ids = ids_;
    return t;
}

// ---------------------------------------------------------------------------
// Hybrid

void HybridConfig::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (lexical_k < 1 || dense_k < 1) throw ConfigError("candidate depths must be >= 1");
    if (low_hit_threshold < 1) throw ConfigError("low_hit_threshold must be >= 1");
}

std::string_view source_name(CandidateSource s) noexcept {
    switch (s) {
        case CandidateSource::Lexical: return "lexical";
        case CandidateSource::Dense: return "dense";
        case CandidateSource::Both: return "both";
    }
    return "lexical";
}

HybridResult hybrid_search(const LexicalIndex& lexical, const DenseIndex& dense,
                           std::string_view query_text, const Embedding& query_embedding,
                           const HybridConfig& config) {
    config.validate();
    HybridResult result;
    auto& diag = result.diagnostics;

    const auto lex = lexical.search(query_text, config.lexical_k, &diag.lexical_hits);
    std::unordered_map<std::string, std::size_t> position;
    for (const auto& hit : lex) {
        position.emplace(hit.item_id, result.candidates.size());
        result.candidates.push_back({hit.item_id, hit.score, std::nullopt, CandidateSource::Lexical});
    }

    for (const auto& hit : dense.search(query_embedding, config.dense_k)) {
        if (!passes_similarity_gate(hit.score, config.tau)) break;  // sorted descending
        if (const auto it = position.find(hit.item_id); it != position.end()) {
            auto& c = result.candidates[it->second];
            c.dense_score = hit.score;
            c.source = CandidateSource::Both;
        } else {
            result.candidates.push_back({hit.item_id, std::nullopt, hit.score, CandidateSource::Dense});
            ++diag.dense_added;
        }
    }

    diag.zero_hit = diag.lexical_hits == 0;
    diag.low_hit = !diag.zero_hit && diag.lexical_hits < config.low_hit_threshold;
    if (diag.zero_hit)
        diag.recovered = diag.dense_added >= 1;
    else if (diag.low_hit)
        diag.recovered = result.candidates.size() >= config.low_hit_threshold;
    return result;
}

std::vector<std::vector<double>> extract_ltr_features(const Embedding& query,
                                                      std::span<const Embedding> candidates,
                                                      std::size_t dim_budget) {
    if (dim_budget < 1 || dim_budget > query.dim())
        throw RangeError("dim_budget outside [1, " + std::to_string(query.dim()) + "]");
    const bool passthrough = dim_budget == query.dim();
    const Embedding q = passthrough ? query : truncate(query, dim_budget, true);

    std::vector<std::vector<double>> out;
    out.reserve(candidates.size());
    for (const auto& cand : candidates) {
        if (cand.dim() != query.dim()) throw ShapeError("candidate dim differs from query dim");
        const Embedding t = passthrough ? cand : truncate(cand, dim_budget, true);
        std::vector<double> f;
        f.reserve(ltr_feature_length(dim_budget));
        f.push_back(cosine(query, cand));
        f.insert(f.end(), q.values().begin(), q.values().end());
        f.insert(f.end(), t.values().begin(), t.values().end());
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace mercat
