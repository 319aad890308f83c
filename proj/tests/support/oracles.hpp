#pragma once

// Independent reference implementations. They share no code with the
// library beyond tokenize() and deliberately use the plainest formulation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mercat/retrieval.hpp"

namespace oracle {

inline double dcg(const std::vector<int>& gains, std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < gains.size() && i < k; ++i)
        s += (std::pow(2.0, gains[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
}

inline double ndcg(const std::vector<int>& ranked, std::size_t k) {
    std::vector<int> ideal = ranked;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double idcg = dcg(ideal, k);
    return idcg == 0.0 ? 0.0 : dcg(ranked, k) / idcg;
}

inline std::pair<double, double> precision_recall(const std::vector<int>& ranked, std::size_t k, int threshold = 1) {
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (ranked[i] >= threshold) {
            ++total;
            if (i < k) ++hit;
        }
    }
    return {static_cast<double>(hit) / static_cast<double>(k),
            total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total)};
}

/// Indices of `scores` ordered by score descending, ties by id ascending,
/// via a full comparison sort.
inline std::vector<std::size_t> rank_order(const std::vector<double>& scores, const std::vector<std::string>& ids) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    return order;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

/// BM25 over whole-document token lists, computed from raw counts.
inline std::vector<double> bm25_all(const std::vector<std::vector<std::string>>& docs,
                                    const std::vector<std::string>& query, double k1 = 1.2, double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double total_len = 0;
    for (const auto& d : docs) total_len += static_cast<double>(d.size());
    const double avgdl = total_len / n;
    const std::set<std::string> terms(query.begin(), query.end());
    std::vector<double> out(docs.size(), 0.0);
    for (const auto& t : terms) {
        double df = 0;
        for (const auto& d : docs)
            if (std::find(d.begin(), d.end(), t) != d.end()) df += 1;
        if (df == 0) continue;
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (std::size_t i = 0; i < docs.size(); ++i) {
            const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), t));
            if (tf == 0) continue;
            const double dl = static_cast<double>(docs[i].size());
            out[i] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
    }
    return out;
}

/// Lexical search by scoring every document, keeping those sharing a term.
inline std::vector<mercat::ScoredItem> lexical_search(const std::vector<mercat::ItemDoc>& docs,
                                                      const std::string& query, std::size_t k) {
    std::vector<std::vector<std::string>> toks;
    for (const auto& d : docs) toks.push_back(mercat::tokenize(d.title));
    const auto q = mercat::tokenize(query);
    const auto scores = bm25_all(toks, q);
    std::vector<double> s;
    std::vector<std::string> ids;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        bool shared = false;
        for (const auto& t : q) shared = shared || std::find(toks[i].begin(), toks[i].end(), t) != toks[i].end();
        if (!shared) continue;
        keep.push_back(i);
        s.push_back(scores[i]);
        ids.push_back(docs[i].item_id);
    }
    std::vector<mercat::ScoredItem> out;
    for (std::size_t i : rank_order(s, ids)) {
        if (out.size() == k) break;
        out.push_back({ids[i], s[i]});
    }
    return out;
}

/// Dense search by scoring every f32 row against the normalized query.
inline std::vector<mercat::ScoredItem> dense_search(const std::vector<float>& rows, const std::vector<std::string>& ids,
                                                    std::size_t dim, std::vector<double> q, std::size_t k) {
    double norm = 0;
    for (double v : q) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : q) v /= norm;
    std::vector<double> s(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        double acc = 0;
        for (std::size_t j = 0; j < dim; ++j) acc += static_cast<double>(rows[i * dim + j]) * q[j];
        s[i] = std::clamp(acc, -1.0, 1.0);
    }
    std::vector<mercat::ScoredItem> out;
    for (std::size_t i : rank_order(s, ids)) {
        if (out.size() == k) break;
        out.push_back({ids[i], s[i]});
    }
    return out;
}

}  // namespace oracle
