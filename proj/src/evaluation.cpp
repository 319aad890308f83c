#include "mercat/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mercat/error.hpp"
#include "mercat/hash.hpp"
#include "mercat/text.hpp"

namespace mercat {

FeedbackGrade parse_grade(std::string_view name) {
    if (name == "purchase") return FeedbackGrade::Purchase;
    if (name == "like") return FeedbackGrade::Like;
    if (name == "comment") return FeedbackGrade::Comment;
    if (name == "click") return FeedbackGrade::Click;
    if (name == "view") return FeedbackGrade::View;
    throw FormatError("unknown feedback grade '" + std::string(name) + "'");
}

std::string_view grade_name(FeedbackGrade g) noexcept {
    switch (g) {
        case FeedbackGrade::Purchase: return "purchase";
        case FeedbackGrade::Like: return "like";
        case FeedbackGrade::Comment: return "comment";
        case FeedbackGrade::Click: return "click";
        case FeedbackGrade::View: return "view";
    }
    return "view";
}

int GainMapping::gain(FeedbackGrade g) const noexcept {
    switch (g) {
        case FeedbackGrade::Purchase: return purchase;
        case FeedbackGrade::Like: return like;
        case FeedbackGrade::Comment: return comment;
        case FeedbackGrade::Click: return click;
        case FeedbackGrade::View: return view;
    }
    return view;
}

bool EvalQuery::is_long() const { return text::length(text) >= kLongQueryChars; }

nlohmann::json eval_query_to_json(const EvalQuery& q) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& [id, g] : q.candidates) cands.push_back({{"item_id", id}, {"grade", grade_name(g)}});
    return {{"query_id", q.query_id}, {"text", q.text}, {"candidates", std::move(cands)}};
}

std::vector<EvalQuery> read_eval_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open eval log: " + path.string());
    std::vector<EvalQuery> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            EvalQuery q{j.at("query_id").get<std::string>(), j.at("text").get<std::string>(), {}};
            for (const auto& c : j.at("candidates"))
                q.candidates.emplace_back(c.at("item_id").get<std::string>(),
                                          parse_grade(c.at("grade").get<std::string>()));
            out.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_eval_jsonl(const std::filesystem::path& path, std::span<const EvalQuery> queries) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write eval log: " + path.string());
    for (const auto& q : queries) out << eval_query_to_json(q).dump() << '\n';
}

namespace {

double dcg(std::span<const int> gains, std::size_t k) {
    double s = 0.0;
    const std::size_t n = std::min(k, gains.size());
    for (std::size_t i = 0; i < n; ++i)
        s += (std::exp2(static_cast<double>(gains[i])) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
}

}  // namespace

double ndcg_at_k(std::span<const int> ranked_gains, std::size_t k) {
    if (k < 1) throw RangeError("ndcg_at_k: k must be >= 1");
    std::vector<int> ideal(ranked_gains.begin(), ranked_gains.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double idcg = dcg(ideal, k);
    if (idcg == 0.0) return 0.0;
    return dcg(ranked_gains, k) / idcg;
}

PrecisionRecall precision_recall_at_k(std::span<const int> ranked_gains, std::size_t k,
                                      std::size_t total_relevant, int relevance_threshold) {
    if (k < 1) throw RangeError("precision_recall_at_k: k must be >= 1");
    const std::size_t n = std::min(k, ranked_gains.size());
    const auto hits = static_cast<std::size_t>(std::count_if(
        ranked_gains.begin(), ranked_gains.begin() + static_cast<std::ptrdiff_t>(n),
        [relevance_threshold](int g) { return g >= relevance_threshold; }));
    PrecisionRecall pr;
    pr.precision = static_cast<double>(hits) / static_cast<double>(k);
    pr.recall = total_relevant == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total_relevant);
    return pr;
}

MetricReport replay_evaluate(std::span<const EvalQuery> queries, const Scorer& scorer,
                             std::span<const std::size_t> ks, const GainMapping& gains, unsigned threads) {
    if (ks.empty()) throw ConfigError("replay_evaluate needs at least one cutoff");
    for (auto k : ks)
        if (k < 1) throw RangeError("cutoffs must be >= 1");

    struct Outcome {
        std::optional<QueryMetrics> metrics;
        std::string error;
    };
    std::vector<Outcome> outcomes(queries.size());

    parallel_chunks(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t qi = begin; qi < end; ++qi) {
            const EvalQuery& q = queries[qi];
            struct Row {
                const std::string* id;
                double score;
                int gain;
            };
            std::vector<Row> rows;
            rows.reserve(q.candidates.size());
            bool ok = true;
            for (const auto& [id, grade] : q.candidates) {
                const auto s = scorer(q.text, id);
                if (!s) {
                    outcomes[qi].error = "query " + q.query_id + ": item " + id + " is not scorable";
                    ok = false;
                    break;
                }
                rows.push_back({&id, *s, gains.gain(grade)});
            }
            if (!ok) continue;
            std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
                if (a.score != b.score) return a.score > b.score;
                return *a.id < *b.id;
            });
            std::vector<int> ranked(rows.size());
            std::size_t relevant = 0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                ranked[i] = rows[i].gain;
                if (rows[i].gain >= gains.relevance_threshold) ++relevant;
            }
            QueryMetrics m{q.query_id, q.is_long(), {}};
            for (auto k : ks) {
                const auto pr = precision_recall_at_k(ranked, k, relevant, gains.relevance_threshold);
                m.per_k[k] = KMetrics{ndcg_at_k(ranked, k), 0.0, pr.precision, pr.recall};
            }
            outcomes[qi].metrics = std::move(m);
        }
    });

    // Fixed-order reduction keeps the means bit-identical for any thread count.
    MetricReport report;
    report.ks.assign(ks.begin(), ks.end());
    std::sort(report.ks.begin(), report.ks.end());
    report.ks.erase(std::unique(report.ks.begin(), report.ks.end()), report.ks.end());

    std::vector<std::string> ids;
    for (const auto& q : queries) ids.push_back(q.query_id);
    std::sort(ids.begin(), ids.end());
    std::uint64_t fp = kFnvOffset;
    for (const auto& id : ids) fp = fnv1a64(std::string_view(id.c_str(), id.size() + 1), fp);
    report.query_set_fingerprint = fp;

    for (auto& o : outcomes) {
        if (!o.metrics) {
            ++report.skipped;
            report.errors.push_back(std::move(o.error));
            continue;
        }
        ++report.query_count;
        if (o.metrics->is_long) ++report.long_count;
        for (auto k : report.ks) {
            auto& agg = report.per_k[k];
            const auto& qm = o.metrics->per_k.at(k);
            agg.ndcg += qm.ndcg;
            agg.precision += qm.precision;
            agg.recall += qm.recall;
            if (o.metrics->is_long) agg.ndcg_long += qm.ndcg;
        }
        report.per_query.push_back(std::move(*o.metrics));
    }
    for (auto k : report.ks) {
        auto& agg = report.per_k[k];
        if (report.query_count > 0) {
            const auto n = static_cast<double>(report.query_count);
            agg.ndcg /= n;
            agg.precision /= n;
            agg.recall /= n;
        }
        if (report.long_count > 0) agg.ndcg_long /= static_cast<double>(report.long_count);
    }
    return report;
}

nlohmann::json MetricReport::to_json(bool include_per_query) const {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [k, m] : per_k)
        metrics[std::to_string(k)] = {
            {"ndcg", m.ndcg}, {"ndcg_long", m.ndcg_long}, {"precision", m.precision}, {"recall", m.recall}};
    nlohmann::json j = {{"ks", ks},
                        {"metrics", metrics},
                        {"query_count", query_count},
                        {"long_count", long_count},
                        {"skipped", skipped},
                        {"errors", errors},
                        {"query_set_fingerprint", fmt::format("{:016x}", query_set_fingerprint)}};
    if (include_per_query) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& q : per_query) {
            nlohmann::json per = nlohmann::json::object();
            for (const auto& [k, m] : q.per_k)
                per[std::to_string(k)] = {{"ndcg", m.ndcg}, {"precision", m.precision}, {"recall", m.recall}};
            rows.push_back({{"query_id", q.query_id}, {"is_long", q.is_long}, {"metrics", per}});
        }
        j["per_query"] = std::move(rows);
    }
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    try {
        r.ks = j.at("ks").get<std::vector<std::size_t>>();
        for (const auto& [key, m] : j.at("metrics").items())
            r.per_k[std::stoul(key)] = KMetrics{m.at("ndcg").get<double>(), m.at("ndcg_long").get<double>(),
                                                m.at("precision").get<double>(), m.at("recall").get<double>()};
        r.query_count = j.at("query_count").get<std::size_t>();
        r.long_count = j.value("long_count", std::size_t{0});
        r.skipped = j.value("skipped", std::size_t{0});
        r.errors = j.value("errors", std::vector<std::string>{});
        r.query_set_fingerprint = std::stoull(j.at("query_set_fingerprint").get<std::string>(), nullptr, 16);
        for (const auto& row : j.value("per_query", nlohmann::json::array())) {
            QueryMetrics q{row.at("query_id").get<std::string>(), row.at("is_long").get<bool>(), {}};
            for (const auto& [key, m] : row.at("metrics").items())
                q.per_k[std::stoul(key)] = KMetrics{m.at("ndcg").get<double>(), 0.0, m.at("precision").get<double>(),
                                                    m.at("recall").get<double>()};
            r.per_query.push_back(std::move(q));
        }
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad metric report: ") + e.what());
    }
    return r;
}

std::string MetricReport::to_table() const {
    std::string out = fmt::format("queries={} long={} skipped={}\n", query_count, long_count, skipped);
    out += fmt::format("{:>6}  {:>8}  {:>11}  {:>8}  {:>8}\n", "k", "nDCG", "nDCG(long)", "Prec", "Recall");
    for (const auto& [k, m] : per_k)
        out += fmt::format("{:>6}  {:>8.4f}  {:>11.4f}  {:>8.4f}  {:>8.4f}\n", k, m.ndcg, m.ndcg_long,
                           m.precision, m.recall);
    return out;
}

// ---------------------------------------------------------------------------
// Correlation

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("pearson: inputs differ in length");
    if (x.size() < 2) throw CorrelationError("pearson needs at least two observations");
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw CorrelationError("correlation undefined: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&x](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i + 1;
        while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
        i = j;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
    const auto rx = fractional_ranks(x);
    const auto ry = fractional_ranks(y);
    return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// STS

std::vector<StsPair> read_sts_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open STS file: " + path.string());
    std::vector<StsPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        StsPair p{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0.0};
        try {
            std::size_t used = 0;
            const std::string gold = line.substr(t2 + 1);
            p.gold = std::stod(gold, &used);
            if (used != gold.size() || !std::isfinite(p.gold)) throw std::invalid_argument("gold");
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad gold score");
        }
        out.push_back(std::move(p));
    }
    return out;
}

void write_sts_tsv(const std::filesystem::path& path, std::span<const StsPair> pairs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write STS file: " + path.string());
    for (const auto& p : pairs) out << p.sentence_a << '\t' << p.sentence_b << '\t' << fmt::format("{}", p.gold) << '\n';
}

std::vector<StsResult> sts_evaluate(std::span<const StsPair> pairs, const EncoderModel& model,
                                    std::span<const std::size_t> dims, unsigned threads) {
    for (auto d : dims)
        if (d < 1 || d > model.full_dim()) throw RangeError("STS dim outside [1, full_dim]");
    std::vector<TextInput> inputs;
    inputs.reserve(pairs.size() * 2);
    for (const auto& p : pairs) {
        inputs.push_back({p.sentence_a, Role::Passage});
        inputs.push_back({p.sentence_b, Role::Passage});
    }
    const auto emb = model.encode_batch(inputs, threads);
    std::vector<double> gold;
    gold.reserve(pairs.size());
    for (const auto& p : pairs) gold.push_back(p.gold);

    std::vector<StsResult> out;
    for (auto d : dims) {
        std::vector<double> sims;
        sims.reserve(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i)
            sims.push_back(cosine(truncate(emb[2 * i], d, true), truncate(emb[2 * i + 1], d, true)));
        out.push_back({d, pearson(sims, gold), spearman(sims, gold)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison

std::string format_relative(std::optional<double> relative) {
    if (!relative) return "n/a";
    return fmt::format("{:+.1f}%", *relative * 100.0);
}

DeltaReport compare_models(const MetricReport& a, const MetricReport& b) {
    if (a.query_set_fingerprint != b.query_set_fingerprint || a.query_count != b.query_count)
        throw ComparisonError("reports were computed on different query sets");
    if (a.ks != b.ks) throw ComparisonError("reports use different cutoffs");
    DeltaReport out;
    for (auto k : a.ks) {
        const auto& ma = a.per_k.at(k);
        const auto& mb = b.per_k.at(k);
        const std::pair<const char*, std::pair<double, double>> metrics[] = {
            {"ndcg", {ma.ndcg, mb.ndcg}},
            {"ndcg_long", {ma.ndcg_long, mb.ndcg_long}},
            {"precision", {ma.precision, mb.precision}},
            {"recall", {ma.recall, mb.recall}},
        };
        for (const auto& [name, v] : metrics) {
            MetricDelta d{name, k, v.first, v.second, v.second - v.first, std::nullopt};
            if (v.first != 0.0) d.relative = (v.second - v.first) / v.first;
            out.rows.push_back(std::move(d));
        }
    }
    return out;
}

nlohmann::json DeltaReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"metric", r.metric},
                             {"k", r.k},
                             {"a", r.a},
                             {"b", r.b},
                             {"absolute", r.absolute},
                             {"relative", r.relative ? nlohmann::json(*r.relative) : nlohmann::json(nullptr)},
                             {"relative_text", format_relative(r.relative)}});
    }
    return {{"rows", rows_json}};
}

std::string DeltaReport::to_table() const {
    std::string out = fmt::format("{:<10} {:>5} {:>9} {:>9} {:>9} {:>9}\n", "metric", "k", "a", "b", "abs", "rel");
    for (const auto& r : rows)
        out += fmt::format("{:<10} {:>5} {:>9.4f} {:>9.4f} {:>+9.4f} {:>9}\n", r.metric, r.k, r.a, r.b,
                           r.absolute, format_relative(r.relative));
    return out;
}

}  // namespace mercat
