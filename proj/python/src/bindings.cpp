#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "mercat/compression.hpp"
#include "mercat/datagen.hpp"
#include "mercat/embedding.hpp"
#include "mercat/encoder.hpp"
#include "mercat/error.hpp"
#include "mercat/evaluation.hpp"
#include "mercat/index_store.hpp"
#include "mercat/pipeline.hpp"
#include "mercat/retrieval.hpp"
#include "mercat/training.hpp"

namespace py = pybind11;
using namespace mercat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Embedding to_embedding(const Array& a) {
    if (a.ndim() != 1) throw ShapeError("expected a 1-d array");
    return Embedding(std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Embedding& e) {
    Array out(static_cast<py::ssize_t>(e.dim()));
    std::copy(e.values().begin(), e.values().end(), out.mutable_data());
    return out;
}

RowMatrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
    RowMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

Array from_matrix(const RowMatrix& m) {
    Array out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

py::object scored(const std::vector<ScoredItem>& hits) {
    py::list out;
    for (const auto& h : hits) out.append(py::make_tuple(h.item_id, h.score));
    return out;
}

std::vector<ItemDoc> docs_of(const std::vector<std::pair<std::string, std::string>>& items) {
    std::vector<ItemDoc> docs;
    for (const auto& [id, title] : items) docs.push_back({id, title, std::nullopt});
    return docs;
}

}  // namespace

PYBIND11_MODULE(_mercat, m) {
    m.doc() = "Truncation-robust hybrid search and embedding workbench";

    auto base = py::register_exception<Error>(m, "MercatError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<RangeError>(m, "RangeError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<CorrelationError>(m, "CorrelationError", base.ptr());
    py::register_exception<ComparisonError>(m, "ComparisonError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<StageError>(m, "StageError", base.ptr());

    // Embedding helpers work on 1-d float64 arrays.
    m.def("truncate", [](const Array& e, std::size_t d, bool renormalize) { return to_array(truncate(to_embedding(e), d, renormalize)); },
          py::arg("embedding"), py::arg("dim"), py::arg("renormalize") = true);
    m.def("l2_normalize", [](const Array& e) { return to_array(l2_normalize(to_embedding(e))); });
    m.def("cosine", [](const Array& a, const Array& b) { return cosine(to_embedding(a), to_embedding(b)); });
    m.def("tokenize", &tokenize);

    py::class_<EncoderModel>(m, "EncoderModel")
        .def_static("load", py::overload_cast<const std::filesystem::path&>(&EncoderModel::load))
        .def_static(
            "random_init",
            [](std::uint32_t full_dim, std::uint32_t hash_space, std::uint64_t seed, std::uint32_t ngram_min,
               std::uint32_t ngram_max, std::string query_prefix, std::string passage_prefix) {
                EncoderConfig c{hash_space, ngram_min, ngram_max, full_dim, std::move(query_prefix),
                                std::move(passage_prefix), seed};
                c.validate();
                return EncoderModel::random_init(c);
            },
            py::arg("full_dim") = 64, py::arg("hash_space") = 1u << 18, py::arg("seed") = 0, py::arg("ngram_min") = 2,
            py::arg("ngram_max") = 4, py::arg("query_prefix") = "query: ", py::arg("passage_prefix") = "passage: ")
        .def("save", py::overload_cast<const std::filesystem::path&>(&EncoderModel::save, py::const_))
        .def_property_readonly("full_dim", &EncoderModel::full_dim)
        .def_property_readonly("config", [](const EncoderModel& self) { return self.config().to_json().dump(); })
        .def(
            "encode",
            [](const EncoderModel& self, const std::string& text, const std::string& role) {
                return to_array(self.encode(text, parse_role(role)));
            },
            py::arg("text"), py::arg("role") = "query")
        .def(
            "encode_batch",
            [](const EncoderModel& self, const std::vector<std::string>& texts, const std::string& role, unsigned threads) {
                const Role r = parse_role(role);
                std::vector<TextInput> in;
                for (const auto& t : texts) in.push_back({t, r});
                std::vector<Embedding> out;
                {
                    py::gil_scoped_release release;
                    out = self.encode_batch(in, threads);
                }
                Array a({static_cast<py::ssize_t>(out.size()), static_cast<py::ssize_t>(self.full_dim())});
                for (std::size_t i = 0; i < out.size(); ++i)
                    std::copy(out[i].values().begin(), out[i].values().end(), a.mutable_data() + i * self.full_dim());
                return a;
            },
            py::arg("texts"), py::arg("role") = "passage", py::arg("threads") = 1)
        .def("__eq__", [](const EncoderModel& a, const EncoderModel& b) { return a == b; });

    m.def(
        "mnr_loss",
        [](const Array& q, const Array& t, double scale) {
            const auto r = mnr_loss(to_matrix(q), to_matrix(t), scale);
            return py::make_tuple(r.loss, from_matrix(r.grad_q), from_matrix(r.grad_t));
        },
        py::arg("queries"), py::arg("titles"), py::arg("scale") = 20.0);
    m.def(
        "mrl_loss",
        [](const Array& q, const Array& t, std::vector<std::size_t> dims, std::optional<std::vector<double>> weights,
           double scale) {
            NestedDims nested = NestedDims::uniform(std::move(dims));
            if (weights) nested.weights = *weights;
            const auto r = mrl_loss(to_matrix(q), to_matrix(t), nested, scale);
            py::dict per_dim;
            for (const auto& [d, v] : r.per_dim) per_dim[py::int_(d)] = v;
            return py::make_tuple(r.total, per_dim, from_matrix(r.grad_q), from_matrix(r.grad_t));
        },
        py::arg("queries"), py::arg("titles"), py::arg("dims"), py::arg("weights") = py::none(), py::arg("scale") = 20.0);

    m.def(
        "train",
        [](const std::vector<std::pair<std::string, std::string>>& pairs, const EncoderModel& model,
           const std::string& config_json) {
            std::vector<TrainingPair> tp;
            for (const auto& [q, t] : pairs) tp.push_back({q, t});
            const auto cfg = training_config_from_json(nlohmann::json::parse(config_json));
            TrainingResult r{model, {}};
            {
                py::gil_scoped_release release;
                r = train(tp, model, cfg);
            }
            py::list log;
            for (const auto& s : r.log) log.append(py::make_tuple(s.epoch, s.total));
            return py::make_tuple(std::move(r.model), log);
        },
        py::arg("pairs"), py::arg("model"), py::arg("config_json") = "{}");
    m.def(
        "gradient_check",
        [](const EncoderModel& model, const std::vector<std::pair<std::string, std::string>>& batch,
           std::vector<std::size_t> dims, double scale, double h, double tolerance, std::size_t samples) {
            std::vector<TrainingPair> tp;
            for (const auto& [q, t] : batch) tp.push_back({q, t});
            TrainingConfig cfg;
            cfg.nested = NestedDims::uniform(std::move(dims));
            cfg.scale = scale;
            const auto r = gradient_check(model, tp, cfg, h, tolerance, samples);
            return py::dict(py::arg("coordinates") = r.coordinates, py::arg("max_relative_error") = r.max_relative_error,
                            py::arg("passed") = r.passed);
        },
        py::arg("model"), py::arg("batch"), py::arg("dims"), py::arg("scale") = 20.0, py::arg("h") = 1e-5,
        py::arg("tolerance") = 1e-4, py::arg("samples") = 64);

    py::class_<PcaModel>(m, "PcaModel")
        .def_readonly("input_dim", &PcaModel::input_dim)
        .def_readonly("target_dim", &PcaModel::target_dim)
        .def_readonly("explained_variance", &PcaModel::explained_variance)
        .def_property_readonly("mean", [](const PcaModel& p) { return to_array(Embedding(p.mean)); })
        .def_property_readonly("components",
                               [](const PcaModel& p) {
                                   RowMatrix c(p.target_dim, p.input_dim);
                                   c.data = p.components;
                                   return from_matrix(c);
                               })
        .def(
            "transform",
            [](const PcaModel& p, const Array& e, bool renormalize) { return to_array(pca_transform(p, to_embedding(e), renormalize)); },
            py::arg("embedding"), py::arg("renormalize") = true)
        .def("save", [](const PcaModel& p, const std::filesystem::path& path) { save_pca(path, p); });
    m.def("pca_fit", [](const Array& x, std::size_t dim) {
        const auto mat = to_matrix(x);
        std::vector<Embedding> rows;
        for (std::size_t i = 0; i < mat.rows; ++i) rows.emplace_back(std::vector<double>(mat.row(i).begin(), mat.row(i).end()));
        return pca_fit(rows, dim);
    });
    m.def("load_pca", &load_pca);

    py::class_<LexicalIndex>(m, "LexicalIndex")
        .def_static(
            "build",
            [](const std::vector<std::pair<std::string, std::string>>& items, double k1, double b) {
                return LexicalIndex::build(docs_of(items), Bm25Params{k1, b});
            },
            py::arg("items"), py::arg("k1") = 1.2, py::arg("b") = 0.75)
        .def("search", [](const LexicalIndex& self, const std::string& q, std::size_t k) { return scored(self.search(q, k)); },
             py::arg("query"), py::arg("k") = 10)
        .def("bm25_score", [](const LexicalIndex& self, const std::string& q, std::uint32_t doc) {
            const auto toks = tokenize(q);
            return self.bm25_score(toks, doc);
        })
        .def("upsert", &LexicalIndex::upsert)
        .def("__len__", &LexicalIndex::doc_count);

    py::class_<DenseIndex>(m, "DenseIndex")
        .def(py::init<std::size_t>(), py::arg("dim"))
        .def("upsert", [](DenseIndex& self, const std::string& id, const Array& e) { self.upsert(id, to_embedding(e)); })
        .def("search", [](const DenseIndex& self, const Array& q, std::size_t k) { return scored(self.search(to_embedding(q), k)); },
             py::arg("query"), py::arg("k") = 10)
        .def_property_readonly("dim", &DenseIndex::dim)
        .def("__len__", &DenseIndex::size);

    m.def(
        "hybrid_search",
        [](const LexicalIndex& lex, const DenseIndex& dense, const std::string& text, const Array& q, double tau,
           std::size_t lexical_k, std::size_t dense_k, std::size_t low_hit_threshold) {
            HybridConfig cfg{tau, lexical_k, dense_k, low_hit_threshold};
            cfg.validate();
            const auto r = hybrid_search(lex, dense, text, to_embedding(q), cfg);
            py::list cands;
            for (const auto& c : r.candidates) {
                cands.append(py::dict(py::arg("item_id") = c.item_id,
                                      py::arg("lexical_score") = c.lexical_score,
                                      py::arg("dense_score") = c.dense_score,
                                      py::arg("source") = std::string(source_name(c.source))));
            }
            const auto& d = r.diagnostics;
            py::dict diag(py::arg("lexical_hits") = d.lexical_hits, py::arg("dense_added") = d.dense_added,
                          py::arg("zero_hit") = d.zero_hit, py::arg("low_hit") = d.low_hit,
                          py::arg("recovered") = d.recovered);
            return py::make_tuple(cands, diag);
        },
        py::arg("lexical"), py::arg("dense"), py::arg("query"), py::arg("query_embedding"), py::arg("tau") = 0.90,
        py::arg("lexical_k") = 100, py::arg("dense_k") = 100, py::arg("low_hit_threshold") = 10);

    m.def("ndcg_at_k", [](const std::vector<int>& gains, std::size_t k) { return ndcg_at_k(gains, k); });
    m.def(
        "precision_recall_at_k",
        [](const std::vector<int>& gains, std::size_t k, std::size_t total_relevant, int threshold) {
            const auto r = precision_recall_at_k(gains, k, total_relevant, threshold);
            return py::make_tuple(r.precision, r.recall);
        },
        py::arg("gains"), py::arg("k"), py::arg("total_relevant"), py::arg("threshold") = 1);
    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); });
    m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });

    // JSON-in/JSON-out entry points; the package wraps them with dicts.
    m.def("_datagen", [](const std::string& spec_json, const std::filesystem::path& out, std::size_t sts_pairs) {
        const auto spec = datagen::WorldSpec::from_json(nlohmann::json::parse(spec_json));
        py::gil_scoped_release release;
        const auto world = datagen::generate_world(spec);
        const auto sessions = datagen::generate_sessions(world, spec.train_sessions + spec.n_queries, spec);
        datagen::write_dataset(out, world, sessions, datagen::generate_sts(world, sts_pairs, spec.seed));
        return nlohmann::json{{"items", world.items.size()},
                              {"pairs", sessions.pairs.size()},
                              {"eval_queries", sessions.eval_queries.size()}}
            .dump();
    });
    m.def("_run_pipeline", [](const std::string& config_json) {
        const auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        const auto r = run_pipeline(cfg);
        return nlohmann::json{{"run_dir", r.run_dir.string()}, {"metrics", r.metrics}}.dump();
    });
}
