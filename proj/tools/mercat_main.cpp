#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mercat/compression.hpp"
#include "mercat/datagen.hpp"
#include "mercat/encoder.hpp"
#include "mercat/error.hpp"
#include "mercat/evaluation.hpp"
#include "mercat/index_store.hpp"
#include "mercat/pipeline.hpp"
#include "mercat/retrieval.hpp"
#include "mercat/serving.hpp"
#include "mercat/training.hpp"

namespace {

using namespace mercat;

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::vector<std::size_t> dims_from(const std::string& text) { return parse_dim_list(text); }

GainMapping parse_gains(const std::string& spec, int threshold) {
    GainMapping g;
    g.relevance_threshold = threshold;
    if (spec.empty()) return g;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const auto comma = spec.find(',', pos);
        const std::string part = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ConfigError("gain entries look like purchase=4: " + part);
        const int value = std::stoi(part.substr(eq + 1));
        switch (parse_grade(part.substr(0, eq))) {
            case FeedbackGrade::Purchase: g.purchase = value; break;
            case FeedbackGrade::Like: g.like = value; break;
            case FeedbackGrade::Comment: g.comment = value; break;
            case FeedbackGrade::Click: g.click = value; break;
            case FeedbackGrade::View: g.view = value; break;
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return g;
}

/// Rebuilds the projection an index was built with, reading the PCA file
/// next to the index when its recorded path is relative.
Projection projection_for(const IndexMeta& meta, const std::filesystem::path& index_dir, std::size_t full_dim) {
    if (!meta.pca_path.empty()) {
        std::filesystem::path p = meta.pca_path;
        if (!std::filesystem::exists(p) && std::filesystem::exists(index_dir / p)) p = index_dir / p;
        return Projection::pca(load_pca(p), meta.renormalize);
    }
    if (meta.dim == full_dim) return Projection::identity(full_dim);
    return Projection::truncation(full_dim, meta.dim, meta.renormalize);
}

EncoderModel model_for(const IndexMeta& meta, const std::string& override_path) {
    const std::string path = override_path.empty() ? meta.model_path : override_path;
    if (path.empty()) throw ConfigError("no model recorded in the index; pass --model");
    return EncoderModel::load(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mercat: truncation-robust hybrid search and embedding workbench"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    unsigned threads_flag = 0;
    std::string log_level = "warn";
    app.add_option("--threads", threads_flag, "Worker threads (0: $MERCAT_THREADS, else 1)");
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
        ->each([](const std::string& v) { spdlog::set_level(spdlog::level::from_str(v)); })
        ->capture_default_str();
    spdlog::set_level(spdlog::level::warn);

    int status = 0;
    auto threads = [&] { return resolve_threads(threads_flag); };

    // datagen
    auto* datagen_cmd = app.add_subcommand("datagen", "Generate a synthetic marketplace corpus and logs");
    std::string dg_spec, dg_out;
    std::size_t dg_sts = 2000, dg_sessions = 0;
    datagen_cmd->add_option("--spec", dg_spec, "World spec JSON (missing keys take defaults)");
    datagen_cmd->add_option("--out", dg_out, "Output directory")->required();
    datagen_cmd->add_option("--sts-pairs", dg_sts, "STS pairs to emit")->capture_default_str();
    datagen_cmd->add_option("--sessions", dg_sessions, "Total sessions (default train_sessions + n_queries)");
    datagen_cmd->callback([&] {
        datagen::WorldSpec spec;
        if (!dg_spec.empty()) spec = datagen::WorldSpec::from_json(read_json_file(dg_spec));
        const auto world = datagen::generate_world(spec);
        const std::size_t n = dg_sessions ? dg_sessions : spec.train_sessions + spec.n_queries;
        const auto sessions = datagen::generate_sessions(world, n, spec);
        const auto sts = datagen::generate_sts(world, dg_sts, spec.seed);
        datagen::write_dataset(dg_out, world, sessions, sts);
        std::cout << nlohmann::json{{"items", world.items.size()},
                                    {"pairs", sessions.pairs.size()},
                                    {"eval_queries", sessions.eval_queries.size()},
                                    {"sts_pairs", sts.size()},
                                    {"out", dg_out}}
                         .dump()
                  << '\n';
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the encoder with MNR + Matryoshka losses");
    std::string tr_pairs, tr_out, tr_init, tr_log, tr_dims = "64,32,16,8", tr_weights;
    TrainingConfig tr_cfg;
    EncoderConfig tr_enc;
    bool tr_no_shuffle = false;
    train_cmd->add_option("--pairs", tr_pairs, "Training pairs JSONL (query, title)")->required();
    train_cmd->add_option("--model-out", tr_out, "Where to write the trained model")->required();
    train_cmd->add_option("--dims", tr_dims, "Nested dims, largest first (first = full dim)")->capture_default_str();
    train_cmd->add_option("--weights", tr_weights, "Per-dim loss weights (default uniform)");
    train_cmd->add_option("--scale", tr_cfg.scale, "Similarity scale s")->capture_default_str();
    train_cmd->add_option("--batch", tr_cfg.batch_size, "Batch size")->capture_default_str();
    train_cmd->add_option("--epochs", tr_cfg.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--seed", tr_cfg.seed, "Seed for initialization and shuffling")->capture_default_str();
    train_cmd->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_flag("--no-shuffle", tr_no_shuffle, "Keep pair order");
    train_cmd->add_option("--init-model", tr_init, "Continue from an existing model");
    train_cmd->add_option("--hash-space", tr_enc.hash_space, "Hash buckets (new models)")->capture_default_str();
    train_cmd->add_option("--ngram-min", tr_enc.ngram_min, "Smallest char n-gram")->capture_default_str();
    train_cmd->add_option("--ngram-max", tr_enc.ngram_max, "Largest char n-gram")->capture_default_str();
    train_cmd->add_option("--query-prefix", tr_enc.query_prefix, "Query role prefix")->capture_default_str();
    train_cmd->add_option("--passage-prefix", tr_enc.passage_prefix, "Passage role prefix")->capture_default_str();
    train_cmd->add_option("--log", tr_log, "Training log JSONL (default stdout)");
    train_cmd->callback([&] {
        auto pairs = datagen::training_pairs(datagen::read_pairs_jsonl(tr_pairs));
        tr_cfg.nested = NestedDims::uniform(dims_from(tr_dims));
        if (!tr_weights.empty()) {
            tr_cfg.nested.weights.clear();
            std::stringstream ss(tr_weights);
            for (std::string w; std::getline(ss, w, ',');) tr_cfg.nested.weights.push_back(std::stod(w));
        }
        tr_cfg.shuffle = !tr_no_shuffle;
        EncoderModel model = [&] {
            if (!tr_init.empty()) return EncoderModel::load(tr_init);
            tr_enc.full_dim = tr_cfg.nested.dims.front();
            tr_enc.seed = tr_cfg.seed;
            return EncoderModel::random_init(tr_enc);
        }();
        std::ofstream log_file;
        if (!tr_log.empty()) {
            log_file.open(tr_log);
            if (!log_file) throw Error("cannot write " + tr_log);
        }
        std::ostream& log = tr_log.empty() ? std::cout : log_file;
        std::size_t step = 0;
        auto result = train(pairs, std::move(model), tr_cfg, [&](const LossReport& r) {
            nlohmann::json per_dim = nlohmann::json::object();
            for (const auto& [d, v] : r.per_dim) per_dim[std::to_string(d)] = v;
            log << nlohmann::json{{"step", ++step}, {"epoch", r.epoch}, {"loss", r.total}, {"per_dim", per_dim}}.dump()
                << '\n';
        });
        result.model.save(tr_out);
    });

    // encode
    auto* encode_cmd = app.add_subcommand("encode", "Encode item titles or ad-hoc texts");
    std::string en_model, en_input, en_out, en_role = "passage", en_pca;
    std::vector<std::string> en_texts;
    std::size_t en_dim = 0;
    bool en_no_renorm = false;
    encode_cmd->add_option("--model", en_model, "Encoder model")->required();
    auto* en_input_opt = encode_cmd->add_option("--input", en_input, "items.jsonl to embed into --out (MEMB)");
    encode_cmd->add_option("--text", en_texts, "Text(s) to encode; prints JSON lines")->excludes(en_input_opt);
    encode_cmd->add_option("--out", en_out, "Output MEMB file for --input");
    encode_cmd->add_option("--role", en_role, "query|passage")->capture_default_str();
    encode_cmd->add_option("--dim", en_dim, "Truncate to this many leading coordinates");
    encode_cmd->add_option("--pca", en_pca, "Apply a PCA model instead of truncation");
    encode_cmd->add_flag("--no-renormalize", en_no_renorm, "Skip L2 renormalization after truncation/PCA");
    encode_cmd->callback([&] {
        const auto model = EncoderModel::load(en_model);
        const Role role = parse_role(en_role);
        const Projection proj = !en_pca.empty() ? Projection::pca(load_pca(en_pca), !en_no_renorm)
                                : en_dim ? Projection::truncation(model.full_dim(), en_dim, !en_no_renorm)
                                         : Projection::identity(model.full_dim());
        if (!en_input.empty()) {
            if (en_out.empty()) throw ConfigError("--input needs --out");
            const auto items = read_items_jsonl(en_input);
            if (role == Role::Passage) {
                write_embeddings(en_out, embed_items(model, items, proj, threads()));
            } else {
                std::vector<TextInput> inputs;
                for (const auto& it : items) inputs.push_back({it.title, role});
                const auto out = model.encode_batch(inputs, threads());
                EmbeddingTable table;
                table.dim = proj.output_dim();
                for (std::size_t i = 0; i < items.size(); ++i) table.append(items[i].item_id, proj.apply(out[i]));
                write_embeddings(en_out, table);
            }
            return;
        }
        if (en_texts.empty()) throw ConfigError("pass --input or --text");
        for (const auto& t : en_texts) {
            const auto e = proj.apply(model.encode(t, role));
            std::cout << nlohmann::json{{"text", t}, {"role", role_name(role)}, {"dim", e.dim()}, {"embedding", std::vector<double>(e.values().begin(), e.values().end())}}
                             .dump()
                      << '\n';
        }
    });

    // pca-fit / pca-apply
    auto* pca_fit_cmd = app.add_subcommand("pca-fit", "Fit PCA on embedding files (item-only by default)");
    std::vector<std::string> pf_inputs;
    std::string pf_out;
    std::size_t pf_dim = 0;
    pca_fit_cmd->add_option("--embeddings", pf_inputs, "MEMB file(s); several files are pooled")->required();
    pca_fit_cmd->add_option("--dim", pf_dim, "Target dimension")->required();
    pca_fit_cmd->add_option("--out", pf_out, "Output MPCA file")->required();
    pca_fit_cmd->callback([&] {
        EmbeddingTable pooled = read_embeddings(pf_inputs.front());
        for (std::size_t i = 1; i < pf_inputs.size(); ++i) {
            const auto more = read_embeddings(pf_inputs[i]);
            if (more.dim != pooled.dim) throw ShapeError("embedding files differ in dim");
            for (std::size_t r = 0; r < more.count(); ++r) pooled.append(more.ids[r], more.embedding(r));
        }
        const auto model = pca_fit(pooled, pf_dim);
        save_pca(pf_out, model);
        nlohmann::json ev = model.explained_variance;
        std::cout << nlohmann::json{{"input_dim", model.input_dim}, {"target_dim", model.target_dim},
                                    {"samples", pooled.count()}, {"explained_variance", ev}}
                         .dump()
                  << '\n';
    });

    auto* pca_apply_cmd = app.add_subcommand("pca-apply", "Project an embedding file through a PCA model");
    std::string pa_pca, pa_in, pa_out;
    bool pa_no_renorm = false;
    pca_apply_cmd->add_option("--pca", pa_pca, "MPCA model")->required();
    pca_apply_cmd->add_option("--embeddings", pa_in, "Input MEMB")->required();
    pca_apply_cmd->add_option("--out", pa_out, "Output MEMB")->required();
    pca_apply_cmd->add_flag("--no-renormalize", pa_no_renorm, "Keep raw projected coordinates");
    pca_apply_cmd->callback([&] {
        const auto model = load_pca(pa_pca);
        const auto in = read_embeddings(pa_in);
        EmbeddingTable out;
        out.dim = model.target_dim;
        for (std::size_t i = 0; i < in.count(); ++i) out.append(in.ids[i], pca_transform(model, in.embedding(i), !pa_no_renorm));
        write_embeddings(pa_out, out);
    });

    // index
    auto* index_cmd = app.add_subcommand("index", "Build a lexical + dense index directory");
    std::string ix_items, ix_model, ix_out, ix_pca;
    std::size_t ix_dim = 0;
    bool ix_no_renorm = false;
    Bm25Params ix_bm25;
    index_cmd->add_option("--items", ix_items, "items.jsonl")->required();
    index_cmd->add_option("--model", ix_model, "Encoder model")->required();
    index_cmd->add_option("--out", ix_out, "Index directory")->required();
    index_cmd->add_option("--dim", ix_dim, "Truncate vectors to this dim (MRL arm)");
    index_cmd->add_option("--pca", ix_pca, "Compress vectors with this PCA model");
    index_cmd->add_flag("--no-renormalize", ix_no_renorm, "Skip renormalization after truncation/PCA");
    index_cmd->add_option("--k1", ix_bm25.k1, "BM25 k1")->capture_default_str();
    index_cmd->add_option("--b", ix_bm25.b, "BM25 b")->capture_default_str();
    index_cmd->callback([&] {
        const auto model = EncoderModel::load(ix_model);
        auto items = read_items_jsonl(ix_items);
        const Projection proj = !ix_pca.empty() ? Projection::pca(load_pca(ix_pca), !ix_no_renorm)
                                : ix_dim ? Projection::truncation(model.full_dim(), ix_dim, !ix_no_renorm)
                                         : Projection::identity(model.full_dim());
        const auto vectors = embed_items(model, items, proj, threads());
        IndexMeta meta{std::filesystem::absolute(ix_model).string(), proj.output_dim(), !ix_no_renorm,
                       ix_pca.empty() ? std::string{} : std::filesystem::absolute(ix_pca).string()};
        auto idx = SearchIndex::build(std::move(items), vectors, meta, ix_bm25);
        idx.save(ix_out);
        std::cout << nlohmann::json{{"items", idx.items.size()}, {"dim", idx.dense.dim()}, {"out", ix_out}}.dump() << '\n';
    });

    // search
    auto* search_cmd = app.add_subcommand("search", "Query an index; prints JSON lines");
    std::string se_index, se_query, se_model, se_mode = "lexical";
    std::size_t se_k = 100;
    bool se_hybrid = false;
    HybridConfig se_cfg;
    search_cmd->add_option("--index", se_index, "Index directory")->required();
    search_cmd->add_option("--query", se_query, "Query text")->required();
    search_cmd->add_option("--k", se_k, "Results to print")->capture_default_str();
    search_cmd->add_flag("--hybrid", se_hybrid, "Lexical plus gated dense candidates (same as --mode hybrid)");
    search_cmd->add_option("--mode", se_mode, "lexical|dense|hybrid")
        ->check(CLI::IsMember({"lexical", "dense", "hybrid"}))
        ->capture_default_str();
    search_cmd->add_option("--tau", se_cfg.tau, "Dense similarity gate (strict >)")->capture_default_str();
    search_cmd->add_option("--lexical-k", se_cfg.lexical_k, "Lexical candidate depth")->capture_default_str();
    search_cmd->add_option("--dense-k", se_cfg.dense_k, "Dense candidate depth")->capture_default_str();
    search_cmd->add_option("--low-hit-threshold", se_cfg.low_hit_threshold, "Low-hit cutoff")->capture_default_str();
    search_cmd->add_option("--model", se_model, "Override the model recorded in the index");
    search_cmd->callback([&] {
        if (se_hybrid) se_mode = "hybrid";
        se_cfg.validate();
        const auto idx = SearchIndex::load(se_index);
        auto print = [](std::size_t rank, const std::string& id, std::optional<double> lex, std::optional<double> dense,
                        std::string_view source) {
            std::cout << nlohmann::json{{"rank", rank},
                                        {"item_id", id},
                                        {"lexical_score", optional_number(lex)},
                                        {"dense_score", optional_number(dense)},
                                        {"source", source}}
                             .dump()
                      << '\n';
        };
        if (se_mode == "lexical") {
            std::size_t total = 0;
            const auto hits = idx.lexical.search(se_query, se_k, &total);
            for (std::size_t i = 0; i < hits.size(); ++i) print(i + 1, hits[i].item_id, hits[i].score, std::nullopt, "lexical");
            spdlog::info("lexical matches: {}", total);
            return;
        }
        const auto model = model_for(idx.meta, se_model);
        const auto q = projection_for(idx.meta, se_index, model.full_dim()).apply(model.encode(se_query, Role::Query));
        if (se_mode == "dense") {
            const auto hits = idx.dense.search(q, se_k);
            for (std::size_t i = 0; i < hits.size(); ++i) print(i + 1, hits[i].item_id, std::nullopt, hits[i].score, "dense");
            return;
        }
        const auto r = hybrid_search(idx.lexical, idx.dense, se_query, q, se_cfg);
        for (std::size_t i = 0; i < r.candidates.size() && i < se_k; ++i) {
            const auto& c = r.candidates[i];
            print(i + 1, c.item_id, c.lexical_score, c.dense_score, source_name(c.source));
        }
        const auto& d = r.diagnostics;
        std::cerr << nlohmann::json{{"lexical_hits", d.lexical_hits}, {"dense_added", d.dense_added},
                                    {"zero_hit", d.zero_hit},         {"low_hit", d.low_hit},
                                    {"recovered", d.recovered}}
                         .dump()
                  << '\n';
    });

    // eval-logs
    auto* eval_cmd = app.add_subcommand("eval-logs", "Replay logged sessions against an index's vectors");
    std::string ev_index, ev_model, ev_queries, ev_k = "5,10,20,50,100", ev_out, ev_gains;
    int ev_threshold = 1;
    bool ev_per_query = false;
    eval_cmd->add_option("--index", ev_index, "Index directory (vectors and projection)")->required();
    eval_cmd->add_option("--model", ev_model, "Encoder model (default: the one recorded in the index)");
    eval_cmd->add_option("--queries", ev_queries, "eval.jsonl")->required();
    eval_cmd->add_option("--k", ev_k, "Cutoffs")->capture_default_str();
    eval_cmd->add_option("--gains", ev_gains, "Grade gains, e.g. purchase=4,like=3,comment=2,click=1,view=0");
    eval_cmd->add_option("--relevance-threshold", ev_threshold, "Minimum gain counted as relevant")->capture_default_str();
    eval_cmd->add_option("--out", ev_out, "Write the JSON report here");
    eval_cmd->add_flag("--per-query", ev_per_query, "Include per-query metrics in the JSON report");
    eval_cmd->callback([&] {
        const auto idx = SearchIndex::load(ev_index);
        const auto model = model_for(idx.meta, ev_model);
        const auto queries = read_eval_jsonl(ev_queries);
        const auto proj = projection_for(idx.meta, ev_index, model.full_dim());
        const auto scorer = make_dense_scorer(idx.dense, model, proj, queries, threads());
        const auto ks = dims_from(ev_k);
        const auto report = replay_evaluate(queries, scorer, ks, parse_gains(ev_gains, ev_threshold), threads());
        if (!ev_out.empty()) write_json_file(ev_out, report.to_json(ev_per_query));
        std::cout << report.to_table();
    });

    // eval-sts
    auto* sts_cmd = app.add_subcommand("eval-sts", "Spearman/Pearson on STS pairs at several truncation dims");
    std::string st_pairs, st_model, st_dims = "64,32,16,8", st_out;
    sts_cmd->add_option("--pairs", st_pairs, "sts.tsv")->required();
    sts_cmd->add_option("--model", st_model, "Encoder model")->required();
    sts_cmd->add_option("--dims", st_dims, "Dims to evaluate")->capture_default_str();
    sts_cmd->add_option("--out", st_out, "Write the JSON report here");
    sts_cmd->callback([&] {
        const auto model = EncoderModel::load(st_model);
        const auto pairs = read_sts_tsv(st_pairs);
        const auto dims = dims_from(st_dims);
        const auto results = sts_evaluate(pairs, model, dims, threads());
        nlohmann::json rows = nlohmann::json::array();
        std::cout << fmt::format("{:>6}  {:>9}  {:>9}\n", "dim", "pearson", "spearman");
        for (const auto& r : results) {
            rows.push_back({{"dim", r.dim}, {"pearson", r.pearson}, {"spearman", r.spearman}});
            std::cout << fmt::format("{:>6}  {:>9.4f}  {:>9.4f}\n", r.dim, r.pearson, r.spearman);
        }
        if (!st_out.empty()) write_json_file(st_out, {{"pairs", pairs.size()}, {"results", rows}});
    });

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "Relative deltas between two eval-logs reports (b vs a)");
    std::string cmp_a, cmp_b, cmp_out;
    compare_cmd->add_option("--a", cmp_a, "Baseline report JSON")->required();
    compare_cmd->add_option("--b", cmp_b, "Candidate report JSON")->required();
    compare_cmd->add_option("--out", cmp_out, "Write the JSON deltas here");
    compare_cmd->callback([&] {
        const auto a = MetricReport::from_json(read_json_file(cmp_a));
        const auto b = MetricReport::from_json(read_json_file(cmp_b));
        const auto delta = compare_models(a, b);
        if (!cmp_out.empty()) write_json_file(cmp_out, delta.to_json());
        std::cout << delta.to_table();
    });

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP encode/search/upsert service");
    std::string sv_routing, sv_host = "127.0.0.1";
    int sv_port = 8080;
    serve_cmd->add_option("--routing", sv_routing, "routing.json")->required();
    serve_cmd->add_option("--port", sv_port, "Port")->capture_default_str();
    serve_cmd->add_option("--host", sv_host, "Bind address")->capture_default_str();
    serve_cmd->callback([&] {
        auto service = std::make_shared<serving::SearchService>(serving::RoutingConfig::load(sv_routing));
        serving::HttpServer server(service);
        server.listen(sv_host, sv_port);
    });

    // pipeline
    auto* pipeline_cmd = app.add_subcommand("pipeline", "Run the full offline experiment from a config file");
    std::string pl_config, pl_out;
    std::optional<std::uint64_t> pl_seed;
    pipeline_cmd->add_option("--config", pl_config, "Experiment config JSON")->required();
    pipeline_cmd->add_option("--out", pl_out, "Override output_dir");
    pipeline_cmd->add_option("--seed", pl_seed, "Override the top-level seed");
    pipeline_cmd->callback([&] {
        auto cfg = ExperimentConfig::load(pl_config);
        if (!pl_out.empty()) cfg.output_dir = pl_out;
        if (pl_seed) cfg.seed = *pl_seed;
        if (threads_flag) cfg.threads = threads_flag;
        const auto result = run_pipeline(cfg);
        std::cout << result.run_dir.string() << '\n';
    });

    // gradient-check
    auto* grad_cmd = app.add_subcommand("gradient-check", "Compare analytic gradients with finite differences");
    std::string gc_model, gc_pairs, gc_dims = "16,8,4";
    std::size_t gc_batch = 8, gc_samples = 64, gc_hash = 4096;
    double gc_h = 1e-5, gc_tol = 1e-4, gc_scale = 20.0;
    std::uint64_t gc_seed = 1;
    grad_cmd->add_option("--model", gc_model, "Model to check (default: random init)");
    grad_cmd->add_option("--pairs", gc_pairs, "Pairs JSONL; the first --batch pairs are used");
    grad_cmd->add_option("--dims", gc_dims, "Nested dims (first = full dim for random models)")->capture_default_str();
    grad_cmd->add_option("--batch", gc_batch, "Batch size")->capture_default_str();
    grad_cmd->add_option("--scale", gc_scale, "Similarity scale")->capture_default_str();
    grad_cmd->add_option("--step", gc_h, "Finite-difference step")->capture_default_str();
    grad_cmd->add_option("--tol", gc_tol, "Max relative error")->capture_default_str();
    grad_cmd->add_option("--samples", gc_samples, "Coordinates sampled")->capture_default_str();
    grad_cmd->add_option("--hash-space", gc_hash, "Hash buckets for random models")->capture_default_str();
    grad_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();
    grad_cmd->callback([&] {
        TrainingConfig cfg;
        cfg.nested = NestedDims::uniform(dims_from(gc_dims));
        cfg.scale = gc_scale;
        cfg.batch_size = gc_batch;
        cfg.seed = gc_seed;
        EncoderModel model = [&] {
            if (!gc_model.empty()) return EncoderModel::load(gc_model);
            EncoderConfig ec;
            ec.hash_space = gc_hash;
            ec.full_dim = cfg.nested.dims.front();
            ec.seed = gc_seed;
            return EncoderModel::random_init(ec);
        }();
        std::vector<TrainingPair> batch;
        if (!gc_pairs.empty()) {
            auto all = datagen::training_pairs(datagen::read_pairs_jsonl(gc_pairs));
            if (all.size() > gc_batch) all.resize(gc_batch);
            batch = std::move(all);
        } else {
            for (std::size_t i = 0; i < gc_batch; ++i)
                batch.push_back({fmt::format("query {} item", i), fmt::format("title {} listing {}", i, i * 7)});
        }
        const auto r = gradient_check(model, batch, cfg, gc_h, gc_tol, gc_samples);
        std::cout << nlohmann::json{{"coordinates", r.coordinates},
                                    {"max_relative_error", r.max_relative_error},
                                    {"tolerance", r.tolerance},
                                    {"passed", r.passed}}
                         .dump()
                  << '\n';
        if (!r.passed) status = 1;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return status;
}
