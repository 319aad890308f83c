#include "mercat/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mercat/compression.hpp"
#include "mercat/error.hpp"
#include "mercat/evaluation.hpp"
#include "mercat/hash.hpp"
#include "mercat/index_store.hpp"

namespace mercat {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, std::string_view what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const auto k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(fmt::format("unknown {} key: {}", what, key));
    }
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::filesystem::path make_run_dir(const ExperimentConfig& c) {
    if (!c.timestamped) {
        std::filesystem::create_directories(c.output_dir);
        return c.output_dir;
    }
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "run-%Y%m%dT%H%M%SZ", &tm);
    std::filesystem::path dir = c.output_dir / stamp;
    for (int n = 2; std::filesystem::exists(dir); ++n) dir = c.output_dir / fmt::format("{}-{}", stamp, n);
    std::filesystem::create_directories(dir);
    return dir;
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
    spdlog::info("stage {}", name);
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

nlohmann::json training_summary(const TrainingResult& r) {
    nlohmann::json j{{"steps", r.log.size()}};
    if (!r.log.empty()) j["final_loss"] = r.log.back().total;
    return j;
}

void write_training_log(const std::filesystem::path& path, const std::vector<LossReport>& log) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    std::size_t step = 0;
    for (const auto& r : log) {
        nlohmann::json per_dim = nlohmann::json::object();
        for (const auto& [d, v] : r.per_dim) per_dim[std::to_string(d)] = v;
        out << nlohmann::json{{"step", ++step}, {"epoch", r.epoch}, {"loss", r.total}, {"per_dim", per_dim}}.dump()
            << '\n';
    }
}

struct Arm {
    std::string name;
    std::string family;  // mrl, mnr, mnr-pca, mnr-trunc, untrained
    std::size_t dim = 0;
    const EncoderModel* model = nullptr;
    std::string model_file;
    Projection projection;
    std::string pca_file;
};

}  // namespace

nlohmann::json training_config_to_json(const TrainingConfig& c) {
    return {{"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"scale", c.scale},
            {"dims", c.nested.dims},
            {"weights", c.nested.weights},
            {"learning_rate", c.learning_rate},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"shuffle", c.shuffle}};
}

TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig c) {
    reject_unknown(j,
                   {"batch_size", "epochs", "scale", "dims", "weights", "learning_rate", "adam_beta1", "adam_beta2",
                    "adam_eps", "shuffle", "seed"},
                   "training");
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.scale = j.value("scale", c.scale);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.shuffle = j.value("shuffle", c.shuffle);
        c.seed = j.value("seed", c.seed);
        if (j.contains("dims")) {
            c.nested = NestedDims::uniform(j.at("dims").get<std::vector<std::size_t>>());
            if (j.contains("weights")) c.nested.weights = j.at("weights").get<std::vector<double>>();
        } else if (j.contains("weights")) {
            c.nested.weights = j.at("weights").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    return c;
}

nlohmann::json hybrid_config_to_json(const HybridConfig& c) {
    return {{"tau", c.tau}, {"lexical_k", c.lexical_k}, {"dense_k", c.dense_k}, {"low_hit_threshold", c.low_hit_threshold}};
}

HybridConfig hybrid_config_from_json(const nlohmann::json& j, HybridConfig c) {
    reject_unknown(j, {"tau", "lexical_k", "dense_k", "low_hit_threshold"}, "hybrid");
    try {
        c.tau = j.value("tau", c.tau);
        c.lexical_k = j.value("lexical_k", c.lexical_k);
        c.dense_k = j.value("dense_k", c.dense_k);
        c.low_hit_threshold = j.value("low_hit_threshold", c.low_hit_threshold);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("hybrid config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainingConfig ExperimentConfig::default_training() {
    TrainingConfig t;
    t.epochs = 2;
    return t;
}

void ExperimentConfig::validate() const {
    encoder.validate();
    training.validate(encoder.full_dim);
    hybrid.validate();
    if (data_dir.empty()) world.validate();
    if (ks.empty()) throw ConfigError("ks must not be empty");
    for (const auto k : ks)
        if (k < 1) throw ConfigError("ks must be >= 1");
    if (dims.empty()) throw ConfigError("dims must not be empty");
    for (const auto d : dims)
        if (d < 1 || d > encoder.full_dim)
            throw ConfigError(fmt::format("evaluation dim {} outside [1, {}]", d, encoder.full_dim));
    if (sts_pairs < 3) throw ConfigError("sts_pairs must be >= 3");
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"seed", seed},
            {"data_dir", data_dir.string()},
            {"world", world.to_json()},
            {"sts_pairs", sts_pairs},
            {"output_dir", output_dir.string()},
            {"timestamped", timestamped},
            {"encoder", encoder.to_json()},
            {"training", training_config_to_json(training)},
            {"hybrid", hybrid_config_to_json(hybrid)},
            {"ks", ks},
            {"dims", dims},
            {"threads", threads}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"seed", "data_dir", "world", "sts_pairs", "output_dir", "timestamped", "encoder", "training",
                    "hybrid", "ks", "dims", "threads"},
                   "experiment config");
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.data_dir = j.value("data_dir", std::string{});
        if (j.contains("world")) c.world = datagen::WorldSpec::from_json(j.at("world"));
        c.sts_pairs = j.value("sts_pairs", c.sts_pairs);
        c.output_dir = j.value("output_dir", c.output_dir.string());
        c.timestamped = j.value("timestamped", c.timestamped);
        if (j.contains("encoder")) {
            nlohmann::json enc = c.encoder.to_json();
            enc.update(j.at("encoder"));
            c.encoder = EncoderConfig::from_json(enc);
        }
        if (j.contains("training")) {
            c.training = training_config_from_json(j.at("training"), c.training);
        } else if (c.encoder.full_dim != 64) {
            c.training.nested = NestedDims::uniform({c.encoder.full_dim});
        }
        if (j.contains("hybrid")) c.hybrid = hybrid_config_from_json(j.at("hybrid"));
        c.ks = j.value("ks", c.ks);
        c.dims = j.value("dims", c.dims);
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

PipelineResult run_pipeline(const ExperimentConfig& config) {
    config.validate();
    const unsigned threads = resolve_threads(config.threads);
    const std::size_t full = config.encoder.full_dim;
    const std::filesystem::path run = make_run_dir(config);
    for (const char* sub : {"models", "pca", "indexes", "reports"}) std::filesystem::create_directories(run / sub);
    write_json(run / "config.json", config.to_json());

    datagen::Dataset data;
    if (!config.data_dir.empty()) {
        data = stage("datagen/load", [&] {
            if (!std::filesystem::exists(config.data_dir))
                throw Error("data directory not found: " + config.data_dir.string());
            return datagen::load_dataset(config.data_dir);
        });
    } else {
        data = stage("datagen", [&] {
            datagen::WorldSpec spec = config.world;
            spec.seed = derive_seed(config.seed, "datagen");
            const auto world = datagen::generate_world(spec);
            const auto sessions = datagen::generate_sessions(world, spec.train_sessions + spec.n_queries, spec);
            const auto sts = datagen::generate_sts(world, config.sts_pairs, derive_seed(config.seed, "sts"));
            datagen::write_dataset(run / "data", world, sessions, sts);
            return datagen::Dataset{world.item_docs(), sessions.pairs, sessions.eval_queries, sts};
        });
    }
    const auto pairs = datagen::training_pairs(data.pairs);

    EncoderConfig enc = config.encoder;
    enc.seed = derive_seed(config.seed, "init");
    TrainingConfig mrl_cfg = config.training;
    mrl_cfg.seed = derive_seed(config.seed, "train");
    TrainingConfig mnr_cfg = mrl_cfg;
    mnr_cfg.nested = NestedDims::uniform({full});

    // Every model is evaluated as loaded back from its f32 file.
    auto persist = [&](const EncoderModel& m, const std::string& name) {
        const auto path = run / "models" / (name + ".menc");
        m.save(path);
        return EncoderModel::load(path);
    };
    const EncoderModel untrained = stage("init", [&] { return persist(EncoderModel::random_init(enc), "untrained"); });
    nlohmann::json training_json;
    const EncoderModel mrl = stage("train/mrl", [&] {
        auto r = train(pairs, EncoderModel::random_init(enc), mrl_cfg);
        write_training_log(run / "models" / "train_mrl.jsonl", r.log);
        training_json["mrl"] = training_summary(r);
        return persist(r.model, "mrl");
    });
    const EncoderModel mnr = stage("train/mnr", [&] {
        auto r = train(pairs, EncoderModel::random_init(enc), mnr_cfg);
        write_training_log(run / "models" / "train_mnr.jsonl", r.log);
        training_json["mnr"] = training_summary(r);
        return persist(r.model, "mnr");
    });

    const Projection identity = Projection::identity(full);
    const auto [mrl_items, mnr_items, untrained_items] = stage("encode", [&] {
        auto m = embed_items(mrl, data.items, identity, threads);
        auto b = embed_items(mnr, data.items, identity, threads);
        auto u = embed_items(untrained, data.items, identity, threads);
        write_embeddings(run / "models" / "items_mrl.memb", m);
        write_embeddings(run / "models" / "items_mnr.memb", b);
        return std::tuple{std::move(m), std::move(b), std::move(u)};
    });

    std::set<std::size_t> dims(config.dims.begin(), config.dims.end());
    dims.insert(full);
    std::vector<std::size_t> reduced;
    for (auto it = dims.rbegin(); it != dims.rend(); ++it)
        if (*it < full) reduced.push_back(*it);

    std::map<std::size_t, std::string> pca_files;
    std::map<std::size_t, PcaModel> pcas = stage("pca-fit", [&] {
        std::map<std::size_t, PcaModel> out;
        for (const auto d : reduced) {
            auto model = pca_fit(mnr_items, d);
            const std::string file = fmt::format("pca/pca_{}.mpca", d);
            save_pca(run / file, model);
            out.emplace(d, load_pca(run / file));
            pca_files[d] = file;
        }
        return out;
    });

    std::vector<Arm> arms;
    arms.push_back({fmt::format("mrl@{}", full), "mrl", full, &mrl, "models/mrl.menc", identity, ""});
    for (const auto d : reduced)
        arms.push_back({fmt::format("mrl@{}", d), "mrl", d, &mrl, "models/mrl.menc", Projection::truncation(full, d), ""});
    arms.push_back({fmt::format("mnr@{}", full), "mnr", full, &mnr, "models/mnr.menc", identity, ""});
    for (const auto d : reduced)
        arms.push_back({fmt::format("mnr-pca@{}", d), "mnr-pca", d, &mnr, "models/mnr.menc",
                        Projection::pca(pcas.at(d)), pca_files.at(d)});
    for (const auto d : reduced)
        arms.push_back({fmt::format("mnr-trunc@{}", d), "mnr-trunc", d, &mnr, "models/mnr.menc",
                        Projection::truncation(full, d), ""});
    arms.push_back({fmt::format("untrained@{}", full), "untrained", full, &untrained, "models/untrained.menc", identity, ""});

    std::map<std::string, SearchIndex> indexes = stage("index", [&] {
        std::map<std::string, SearchIndex> out;
        for (const auto& arm : arms) {
            const EmbeddingTable& base = arm.model == &mrl ? mrl_items : arm.model == &mnr ? mnr_items : untrained_items;
            EmbeddingTable table;
            if (arm.dim == full) {
                table = base;
            } else {
                table.dim = arm.dim;
                for (std::size_t i = 0; i < base.count(); ++i) table.append(base.ids[i], arm.projection.apply(base.embedding(i)));
            }
            IndexMeta meta{arm.model_file, arm.dim, true, arm.pca_file};
            auto idx = SearchIndex::build(data.items, table, meta);
            idx.save(run / "indexes" / arm.name);
            out.emplace(arm.name, std::move(idx));
        }
        return out;
    });

    nlohmann::json metrics;
    metrics["dataset"] = {{"items", data.items.size()},
                          {"pairs", data.pairs.size()},
                          {"eval_queries", data.eval.size()},
                          {"sts_pairs", data.sts.size()}};
    metrics["training"] = training_json;

    std::map<std::string, MetricReport> reports = stage("eval-logs", [&] {
        std::map<std::string, MetricReport> out;
        for (const auto& arm : arms) {
            const auto& idx = indexes.at(arm.name);
            const auto scorer = make_dense_scorer(idx.dense, *arm.model, arm.projection, data.eval, threads);
            auto report = replay_evaluate(data.eval, scorer, config.ks, {}, threads);
            write_json(run / "reports" / fmt::format("eval_{}.json", arm.name), report.to_json());
            write_text(run / "reports" / fmt::format("eval_{}.txt", arm.name), report.to_table());
            metrics["eval"][arm.name] = report.to_json();
            out.emplace(arm.name, std::move(report));
        }
        return out;
    });

    stage("eval-sts", [&] {
        const std::vector<std::size_t> sts_dims(dims.rbegin(), dims.rend());
        for (const auto& [name, model] : {std::pair<std::string, const EncoderModel*>{"mrl", &mrl},
                                          {"mnr", &mnr},
                                          {"untrained", &untrained}}) {
            nlohmann::json rows = nlohmann::json::array();
            std::string table = fmt::format("{:>6}  {:>9}  {:>9}\n", "dim", "pearson", "spearman");
            for (const auto& r : sts_evaluate(data.sts, *model, sts_dims, threads)) {
                rows.push_back({{"dim", r.dim}, {"pearson", r.pearson}, {"spearman", r.spearman}});
                table += fmt::format("{:>6}  {:>9.4f}  {:>9.4f}\n", r.dim, r.pearson, r.spearman);
            }
            write_text(run / "reports" / fmt::format("sts_{}.txt", name), table);
            metrics["sts"][name] = rows;
        }
        return 0;
    });

    stage("hybrid", [&] {
        const auto& idx = indexes.at(fmt::format("mrl@{}", full));
        std::size_t zero = 0, low = 0, zero_recovered = 0, low_recovered = 0, added = 0;
        for (const auto& q : data.eval) {
            const auto emb = mrl.encode(q.text, Role::Query);
            const auto r = hybrid_search(idx.lexical, idx.dense, q.text, emb, config.hybrid);
            zero += r.diagnostics.zero_hit;
            low += r.diagnostics.low_hit;
            zero_recovered += r.diagnostics.zero_hit && r.diagnostics.recovered;
            low_recovered += r.diagnostics.low_hit && r.diagnostics.recovered;
            added += r.diagnostics.dense_added;
        }
        metrics["hybrid"] = {{"queries", data.eval.size()},
                             {"config", hybrid_config_to_json(config.hybrid)},
                             {"zero_hit", zero},
                             {"zero_hit_recovered", zero_recovered},
                             {"low_hit", low},
                             {"low_hit_recovered", low_recovered},
                             {"dense_added", added}};
        return 0;
    });

    stage("compare", [&] {
        std::string tables;
        auto add = [&](const std::string& key, const std::string& a, const std::string& b) {
            const auto delta = compare_models(reports.at(a), reports.at(b));
            metrics["comparisons"][key] = {{"a", a}, {"b", b}, {"deltas", delta.to_json()}};
            tables += fmt::format("{} ({} -> {})\n{}\n", key, a, b, delta.to_table());
        };
        for (const auto d : reduced) add(fmt::format("mrl_vs_pca@{}", d), fmt::format("mnr-pca@{}", d), fmt::format("mrl@{}", d));
        add("trained_vs_untrained", fmt::format("untrained@{}", full), fmt::format("mrl@{}", full));
        add("mrl_vs_mnr", fmt::format("mnr@{}", full), fmt::format("mrl@{}", full));

        // One row per (arm, dim) of the MRL-vs-PCA comparison.
        nlohmann::json rows = nlohmann::json::array();
        std::string header = fmt::format("{:<10} {:>5}", "arm", "dim");
        for (const auto k : config.ks) header += fmt::format(" {:>10}", fmt::format("nDCG@{}", k));
        std::string table = header + "\n";
        for (const auto& arm : arms) {
            if (arm.family != "mrl" && arm.family != "mnr-pca" && !(arm.family == "mnr" && arm.dim == full)) continue;
            nlohmann::json row{{"arm", arm.family}, {"dim", arm.dim}};
            std::string line = fmt::format("{:<10} {:>5}", arm.family, arm.dim);
            for (const auto& [k, m] : reports.at(arm.name).per_k) {
                row[fmt::format("ndcg@{}", k)] = m.ndcg;
                line += fmt::format(" {:>10.4f}", m.ndcg);
            }
            rows.push_back(std::move(row));
            table += line + "\n";
        }
        metrics["mrl_vs_pca"] = rows;
        write_text(run / "reports" / "mrl_vs_pca.txt", table);
        write_text(run / "reports" / "comparisons.txt", tables);
        return 0;
    });

    write_json(run / "metrics.json", metrics);
    spdlog::info("run written to {}", run.string());
    return {run, metrics};
}

}  // namespace mercat
