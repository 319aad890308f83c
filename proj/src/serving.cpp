#include "mercat/serving.hpp"

#include <chrono>
#include <fstream>
#include <mutex>
#include <set>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "mercat/error.hpp"
#include "mercat/hash.hpp"
#include "mercat/index_store.hpp"
#include "mercat/text.hpp"

namespace mercat::serving {

namespace {

std::uint64_t now_millis() {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("field '") + key + "' has the wrong type");
    }
}

std::string required_string(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_string())
        throw ValidationError(std::string("missing string field '") + key + "'");
    return j.at(key).get<std::string>();
}

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

void RoutingConfig::validate() const {
    if (buckets.empty()) throw ConfigError("routing: at least one bucket is required");
    if (!buckets.contains(default_bucket))
        throw ConfigError("routing: default_bucket '" + default_bucket + "' is not a configured bucket");
    if (feature_store.empty()) throw ConfigError("routing: feature_store path is required");
    hybrid.validate();
    if (ltr_dim_budget < 1) throw ConfigError("routing: ltr_dim_budget must be >= 1");
}

nlohmann::json RoutingConfig::to_json() const {
    nlohmann::json b = nlohmann::json::object();
    for (const auto& [id, path] : buckets) b[id] = path.string();
    return {{"buckets", b},
            {"default_bucket", default_bucket},
            {"items", items.string()},
            {"feature_store", feature_store.string()},
            {"hybrid",
             {{"tau", hybrid.tau},
              {"lexical_k", hybrid.lexical_k},
              {"dense_k", hybrid.dense_k},
              {"low_hit_threshold", hybrid.low_hit_threshold}}},
            {"ltr_dim_budget", ltr_dim_budget}};
}

RoutingConfig RoutingConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    if (!j.is_object()) throw ConfigError("routing config must be a JSON object");
    static const std::set<std::string> known{"buckets", "default_bucket", "items", "feature_store", "hybrid",
                                             "ltr_dim_budget"};
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw ConfigError("unknown routing key: " + key);
    RoutingConfig c;
    try {
        for (const auto& [id, path] : j.at("buckets").items()) c.buckets[id] = resolve(base, path.get<std::string>());
        c.default_bucket = j.value("default_bucket", c.buckets.empty() ? std::string{} : c.buckets.begin()->first);
        c.items = resolve(base, j.value("items", std::string{}));
        c.feature_store = resolve(base, j.value("feature_store", std::string{}));
        if (j.contains("hybrid")) {
            const auto& h = j.at("hybrid");
            c.hybrid.tau = h.value("tau", c.hybrid.tau);
            c.hybrid.lexical_k = h.value("lexical_k", c.hybrid.lexical_k);
            c.hybrid.dense_k = h.value("dense_k", c.hybrid.dense_k);
            c.hybrid.low_hit_threshold = h.value("low_hit_threshold", c.hybrid.low_hit_threshold);
        }
        c.ltr_dim_budget = j.value("ltr_dim_budget", c.ltr_dim_budget);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("routing config: ") + e.what());
    }
    c.validate();
    return c;
}

RoutingConfig RoutingConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open routing config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

const std::string& RoutingConfig::bucket_of(std::string_view user_id) const {
    if (user_id.empty()) return default_bucket;
    const std::uint64_t h = fnv1a64(user_id);
    auto it = buckets.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(h % buckets.size()));
    return it->first;
}

nlohmann::json FeatureStoreEntry::to_json() const {
    return {{"item_id", item_id}, {"title", title}, {"embeddings", embeddings}, {"updated_at", updated_at}};
}

FeatureStoreEntry FeatureStoreEntry::from_json(const nlohmann::json& j) {
    FeatureStoreEntry e;
    e.item_id = j.at("item_id").get<std::string>();
    e.title = j.at("title").get<std::string>();
    e.embeddings = j.at("embeddings").get<std::map<std::string, std::vector<double>>>();
    e.updated_at = j.value("updated_at", std::uint64_t{0});
    return e;
}

FeatureStore::FeatureStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (std::ifstream in{path_}) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            try {
                auto e = FeatureStoreEntry::from_json(nlohmann::json::parse(line));
                entries_[e.item_id] = std::move(e);
            } catch (const nlohmann::json::exception& ex) {
                // A torn final append is dropped; anything earlier is corruption.
                if (in.peek() != EOF) throw FormatError(path_.string() + ":" + std::to_string(lineno) + ": " + ex.what());
                spdlog::warn("feature store: dropping incomplete last line {}", lineno);
            }
        }
    }
    const auto tmp = std::filesystem::path(path_.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        for (const auto& [id, e] : entries_) out << e.to_json().dump() << '\n';
    }
    std::filesystem::rename(tmp, path_);
}

void FeatureStore::put(FeatureStoreEntry entry) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot append to " + path_.string());
    out << entry.to_json().dump() << '\n';
    out.flush();
    if (!out) throw Error("write to " + path_.string() + " failed");
    entries_[entry.item_id] = std::move(entry);
}

SearchService::SearchService(RoutingConfig config) : config_(std::move(config)) {
    config_.validate();
    std::map<std::filesystem::path, std::shared_ptr<const EncoderModel>> by_path;
    for (const auto& [bucket, path] : config_.buckets) {
        auto& m = by_path[path];
        if (!m) {
            try {
                m = std::make_shared<const EncoderModel>(EncoderModel::load(path));
            } catch (const std::exception& e) {
                throw StageError("model:" + bucket, e.what());
            }
        }
        models_[bucket] = m;
        dense_.emplace(bucket, DenseIndex(m->full_dim()));
    }

    std::vector<ItemDoc> corpus;
    if (!config_.items.empty()) {
        try {
            corpus = read_items_jsonl(config_.items);
        } catch (const std::exception& e) {
            throw StageError("items", e.what());
        }
    }
    try {
        store_ = std::make_unique<FeatureStore>(config_.feature_store);
    } catch (const std::exception& e) {
        throw StageError("feature_store", e.what());
    }

    const unsigned threads = resolve_threads(0);
    std::vector<TextInput> inputs;
    inputs.reserve(corpus.size());
    for (const auto& d : corpus) inputs.push_back({d.title, Role::Passage});
    for (const auto& [bucket, model] : models_) {
        const auto vectors = model->encode_batch(inputs, threads);
        auto& dense = dense_.at(bucket);
        for (std::size_t i = 0; i < corpus.size(); ++i) dense.upsert(corpus[i].item_id, vectors[i]);
    }
    for (const auto& d : corpus) {
        lexical_.upsert(d.item_id, d.title);
        items_[d.item_id] = {d.title};
    }

    for (const auto& [id, entry] : store_->entries()) {
        for (const auto& [bucket, model] : models_) {
            const auto it = entry.embeddings.find(bucket);
            // Entries written before a bucket was registered are re-encoded.
            if (it != entry.embeddings.end() && it->second.size() == model->full_dim())
                dense_.at(bucket).upsert(id, Embedding(it->second));
            else
                dense_.at(bucket).upsert(id, model->encode(entry.title, Role::Passage));
        }
        lexical_.upsert(id, entry.title);
        items_[id] = {entry.title};
    }
    spdlog::info("serving {} items across {} bucket(s)", items_.size(), models_.size());
}

nlohmann::json SearchService::encode(const nlohmann::json& request) const {
    const std::string text = required_string(request, "text");
    const std::string user = field<std::string>(request, "user_id", "");
    Role role = Role::Query;
    try {
        role = parse_role(field<std::string>(request, "role", "query"));
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
    const std::string& bucket = config_.bucket_of(user);
    const auto e = models_.at(bucket)->encode(text, role);
    return {{"bucket", bucket}, {"dim", e.dim()}, {"embedding", e.values()}};
}

nlohmann::json SearchService::search(const nlohmann::json& request) const {
    const std::string query = required_string(request, "query");
    const std::string user = field<std::string>(request, "user_id", "");
    const auto k = field<std::size_t>(request, "k", 10);
    const bool hybrid = field<bool>(request, "hybrid", true);
    HybridConfig cfg = config_.hybrid;
    cfg.tau = field<double>(request, "tau", cfg.tau);
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
    if (k < 1) throw ValidationError("k must be >= 1");

    const std::string& bucket = config_.bucket_of(user);
    const EncoderModel& model = *models_.at(bucket);
    const std::size_t budget = std::min(field<std::size_t>(request, "ltr_dims", config_.ltr_dim_budget), model.full_dim());
    if (budget < 1) throw ValidationError("ltr_dims must be >= 1");
    const Embedding q = model.encode(query, Role::Query);

    std::shared_lock lock(mutex_);
    const DenseIndex& dense = dense_.at(bucket);
    HybridResult result;
    if (hybrid) {
        result = hybrid_search(lexical_, dense, query, q, cfg);
    } else {
        std::size_t total = 0;
        for (auto& s : lexical_.search(query, cfg.lexical_k, &total))
            result.candidates.push_back({s.item_id, s.score, std::nullopt, CandidateSource::Lexical});
        result.diagnostics.lexical_hits = total;
        result.diagnostics.zero_hit = total == 0;
        result.diagnostics.low_hit = total > 0 && total < cfg.low_hit_threshold;
    }
    if (result.candidates.size() > k) result.candidates.resize(k);

    std::vector<Embedding> item_vectors;
    item_vectors.reserve(result.candidates.size());
    for (const auto& c : result.candidates) item_vectors.push_back(dense.embedding(*dense.find(c.item_id)));
    const auto features = extract_ltr_features(q, item_vectors, budget);

    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        const auto& c = result.candidates[i];
        rows.push_back({{"rank", i + 1},
                        {"item_id", c.item_id},
                        {"title", items_.at(c.item_id).title},
                        {"source", source_name(c.source)},
                        {"lexical_score", optional_number(c.lexical_score)},
                        {"dense_score", optional_number(c.dense_score)},
                        {"features", features[i]}});
    }
    const auto& d = result.diagnostics;
    return {{"bucket", bucket},
            {"hybrid", hybrid},
            {"tau", cfg.tau},
            {"results", rows},
            {"diagnostics",
             {{"lexical_hits", d.lexical_hits},
              {"dense_added", d.dense_added},
              {"zero_hit", d.zero_hit},
              {"low_hit", d.low_hit},
              {"recovered", d.recovered}}}};
}

nlohmann::json SearchService::upsert(const nlohmann::json& request) {
    const std::string id = required_string(request, "item_id");
    const std::string title = required_string(request, "title");
    if (text::trim(id).empty()) throw ValidationError("item_id must not be empty");
    if (text::trim(title).empty()) throw ValidationError("title must not be empty");

    // Encode under every model before touching shared state, so a failure
    // leaves no bucket updated.
    FeatureStoreEntry entry{id, title, {}, now_millis()};
    std::map<std::string, Embedding> vectors;
    for (const auto& [bucket, model] : models_) {
        auto e = model->encode(title, Role::Passage);
        entry.embeddings[bucket].assign(e.values().begin(), e.values().end());
        vectors.emplace(bucket, std::move(e));
    }

    std::unique_lock lock(mutex_);
    const bool existed = items_.contains(id);
    store_->put(entry);
    lexical_.upsert(id, title);
    for (const auto& [bucket, e] : vectors) dense_.at(bucket).upsert(id, e);
    items_[id] = {title};
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& [bucket, m] : models_) buckets.push_back(bucket);
    return {{"item_id", id}, {"status", existed ? "updated" : "created"}, {"buckets", buckets},
            {"updated_at", entry.updated_at}};
}

nlohmann::json SearchService::health() const {
    std::shared_lock lock(mutex_);
    return {{"status", "ok"}, {"items", items_.size()}, {"buckets", models_.size()}};
}

nlohmann::json SearchService::config() const {
    nlohmann::json j = config_.to_json();
    for (const auto& [bucket, model] : models_) j["models"][bucket] = model->config().to_json();
    return j;
}

HttpServer::HttpServer(std::shared_ptr<SearchService> service)
    : service_(std::move(service)), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
    auto reply = [](httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto post = [this, reply](const std::string& path, auto handler) {
        server_->Post(path, [this, reply, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                nlohmann::json body;
                try {
                    body = nlohmann::json::parse(req.body);
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(std::string("request body is not JSON: ") + e.what());
                }
                if (!body.is_object()) throw ValidationError("request body must be a JSON object");
                reply(res, 200, handler(*service_, body));
            } catch (const ValidationError& e) {
                reply(res, 400, {{"error", "validation"}, {"message", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
            }
        });
    };
    post("/encode", [](SearchService& s, const nlohmann::json& b) { return s.encode(b); });
    post("/search", [](SearchService& s, const nlohmann::json& b) { return s.search(b); });
    post("/items", [](SearchService& s, const nlohmann::json& b) { return s.upsert(b); });
    server_->Get("/healthz", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, service_->health());
    });
    server_->Get("/config", [this, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, service_->config());
    });
}

int HttpServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
        if (bound < 0) throw Error("cannot bind " + host);
    } else if (!server_->bind_to_port(host, port)) {
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpServer::listen(const std::string& host, int port) {
    if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    spdlog::info("listening on {}:{}", host, port);
    server_->listen_after_bind();
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace mercat::serving
