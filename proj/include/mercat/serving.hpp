#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/encoder.hpp"
#include "mercat/retrieval.hpp"

namespace httplib {
class Server;
}

namespace mercat::serving {

/// routing.json: which model serves which bucket, plus the item corpus and
/// the feature store file. Relative paths resolve against the file's folder.
struct RoutingConfig {
    std::map<std::string, std::filesystem::path> buckets;  // bucket id -> model file
    std::string default_bucket;
    std::filesystem::path items;          // optional items.jsonl loaded at startup
    std::filesystem::path feature_store;  // append-only JSONL, compacted at startup
    HybridConfig hybrid;
    std::size_t ltr_dim_budget = 8;

    void validate() const;
    nlohmann::json to_json() const;
    static RoutingConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
    static RoutingConfig load(const std::filesystem::path& path);

    /// FNV-1a of user_id modulo the bucket count over bucket ids in sorted
    /// order; an empty user_id maps to default_bucket.
    const std::string& bucket_of(std::string_view user_id) const;
};

struct FeatureStoreEntry {
    std::string item_id;
    std::string title;
    std::map<std::string, std::vector<double>> embeddings;  // bucket -> full-dim vector
    std::uint64_t updated_at = 0;                           // unix milliseconds

    nlohmann::json to_json() const;
    static FeatureStoreEntry from_json(const nlohmann::json& j);
};

/// Local stand-in for the online feature store: an in-memory map backed by
/// an append-only JSONL file. Opening the store rewrites the file with one
/// line per item (latest write wins).
class FeatureStore {
public:
    explicit FeatureStore(std::filesystem::path path);

    const std::map<std::string, FeatureStoreEntry>& entries() const noexcept { return entries_; }
    /// Appends and flushes before updating the map.
    void put(FeatureStoreEntry entry);

private:
    std::filesystem::path path_;
    std::map<std::string, FeatureStoreEntry> entries_;
};

/// Request handling without the HTTP layer. Requests and responses are the
/// JSON bodies of the endpoints. Searches share a lock; upserts take it
/// exclusively so an acknowledged write is visible to the next search.
class SearchService {
public:
    /// Loads every bucket's model, embeds the corpus under each, and replays
    /// the feature store. Failures name the component that failed.
    explicit SearchService(RoutingConfig config);

    nlohmann::json encode(const nlohmann::json& request) const;
    nlohmann::json search(const nlohmann::json& request) const;
    nlohmann::json upsert(const nlohmann::json& request);
    nlohmann::json health() const;
    nlohmann::json config() const;

    const RoutingConfig& routing() const noexcept { return config_; }
    const EncoderModel& model(const std::string& bucket) const { return *models_.at(bucket); }

private:
    struct ItemRecord {
        std::string title;
    };

    RoutingConfig config_;
    std::map<std::string, std::shared_ptr<const EncoderModel>> models_;
    std::unique_ptr<FeatureStore> store_;

    mutable std::shared_mutex mutex_;
    std::map<std::string, ItemRecord> items_;
    LexicalIndex lexical_;
    std::map<std::string, DenseIndex> dense_;
};

/// cpp-httplib front end: POST /encode, /search, /items; GET /healthz, /config.
class HttpServer {
public:
    explicit HttpServer(std::shared_ptr<SearchService> service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds (port 0 picks a free port) and serves on a background thread.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks the caller while serving on the current thread.
    void listen(const std::string& host, int port);
    void stop();

private:
    void install_routes();

    std::shared_ptr<SearchService> service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace mercat::serving
