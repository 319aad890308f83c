#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mercat/compression.hpp"
#include "mercat/embedding.hpp"
#include "mercat/encoder.hpp"
#include "mercat/evaluation.hpp"
#include "mercat/retrieval.hpp"

namespace mercat {

/// How a full-dimension encoder output is mapped into an index's vector space.
class Projection {
public:
    static Projection identity(std::size_t dim) { return Projection(dim, std::nullopt, true); }
    static Projection truncation(std::size_t full_dim, std::size_t dim, bool renormalize = true);
    static Projection pca(PcaModel model, bool renormalize = true);

    std::size_t output_dim() const noexcept { return dim_; }
    Embedding apply(const Embedding& full) const;

private:
    Projection(std::size_t dim, std::optional<PcaModel> pca, bool renormalize)
        : dim_(dim), pca_(std::move(pca)), renormalize_(renormalize) {}

    std::size_t dim_;
    std::optional<PcaModel> pca_;
    bool renormalize_;
};

/// Records how an index's vectors were produced so queries can be encoded
/// into the same space. Stored as meta.json.
struct IndexMeta {
    std::string model_path;
    std::size_t dim = 0;
    bool renormalize = true;
    std::string pca_path;  // empty when not PCA-compressed

    nlohmann::json to_json() const;
    static IndexMeta from_json(const nlohmann::json& j);
};

/// Paired lexical + dense index over the same item collection, persisted as
/// a directory: items.jsonl, lexical.mlex, dense.memb, meta.json.
struct SearchIndex {
    std::vector<ItemDoc> items;
    LexicalIndex lexical;
    DenseIndex dense;
    IndexMeta meta;

    static SearchIndex build(std::vector<ItemDoc> items, const EmbeddingTable& vectors, IndexMeta meta,
                             Bm25Params params = {});

    void save(const std::filesystem::path& dir) const;
    static SearchIndex load(const std::filesystem::path& dir);
};

/// Reads items.jsonl lines of the form {"item_id": ..., "title": ...}.
std::vector<ItemDoc> read_items_jsonl(const std::filesystem::path& path);
void write_items_jsonl(const std::filesystem::path& path, std::span<const ItemDoc> items);

/// Encodes every item title as a passage and applies `projection`.
EmbeddingTable embed_items(const EncoderModel& model, std::span<const ItemDoc> items,
                           const Projection& projection, unsigned threads = 1);

/// Replay scorer: cosine between the projected query embedding and the
/// item's stored index row. Query embeddings are computed once up front, so
/// the scorer is read-only and thread-safe. `dense` must outlive it.
Scorer make_dense_scorer(const DenseIndex& dense, const EncoderModel& model, const Projection& projection,
                         std::span<const EvalQuery> queries, unsigned threads = 1);

}  // namespace mercat
