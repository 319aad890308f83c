#include "mercat/index_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <set>

#include "mercat/error.hpp"
#include "mercat/text.hpp"

namespace mercat {

Projection Projection::truncation(std::size_t full_dim, std::size_t dim, bool renormalize) {
    if (dim < 1 || dim > full_dim) throw RangeError("truncation dim outside [1, full_dim]");
    return Projection(dim, std::nullopt, renormalize);
}

Projection Projection::pca(PcaModel model, bool renormalize) {
    const std::size_t d = model.target_dim;
    return Projection(d, std::move(model), renormalize);
}

Embedding Projection::apply(const Embedding& full) const {
    if (pca_) return pca_transform(*pca_, full, renormalize_);
    if (full.dim() == dim_) return full;
    return truncate(full, dim_, renormalize_);
}

nlohmann::json IndexMeta::to_json() const {
    return {{"model_path", model_path}, {"dim", dim}, {"renormalize", renormalize}, {"pca_path", pca_path}};
}

IndexMeta IndexMeta::from_json(const nlohmann::json& j) {
    IndexMeta m;
    m.model_path = j.value("model_path", "");
    m.dim = j.value("dim", std::size_t{0});
    m.renormalize = j.value("renormalize", true);
    m.pca_path = j.value("pca_path", "");
    return m;
}

SearchIndex SearchIndex::build(std::vector<ItemDoc> items, const EmbeddingTable& vectors, IndexMeta meta,
                               Bm25Params params) {
    if (vectors.count() != items.size())
        throw ShapeError("index build: " + std::to_string(items.size()) + " items but " +
                         std::to_string(vectors.count()) + " vectors");
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (vectors.ids[i] != items[i].item_id)
            throw ShapeError("index build: vector ids are not aligned with items at row " + std::to_string(i));
        if (text::trim(items[i].title).empty())
            throw ValidationError("item " + items[i].item_id + " has an empty title");
        items[i].embedding_ref = i;
    }
    meta.dim = vectors.dim;
    SearchIndex idx;
    idx.items = std::move(items);
    idx.lexical = LexicalIndex::build(idx.items, params);
    idx.dense = DenseIndex::from_table(vectors);
    idx.meta = std::move(meta);
    return idx;
}

void SearchIndex::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_items_jsonl(dir / "items.jsonl", items);
    {
        std::ofstream out(dir / "lexical.mlex", std::ios::binary);
        if (!out) throw Error("cannot write " + (dir / "lexical.mlex").string());
        lexical.save(out);
    }
    write_embeddings(dir / "dense.memb", dense.to_table());
    std::ofstream meta_out(dir / "meta.json");
    meta_out << meta.to_json().dump(2) << '\n';
}

SearchIndex SearchIndex::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("index directory not found: " + dir.string());
    SearchIndex idx;
    idx.items = read_items_jsonl(dir / "items.jsonl");
    {
        std::ifstream in(dir / "lexical.mlex", std::ios::binary);
        if (!in) throw Error("cannot open " + (dir / "lexical.mlex").string());
        idx.lexical = LexicalIndex::load(in);
    }
    idx.dense = DenseIndex::from_table(read_embeddings(dir / "dense.memb"));
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw Error("cannot open " + (dir / "meta.json").string());
    idx.meta = IndexMeta::from_json(nlohmann::json::parse(meta_in));
    for (auto& item : idx.items) item.embedding_ref = idx.dense.find(item.item_id);
    return idx;
}

std::vector<ItemDoc> read_items_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open items file: " + path.string());
    std::vector<ItemDoc> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            items.push_back({j.at("item_id").get<std::string>(), j.at("title").get<std::string>(), std::nullopt});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return items;
}

void write_items_jsonl(const std::filesystem::path& path, std::span<const ItemDoc> items) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write items file: " + path.string());
    for (const auto& item : items)
        out << nlohmann::json{{"item_id", item.item_id}, {"title", item.title}}.dump() << '\n';
}

EmbeddingTable embed_items(const EncoderModel& model, std::span<const ItemDoc> items,
                           const Projection& projection, unsigned threads) {
    std::vector<TextInput> inputs;
    inputs.reserve(items.size());
    for (const auto& item : items) inputs.push_back({item.title, Role::Passage});
    const auto full = model.encode_batch(inputs, threads);
    EmbeddingTable table;
    table.dim = static_cast<std::uint32_t>(projection.output_dim());
    for (std::size_t i = 0; i < items.size(); ++i) table.append(items[i].item_id, projection.apply(full[i]));
    return table;
}

Scorer make_dense_scorer(const DenseIndex& dense, const EncoderModel& model, const Projection& projection,
                         std::span<const EvalQuery> queries, unsigned threads) {
    if (projection.output_dim() != dense.dim())
        throw ShapeError("scorer projection dim " + std::to_string(projection.output_dim()) + " vs index dim " +
                         std::to_string(dense.dim()));
    std::set<std::string> unique;
    for (const auto& q : queries) unique.insert(q.text);
    std::vector<TextInput> inputs;
    inputs.reserve(unique.size());
    for (const auto& t : unique) inputs.push_back({t, Role::Query});
    const auto encoded = model.encode_batch(inputs, threads);
    auto cache = std::make_shared<std::map<std::string, Embedding, std::less<>>>();
    for (std::size_t i = 0; i < inputs.size(); ++i)
        cache->emplace(inputs[i].text, l2_normalize(projection.apply(encoded[i])));
    return [cache, &dense](const std::string& query, const std::string& item_id) -> std::optional<double> {
        const auto row = dense.find(item_id);
        const auto q = cache->find(query);
        if (!row || q == cache->end()) return std::nullopt;
        return std::clamp(dot(dense.row(*row), q->second.values()), -1.0, 1.0);
    };
}

}  // namespace mercat
