#include "esgqa/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>

#include "esgqa/errors.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/util.hpp"

namespace esgqa::retrieval {

namespace {

constexpr char kMagic[8] = {'E', 'S', 'G', 'Q', 'A', 'V', 'E', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

bool better(const RetrievalResult& a, const RetrievalResult& b)
{
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
}

std::vector<RetrievalResult> top_k(std::vector<RetrievalResult> all, std::size_t k, RetrieverKind tag)
{
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), better);
    all.resize(n);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].rank = static_cast<int>(i + 1);
        all[i].retriever = tag;
    }
    return all;
}

double dot(const llm::Embedding& a, const llm::Embedding& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

void put_u32(std::ostream& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::istream& in, int bytes)
{
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == EOF) throw Error("truncated vector file");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

} // namespace

std::string_view to_string(RetrieverKind k)
{
    switch (k) {
    case RetrieverKind::Knn: return "knn";
    case RetrieverKind::Bm25: return "bm25";
    case RetrieverKind::Hybrid: return "hybrid";
    case RetrieverKind::Mmr: return "mmr";
    }
    return "knn";
}

RetrieverKind retriever_from_string(std::string_view s)
{
    if (s == "knn") return RetrieverKind::Knn;
    if (s == "bm25") return RetrieverKind::Bm25;
    if (s == "hybrid") return RetrieverKind::Hybrid;
    if (s == "mmr") return RetrieverKind::Mmr;
    throw PreconditionError("unknown retriever: " + std::string(s));
}

std::string_view to_string(Transform t)
{
    switch (t) {
    case Transform::None: return "none";
    case Transform::Hyde: return "hyde";
    case Transform::MultiQuery: return "multi_query";
    }
    return "none";
}

Transform transform_from_string(std::string_view s)
{
    if (s == "none") return Transform::None;
    if (s == "hyde") return Transform::Hyde;
    if (s == "multi_query") return Transform::MultiQuery;
    throw PreconditionError("unknown query transform: " + std::string(s));
}

std::vector<RetrievalResult> rrf_fuse(const std::vector<std::vector<RetrievalResult>>& lists, std::size_t k,
                                      RetrieverKind tag, double constant)
{
    std::map<std::string, double> fused;
    for (const auto& list : lists) {
        for (const auto& r : list) fused[r.chunk_id] += 1.0 / (constant + r.rank);
    }
    std::vector<RetrievalResult> all;
    all.reserve(fused.size());
    for (const auto& [id, score] : fused) all.push_back({id, score, 0, tag});
    return top_k(std::move(all), k, tag);
}

std::vector<std::string> bm25_terms(std::string_view text)
{
    std::vector<std::string> out;
    for (const auto& t : chunking::tokenize(text)) {
        if (t.text.size() == 1 && static_cast<unsigned char>(t.text[0]) < 0x80 &&
            std::ispunct(static_cast<unsigned char>(t.text[0])))
            continue;
        out.push_back(to_lower(t.text));
    }
    return out;
}

llm::Embedding normalized(const llm::Embedding& v)
{
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    if (n == 0.0 || !std::isfinite(n)) throw PreconditionError("cannot normalize a zero vector");
    llm::Embedding out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

VectorIndex::VectorIndex(Bm25Params params) : params_(params)
{
    if (!(params_.k1 > 0.0)) throw PreconditionError("bm25 k1 must be positive");
    if (!(params_.b >= 0.0 && params_.b <= 1.0)) throw PreconditionError("bm25 b must be in [0,1]");
}

VectorIndex::VectorIndex(VectorIndex&& other) noexcept
{
    *this = std::move(other);
}

VectorIndex& VectorIndex::operator=(VectorIndex&& other) noexcept
{
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    params_ = other.params_;
    entries_ = std::move(other.entries_);
    doc_freq_ = std::move(other.doc_freq_);
    total_length_ = other.total_length_;
    dim_ = other.dim_;
    return *this;
}

void VectorIndex::insert_locked(Chunk chunk)
{
    if (!chunk.embedding) throw PreconditionError("chunk " + chunk.chunk_id + " has no embedding");
    if (dim_ != 0 && chunk.embedding->size() != dim_)
        throw DimensionMismatch("chunk " + chunk.chunk_id + " has dimension " +
                                std::to_string(chunk.embedding->size()) + ", index has " + std::to_string(dim_));
    Entry e;
    e.vec = normalized(*chunk.embedding);
    for (auto& term : bm25_terms(chunk.text)) {
        ++e.tf[term];
        ++e.length;
    }
    if (auto it = entries_.find(chunk.chunk_id); it != entries_.end()) {
        for (const auto& [term, _] : it->second.tf) {
            if (--doc_freq_[term] == 0) doc_freq_.erase(term);
        }
        total_length_ -= it->second.length;
        entries_.erase(it);
    }
    for (const auto& [term, _] : e.tf) ++doc_freq_[term];
    total_length_ += e.length;
    dim_ = e.vec.size();
    chunk.embedding = e.vec;
    e.chunk = std::move(chunk);
    const std::string id = e.chunk.chunk_id;
    entries_.emplace(id, std::move(e));
}

std::size_t VectorIndex::upsert(const std::vector<Chunk>& chunks)
{
    std::unique_lock lock(mu_);
    // Validate the whole batch before touching the index.
    std::size_t dim = dim_;
    for (const auto& c : chunks) {
        if (!c.embedding || c.embedding->empty())
            throw PreconditionError("chunk " + c.chunk_id + " has no embedding");
        if (dim == 0) dim = c.embedding->size();
        if (c.embedding->size() != dim) throw DimensionMismatch("inconsistent embedding dimension in batch");
        normalized(*c.embedding);
    }
    for (const auto& c : chunks) insert_locked(c);
    return chunks.size();
}

std::size_t VectorIndex::size() const
{
    std::shared_lock lock(mu_);
    return entries_.size();
}

std::size_t VectorIndex::dimension() const
{
    std::shared_lock lock(mu_);
    return dim_;
}

bool VectorIndex::contains(const std::string& chunk_id) const
{
    std::shared_lock lock(mu_);
    return entries_.count(chunk_id) != 0;
}

Chunk VectorIndex::chunk(const std::string& chunk_id) const
{
    std::shared_lock lock(mu_);
    auto it = entries_.find(chunk_id);
    if (it == entries_.end()) throw PreconditionError("unknown chunk id " + chunk_id);
    return it->second.chunk;
}

std::vector<std::string> VectorIndex::chunk_ids() const
{
    std::shared_lock lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : entries_) ids.push_back(id);
    return ids;
}

double VectorIndex::avg_doc_length() const
{
    std::shared_lock lock(mu_);
    return entries_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(entries_.size());
}

std::size_t VectorIndex::doc_freq(const std::string& term) const
{
    std::shared_lock lock(mu_);
    auto it = doc_freq_.find(to_lower(term));
    return it == doc_freq_.end() ? 0 : it->second;
}

std::size_t VectorIndex::doc_length(const std::string& chunk_id) const
{
    std::shared_lock lock(mu_);
    auto it = entries_.find(chunk_id);
    if (it == entries_.end()) throw PreconditionError("unknown chunk id " + chunk_id);
    return it->second.length;
}

void VectorIndex::check_query(const llm::Embedding& q) const
{
    if (entries_.empty()) throw EmptyIndex("index is empty");
    if (q.size() != dim_)
        throw DimensionMismatch("query dimension " + std::to_string(q.size()) + " != index dimension " +
                                std::to_string(dim_));
}

std::vector<const VectorIndex::Entry*> VectorIndex::candidates(const IndustryFilter& filter) const
{
    std::vector<const Entry*> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) {
        if (!filter || filter->count(e.chunk.metadata.industry)) out.push_back(&e);
    }
    return out;
}

std::vector<RetrievalResult> VectorIndex::knn_locked(const llm::Embedding& unit_query, std::size_t k,
                                                     const IndustryFilter& filter) const
{
    std::vector<RetrievalResult> all;
    for (const Entry* e : candidates(filter)) all.push_back({e->chunk.chunk_id, dot(unit_query, e->vec), 0, RetrieverKind::Knn});
    return top_k(std::move(all), k, RetrieverKind::Knn);
}

std::vector<RetrievalResult> VectorIndex::knn(const llm::Embedding& query, std::size_t k,
                                              const IndustryFilter& filter) const
{
    if (k == 0) throw PreconditionError("k must be >= 1");
    std::shared_lock lock(mu_);
    check_query(query);
    return knn_locked(normalized(query), k, filter);
}

std::vector<RetrievalResult> VectorIndex::bm25_locked(std::string_view query, std::size_t k,
                                                      const IndustryFilter& filter) const
{
    auto terms = bm25_terms(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    const double n_docs = static_cast<double>(entries_.size());
    const double avgdl = static_cast<double>(total_length_) / n_docs;
    std::vector<std::pair<const std::string*, double>> weighted;
    for (const auto& t : terms) {
        auto it = doc_freq_.find(t);
        if (it == doc_freq_.end()) continue;
        const double n = static_cast<double>(it->second);
        weighted.emplace_back(&t, std::log(1.0 + (n_docs - n + 0.5) / (n + 0.5)));
    }

    std::vector<RetrievalResult> all;
    if (weighted.empty() || avgdl <= 0.0) return all;
    for (const Entry* e : candidates(filter)) {
        double score = 0.0;
        bool matched = false;
        for (const auto& [term, idf] : weighted) {
            auto it = e->tf.find(*term);
            if (it == e->tf.end()) continue;
            matched = true;
            const double tf = static_cast<double>(it->second);
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(e->length) / avgdl);
            score += idf * tf * (params_.k1 + 1.0) / (tf + norm);
        }
        if (matched) all.push_back({e->chunk.chunk_id, score, 0, RetrieverKind::Bm25});
    }
    return top_k(std::move(all), k, RetrieverKind::Bm25);
}

std::vector<RetrievalResult> VectorIndex::bm25(std::string_view query, std::size_t k,
                                               const IndustryFilter& filter) const
{
    if (k == 0) throw PreconditionError("k must be >= 1");
    std::shared_lock lock(mu_);
    if (entries_.empty()) throw EmptyIndex("index is empty");
    return bm25_locked(query, k, filter);
}

std::vector<RetrievalResult> VectorIndex::hybrid(std::string_view query, const llm::Embedding& query_vector,
                                                 std::size_t k, const IndustryFilter& filter) const
{
    if (k == 0) throw PreconditionError("k must be >= 1");
    std::shared_lock lock(mu_);
    check_query(query_vector);
    const std::size_t all = entries_.size();
    auto dense = knn_locked(normalized(query_vector), all, filter);
    auto sparse = bm25_locked(query, all, filter);
    return rrf_fuse({dense, sparse}, k, RetrieverKind::Hybrid);
}

std::vector<RetrievalResult> VectorIndex::mmr(const llm::Embedding& query, std::size_t k, double lambda,
                                              const IndustryFilter& filter) const
{
    if (k == 0) throw PreconditionError("k must be >= 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw PreconditionError("mmr lambda must be in [0,1]");
    std::shared_lock lock(mu_);
    check_query(query);
    const auto q = normalized(query);
    auto pool = candidates(filter);
    std::vector<double> relevance(pool.size());
    std::vector<double> redundancy(pool.size(), 0.0);
    for (std::size_t i = 0; i < pool.size(); ++i) relevance[i] = dot(q, pool[i]->vec);
    std::vector<bool> taken(pool.size(), false);

    std::vector<RetrievalResult> out;
    while (out.size() < k && out.size() < pool.size()) {
        std::optional<std::size_t> best;
        double best_score = 0.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (taken[i]) continue;
            const double score = lambda * relevance[i] - (1.0 - lambda) * redundancy[i];
            if (!best || score > best_score ||
                (score == best_score && pool[i]->chunk.chunk_id < pool[*best]->chunk.chunk_id)) {
                best = i;
                best_score = score;
            }
        }
        taken[*best] = true;
        out.push_back({pool[*best]->chunk.chunk_id, best_score, static_cast<int>(out.size() + 1), RetrieverKind::Mmr});
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (!taken[i]) redundancy[i] = std::max(redundancy[i], dot(pool[i]->vec, pool[*best]->vec));
        }
    }
    return out;
}

void VectorIndex::save(const std::filesystem::path& dir) const
{
    std::shared_lock lock(mu_);
    std::filesystem::create_directories(dir);
    std::vector<json> rows;
    for (const auto& [id, e] : entries_) rows.push_back(e.chunk.to_json());
    write_jsonl(dir / "meta.jsonl", rows);

    std::ofstream out(dir / "vectors.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "vectors.bin").string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u64(out, entries_.size());
    for (const auto& [id, e] : entries_) {
        for (float x : e.vec) put_u32(out, std::bit_cast<std::uint32_t>(x));
    }
    if (!out) throw Error("failed writing vector file");
}

VectorIndex VectorIndex::load(const std::filesystem::path& dir, Bm25Params params)
{
    const auto rows = read_jsonl(dir / "meta.jsonl");
    std::ifstream in(dir / "vectors.bin", std::ios::binary);
    if (!in) throw Error("cannot read " + (dir / "vectors.bin").string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kMagic)) throw Error("not an index vector file");
    if (get_le(in, 4) != kFormatVersion) throw Error("unsupported vector file version");
    const auto dim = static_cast<std::size_t>(get_le(in, 4));
    const auto count = static_cast<std::size_t>(get_le(in, 8));
    if (count != rows.size()) throw Error("vector count does not match metadata rows");

    VectorIndex index(params);
    std::vector<Chunk> chunks;
    for (const auto& row : rows) {
        Chunk c = Chunk::from_json(row);
        llm::Embedding v(dim);
        for (auto& x : v) x = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(in, 4)));
        c.embedding = std::move(v);
        chunks.push_back(std::move(c));
    }
    std::unique_lock lock(index.mu_);
    for (auto& c : chunks) {
        // Stored vectors are already unit norm; keep their exact bits.
        const llm::Embedding exact = *c.embedding;
        const std::string id = c.chunk_id;
        index.insert_locked(std::move(c));
        auto& e = index.entries_.at(id);
        e.vec = exact;
        e.chunk.embedding = exact;
    }
    return index;
}

QueryTransformer::QueryTransformer(const llm::Provider& provider, std::string model_id, double temperature)
    : provider_(provider), model_(std::move(model_id)), temperature_(temperature)
{
}

std::string QueryTransformer::hyde(const std::string& query) const
{
    if (trim(query).empty()) throw PreconditionError("hyde needs a nonempty query");
    llm::ProviderRequest req;
    req.model_id = model_;
    req.temperature = temperature_;
    req.messages = {
        llm::Message::system("You write passages in the style of IFRS industry-based sustainability disclosure "
                             "standards, including metric names, units of measure and codes where relevant."),
        llm::Message::user("Write a short passage from a sustainability disclosure standard that would answer the "
                           "following question. Return only the passage.\n\nQuestion: " +
                           query)};
    std::string doc = trim(provider_.complete_text(req));
    if (doc.empty()) throw ProviderError("hyde returned an empty document");
    return doc;
}

std::vector<std::string> QueryTransformer::variants(const std::string& query, std::size_t n) const
{
    if (n < 2) throw PreconditionError("multi-query needs at least 2 variants");
    if (trim(query).empty()) throw PreconditionError("multi-query needs a nonempty query");
    llm::ProviderRequest req;
    req.model_id = model_;
    req.temperature = temperature_;
    req.messages = {llm::Message::user(
        "Generate " + std::to_string(n) +
        " different reformulations of the following question about sustainability disclosure standards. Each "
        "reformulation should keep the original meaning but vary the wording so that together they retrieve a "
        "broader set of relevant passages.\n\nQuestion: " +
        query)};
    json schema = {{"type", "object"},
                   {"properties",
                    {{"queries",
                      {{"type", "array"},
                       {"items", {{"type", "string"}, {"minLength", 1}}},
                       {"minItems", n},
                       {"maxItems", n}}}}},
                   {"required", {"queries"}}};
    req.output_schema = llm::OutputSchema{"query_variants", "Reformulations of the user question", schema};
    return provider_.complete_structured(req).at("queries").get<std::vector<std::string>>();
}

std::vector<RetrievalResult> multi_query(const VectorIndex& index, const llm::Provider& provider,
                                         const QueryTransformer& transformer, const std::string& query,
                                         std::size_t n_variants, std::size_t k, const IndustryFilter& filter)
{
    const auto variants = transformer.variants(query, n_variants);
    const auto vectors = provider.embed(variants);
    auto lists = parallel_map<std::vector<RetrievalResult>>(
        vectors.size(), vectors.size(), [&](std::size_t i) { return index.knn(vectors[i], k, filter); });
    return rrf_fuse(lists, k, RetrieverKind::Knn);
}

std::vector<RetrievalResult> search(const VectorIndex& index, const llm::Provider& provider,
                                    const QueryTransformer* transformer, const std::string& query,
                                    const SearchOptions& options)
{
    if (trim(query).empty()) throw PreconditionError("empty query");
    if (options.transform != Transform::None && !transformer)
        throw PreconditionError("query transform requested without a transformer");
    if (options.transform == Transform::MultiQuery)
        return multi_query(index, provider, *transformer, query, options.n_variants, options.k, options.filter);

    const std::string text = options.transform == Transform::Hyde ? transformer->hyde(query) : query;
    switch (options.retriever) {
    case RetrieverKind::Bm25: return index.bm25(text, options.k, options.filter);
    case RetrieverKind::Knn: return index.knn(provider.embed_one(text), options.k, options.filter);
    case RetrieverKind::Hybrid: return index.hybrid(text, provider.embed_one(text), options.k, options.filter);
    case RetrieverKind::Mmr: return index.mmr(provider.embed_one(text), options.k, options.mmr_lambda, options.filter);
    }
    throw PreconditionError("unknown retriever");
}

} // namespace esgqa::retrieval
