#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "esgqa/chunking.hpp"
#include "esgqa/llm_provider.hpp"

namespace esgqa::retrieval {

using chunking::Chunk;
using json = nlohmann::json;

enum class RetrieverKind { Knn, Bm25, Hybrid, Mmr };
std::string_view to_string(RetrieverKind k);
RetrieverKind retriever_from_string(std::string_view s);

struct RetrievalResult {
    std::string chunk_id;
    double score = 0.0;
    int rank = 0; // 1-based
    RetrieverKind retriever = RetrieverKind::Knn;
};

/// Restricts results to chunks whose metadata.industry is in the set.
using IndustryFilter = std::optional<std::set<std::string>>;

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

inline constexpr double kRrfConstant = 60.0;

/// Reciprocal-rank fusion: score(c) = sum over lists of 1 / (constant + rank).
/// Ties break on the smaller chunk_id; returns the top k.
std::vector<RetrievalResult> rrf_fuse(const std::vector<std::vector<RetrievalResult>>& lists, std::size_t k,
                                      RetrieverKind tag, double constant = kRrfConstant);

/// Lowercased BM25 terms of `text`; punctuation tokens are dropped.
std::vector<std::string> bm25_terms(std::string_view text);

/// Exhaustive-scan vector store with metadata and BM25 statistics.
/// Reads may run concurrently; upserts take exclusive access.
class VectorIndex {
public:
    explicit VectorIndex(Bm25Params params = {});
    VectorIndex(VectorIndex&& other) noexcept;
    VectorIndex& operator=(VectorIndex&& other) noexcept;

    /// Normalizes and stores each chunk's embedding, replacing entries with
    /// an existing chunk_id. Returns the number of chunks written.
    std::size_t upsert(const std::vector<Chunk>& chunks);

    std::size_t size() const;
    std::size_t dimension() const;
    bool contains(const std::string& chunk_id) const;
    /// Stored chunk (with its normalized embedding).
    Chunk chunk(const std::string& chunk_id) const;
    std::vector<std::string> chunk_ids() const;

    // BM25 corpus statistics.
    double avg_doc_length() const;
    std::size_t doc_freq(const std::string& term) const;
    std::size_t doc_length(const std::string& chunk_id) const;
    const Bm25Params& bm25_params() const { return params_; }

    std::vector<RetrievalResult> knn(const llm::Embedding& query, std::size_t k,
                                     const IndustryFilter& filter = std::nullopt) const;
    std::vector<RetrievalResult> bm25(std::string_view query, std::size_t k,
                                      const IndustryFilter& filter = std::nullopt) const;
    /// RRF of the complete knn and bm25 rankings over the filtered index.
    std::vector<RetrievalResult> hybrid(std::string_view query, const llm::Embedding& query_vector, std::size_t k,
                                        const IndustryFilter& filter = std::nullopt) const;
    /// Greedy maximal marginal relevance. Each result's score is the
    /// marginal value lambda*sim(q,c) - (1-lambda)*max(0, max sim(c, selected))
    /// at the step it was picked. Clamping redundancy at zero keeps the
    /// reported scores non-increasing.
    std::vector<RetrievalResult> mmr(const llm::Embedding& query, std::size_t k, double lambda,
                                     const IndustryFilter& filter = std::nullopt) const;

    /// Writes meta.jsonl and vectors.bin into `dir`.
    void save(const std::filesystem::path& dir) const;
    static VectorIndex load(const std::filesystem::path& dir, Bm25Params params = {});

private:
    struct Entry {
        Chunk chunk;
        llm::Embedding vec; // unit norm
        std::unordered_map<std::string, std::size_t> tf;
        std::size_t length = 0;
    };

    void check_query(const llm::Embedding& q) const;
    std::vector<const Entry*> candidates(const IndustryFilter& filter) const;
    void insert_locked(Chunk chunk);
    std::vector<RetrievalResult> knn_locked(const llm::Embedding& unit_query, std::size_t k,
                                            const IndustryFilter& filter) const;
    std::vector<RetrievalResult> bm25_locked(std::string_view query, std::size_t k,
                                             const IndustryFilter& filter) const;

    Bm25Params params_;
    mutable std::shared_mutex mu_;
    std::map<std::string, Entry> entries_; // ordered by chunk_id
    std::unordered_map<std::string, std::size_t> doc_freq_;
    std::size_t total_length_ = 0;
    std::size_t dim_ = 0;
};

/// Unit-normalizes `v`; throws PreconditionError on a zero vector.
llm::Embedding normalized(const llm::Embedding& v);

/// Model-backed query rewrites.
class QueryTransformer {
public:
    QueryTransformer(const llm::Provider& provider, std::string model_id, double temperature = 0.0);

    /// Hypothetical document answering `query`, to be embedded in its place.
    std::string hyde(const std::string& query) const;
    /// `n` reformulations of `query` (n >= 2).
    std::vector<std::string> variants(const std::string& query, std::size_t n) const;

private:
    const llm::Provider& provider_;
    std::string model_;
    double temperature_;
};

/// Multi-query retrieval: knn top-k per reformulation, run concurrently and
/// fused with RRF.
std::vector<RetrievalResult> multi_query(const VectorIndex& index, const llm::Provider& provider,
                                         const QueryTransformer& transformer, const std::string& query,
                                         std::size_t n_variants, std::size_t k,
                                         const IndustryFilter& filter = std::nullopt);

enum class Transform { None, Hyde, MultiQuery };
std::string_view to_string(Transform t);
Transform transform_from_string(std::string_view s);

struct SearchOptions {
    RetrieverKind retriever = RetrieverKind::Knn;
    std::size_t k = 5;
    double mmr_lambda = 0.5;
    Transform transform = Transform::None;
    std::size_t n_variants = 3;
    IndustryFilter filter;
};

/// Query -> optional transform -> retriever. Multi-query always fans out
/// over knn.
std::vector<RetrievalResult> search(const VectorIndex& index, const llm::Provider& provider,
                                    const QueryTransformer* transformer, const std::string& query,
                                    const SearchOptions& options);

} // namespace esgqa::retrieval
