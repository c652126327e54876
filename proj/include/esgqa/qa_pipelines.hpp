#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "esgqa/chunking.hpp"
#include "esgqa/industry_classifier.hpp"
#include "esgqa/qa_types.hpp"
#include "esgqa/retrieval.hpp"

namespace esgqa::pipe {

using json = nlohmann::json;

enum class Variant { Baseline, CustomRag, LlmPipeline };
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct PipelineConfig {
    Variant variant = Variant::Baseline;
    chunking::ChunkingSpec chunking;
    retrieval::RetrieverKind retriever = retrieval::RetrieverKind::Knn;
    std::size_t k = 5;
    retrieval::Transform transform = retrieval::Transform::None;
    std::string generator_model = "gpt-4o-mini";
    double temperature = 0.5;
    std::string gate_model = "gpt-4o-mini";
    std::string selector_model = "gpt-4o-mini";
    std::string transform_model = "gpt-4o-mini";
    std::string refusal = "I can only help with questions about IFRS sustainability reporting standards.";
    std::size_t parallelism = 4;

    void validate() const;
    /// custom_rag pins knn, k = 5, markdown chunking and no transform.
    PipelineConfig effective() const;
    json to_json() const;
    static PipelineConfig from_json(const json& j);
};

/// One piece of context handed to the generator: a retrieved chunk or a
/// selected snippet.
struct RetrievedItem {
    std::string source; // chunk_id, or "<industry_id>#<n>" for snippets
    std::string industry;
    double score = 0.0;
    std::string text;

    json to_json() const;
};

struct Answer {
    std::string text;
    std::vector<RetrievedItem> retrieved;
    bool gated = false;
    Variant pipeline = Variant::Baseline;
    std::vector<std::string> industries;   // classifier output, when used
    std::vector<RetrievedItem> rejected;   // selector snippets that failed verification

    json to_json() const;
};

// ---------------------------------------------------------------- gate

const json& relevance_schema();
std::string relevance_prompt(const std::string& query);

class RelevanceGate {
public:
    RelevanceGate(const llm::Provider& provider, std::string model);
    /// False without a call for blank queries.
    bool relevant(const std::string& query) const;

private:
    const llm::Provider& provider_;
    std::string model_;
};

// ---------------------------------------------------------------- generation

std::string answer_system_prompt();
/// Numbered context blocks, each labelled with its industry, then the query.
std::string answer_prompt(const std::string& query, const std::vector<RetrievedItem>& context,
                          const std::map<std::string, std::string>& industry_names = {});

/// Chunks every document per `spec`, embeds the chunks and loads them into
/// a fresh index.
retrieval::VectorIndex build_index(const std::vector<ingest::IndustryDoc>& corpus,
                                   const chunking::ChunkingSpec& spec, const llm::Provider& provider);

class Answerer {
public:
    virtual ~Answerer() = default;
    virtual Answer answer(const std::string& query) const = 0;
    virtual Variant variant() const = 0;
};

/// Gate -> optional transform -> top-k over the whole index -> generate.
class BaselineRag : public Answerer {
public:
    BaselineRag(const llm::Provider& provider, const retrieval::VectorIndex& index, PipelineConfig cfg);
    Answer answer(const std::string& query) const override;
    Variant variant() const override { return Variant::Baseline; }

private:
    const llm::Provider& provider_;
    const retrieval::VectorIndex& index_;
    PipelineConfig cfg_;
    RelevanceGate gate_;
    retrieval::QueryTransformer transformer_;
};

/// Gate -> classify -> industry-filtered knn top-5 -> generate.
class CustomRag : public Answerer {
public:
    CustomRag(const llm::Provider& provider, const retrieval::VectorIndex& index,
              const cls::LlmClassifier& classifier, PipelineConfig cfg);
    Answer answer(const std::string& query) const override;
    Variant variant() const override { return Variant::CustomRag; }

private:
    const llm::Provider& provider_;
    const retrieval::VectorIndex& index_;
    const cls::LlmClassifier& classifier_;
    PipelineConfig cfg_;
    RelevanceGate gate_;
};

const json& snippet_schema();
std::string snippet_prompt(const ingest::IndustryDoc& doc, const std::string& query);

/// Gate -> classify -> per-industry snippet selection over the full
/// markdown -> verbatim check -> combine -> generate.
class LlmPipeline : public Answerer {
public:
    LlmPipeline(const llm::Provider& provider, const std::vector<ingest::IndustryDoc>& corpus,
                const cls::LlmClassifier& classifier, PipelineConfig cfg);
    /// Throws AllSnippetsRejected when no selected snippet survives.
    Answer answer(const std::string& query) const override;
    Variant variant() const override { return Variant::LlmPipeline; }

private:
    const llm::Provider& provider_;
    const std::vector<ingest::IndustryDoc>& corpus_;
    const cls::LlmClassifier& classifier_;
    PipelineConfig cfg_;
    RelevanceGate gate_;
};

/// The pipeline input for a dataset question: MCQs carry their options.
std::string query_for(const qa::QAPair& q);

// ---------------------------------------------------------------- fine-tune export

json finetune_record(const qa::QAPair& mcq);

struct FinetuneExample {
    std::string qa_id;
    std::string question;
    std::array<std::string, 5> options;
    char answer = 'A';
};
FinetuneExample parse_finetune_record(const json& record);

/// JSONL prompt/completion records for the MCQs in `pairs`, ordered by
/// qa_id; free-text pairs are skipped with a warning. Returns the number
/// of records written.
std::size_t export_finetune_dataset(const std::vector<qa::QAPair>& pairs, const std::filesystem::path& out);

} // namespace esgqa::pipe
