#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esgqa/qa_pipelines.hpp"
#include "esgqa/qa_types.hpp"
#include "esgqa/replay_cache.hpp"

namespace esgqa::bench {

using json = nlohmann::json;

struct GradedAnswer {
    std::string qa_id;
    qa::Span span = qa::Span::Local;
    qa::Format format = qa::Format::Mcq;
    std::optional<char> extracted_letter;
    std::optional<bool> correct; // present iff a letter was extracted
    std::optional<double> bleu;
    std::optional<double> rouge_l;
    std::string raw_answer;
    bool flagged = false; // MCQ answer with no extractable letter
    bool errored = false;
    std::string error;

    json to_json() const;
};

/// Letter precedence: a lone letter; "answer is X" or "X." / "X)" at the
/// start; then a verbatim option text.
std::optional<char> extract_letter(const std::string& raw,
                                   const std::optional<std::array<std::string, 5>>& options = std::nullopt);
GradedAnswer grade_mcq(const std::string& raw, char correct_letter,
                       const std::optional<std::array<std::string, 5>>& options = std::nullopt);
/// BLEU and ROUGE-L against the dataset answer; an empty response scores 0.
GradedAnswer grade_free_text(const std::string& raw, const std::string& reference);

struct CellStats {
    std::size_t n = 0;
    std::size_t graded = 0; // n - errored
    std::size_t correct = 0;
    std::size_t incorrect = 0;
    std::size_t errored = 0;
    std::size_t unextractable = 0; // counted in incorrect
    std::optional<double> accuracy; // over graded answers only
    std::optional<double> bleu;
    std::optional<double> rouge_l;

    json to_json() const;
};

/// Cell key "<span>/<format>", e.g. "local/mcq".
std::string cell_key(qa::Span span, qa::Format format);

struct BenchReport {
    std::string run_id;
    pipe::PipelineConfig config;
    std::map<std::string, CellStats> cells;
    std::optional<llm::CacheStats> cache;

    json to_json() const;
    /// One row in the layout of a per-type results table.
    std::string to_markdown() const;
};

/// Aggregates graded answers per (span, format), in qa_id order.
BenchReport aggregate(const std::vector<GradedAnswer>& graded, const pipe::PipelineConfig& cfg, std::string run_id);

struct BenchOptions {
    std::size_t parallelism = 4;
    std::string run_id = "run";
};

struct BenchResult {
    BenchReport report;
    std::vector<GradedAnswer> graded; // qa_id order
};

/// Answers every question through `answerer` and grades it. Provider
/// failures are recorded as errored; CacheMiss aborts the run.
BenchResult run_benchmark(const std::vector<qa::QAPair>& dataset, const pipe::Answerer& answerer,
                          const pipe::PipelineConfig& cfg, const BenchOptions& opts = {});

/// report.json, report.md and answers.jsonl.
void write_bench(const std::filesystem::path& dir, const BenchResult& result);

// ---------------------------------------------------------------- app config

struct ProviderSettings {
    std::string kind = "mock"; // mock | openai
    std::string base_url = "https://api.openai.com";
    std::string api_key;       // environment only, never read from files
    std::string cache_dir;     // empty disables the replay cache
    llm::CacheMode cache_mode = llm::CacheMode::ReadWrite;
    std::string embedding_model = "text-embedding-3-small";
    std::uint64_t mock_seed = 0;
};

struct AppConfig {
    ProviderSettings provider;
    pipe::PipelineConfig pipeline;
    qa::Thresholds thresholds;
    std::string generator_model = "claude-3-5-sonnet";
    std::string judge_model = "gpt-4o";
    std::uint64_t seed = 0;

    /// Keys: provider, pipeline, thresholds, generator_model, judge_model,
    /// seed. An "api_key" entry in a file is rejected.
    static AppConfig from_json(const json& j);
    static AppConfig load(const std::filesystem::path& path);
    /// ESGQA_PROVIDER, ESGQA_BASE_URL, ESGQA_CACHE_DIR, ESGQA_CACHE_MODE and
    /// OPENAI_API_KEY override the file.
    void apply_env();
    json to_json() const; // without secrets
};

/// Backend per settings, wrapped in the replay cache when one is set.
std::shared_ptr<llm::Backend> make_backend(const ProviderSettings& settings);

} // namespace esgqa::bench
