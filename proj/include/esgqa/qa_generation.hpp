#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "esgqa/qa_evaluation.hpp"
#include "esgqa/qa_postprocess.hpp"
#include "esgqa/qa_types.hpp"

namespace esgqa::gen {

using ingest::IndustryDoc;
using json = nlohmann::json;
using qa::Format;
using qa::Method;
using qa::QAPair;
using qa::QaType;

/// User-representative question templates ("xxx" placeholders) per
/// (span, hops, format).
class QuestionStructureBank {
public:
    /// The bank compiled into the library.
    static const QuestionStructureBank& builtin();
    /// Keys "Local", "Cross-industry", "Free_local", "Free_cross-industry",
    /// each holding "single_hop" and "multi_hop" lists.
    static QuestionStructureBank from_json(const json& j);

    const std::vector<std::string>& templates(const QaType& t) const;
    /// `lo`..`hi` distinct templates (capped at the category size), chosen
    /// uniformly without replacement.
    std::vector<std::string> sample(const QaType& t, std::mt19937_64& rng, std::size_t lo = 10,
                                    std::size_t hi = 12) const;

private:
    std::map<std::tuple<qa::Span, qa::Hops, Format>, std::vector<std::string>> templates_;
};

const json& mcq_schema();
const json& free_text_schema();
llm::OutputSchema output_schema(Format f);

std::string system_prompt();
/// Short type label, e.g. "local single-hop".
std::string qa_type_label(const QaType& t);
/// The type explanation given to chain-of-thought prompts.
std::string qa_type_description(const QaType& t, const std::vector<const IndustryDoc*>& contexts);
std::string user_prompt(Method method, const QaType& t, const std::vector<const IndustryDoc*>& contexts,
                        std::size_t n, const std::vector<std::string>& structures = {});

struct GeneratorConfig {
    std::string model = "claude-3-5-sonnet";
    std::uint64_t seed = 0;
};

struct GenerationRequest {
    std::vector<const IndustryDoc*> contexts;
    QaType type;
    std::size_t n = 1;
    Method method = Method::CotFewShot;
    double temperature = 0.5;
    std::string id_prefix = "qa";
};

class QAGenerator {
public:
    QAGenerator(const llm::Provider& provider, GeneratorConfig cfg = {},
                const QuestionStructureBank& bank = QuestionStructureBank::builtin());

    /// Exactly `n` validated pairs with ids "<prefix>-01", "<prefix>-02", ...
    /// A short reply is retried once for the remainder, then UnderGeneration.
    std::vector<QAPair> generate(const GenerationRequest& req) const;

private:
    std::vector<QAPair> call(const GenerationRequest& req, std::size_t n, std::mt19937_64& rng) const;

    const llm::Provider& provider_;
    GeneratorConfig cfg_;
    const QuestionStructureBank& bank_;
};

/// Parses one schema item into a pair tagged with the request's metadata.
QAPair pair_from_item(const json& item, const GenerationRequest& req, std::string qa_id);

struct IndustryGroup {
    std::vector<std::string> industries;
    std::string explanation;
};

struct PairingConfig {
    std::string model = "claude-3-5-sonnet";
    double temperature = 0.0;
    std::size_t groups = 5;
    std::size_t group_size = 5;
};

const json& industry_groups_schema();
std::string industry_groups_prompt(const std::vector<IndustryDoc>& docs, const PairingConfig& cfg);

/// Model-suggested industry groups. A two-doc corpus yields its single
/// group without a call. Throws UnknownIndustryId.
std::vector<IndustryGroup> pair_industries(const std::vector<IndustryDoc>& docs, const llm::Provider& provider,
                                           const PairingConfig& cfg = {});
/// Sorted distinct (a < b) pairs drawn from within each group.
std::vector<std::pair<std::string, std::string>> pairs_from_groups(const std::vector<IndustryGroup>& groups);

struct GenerationPlan {
    std::size_t per_type = 1;
    std::vector<QaType> types = QaType::all();
    /// Local-question industries; empty means the whole corpus.
    std::vector<std::string> industries;
    std::vector<std::pair<std::string, std::string>> industry_pairs;
    qa::Thresholds thresholds;
    Method method = Method::CotFewShot;
    double temperature = 0.5;
    double similarity_threshold = post::kSimilarityThreshold;
    std::size_t parallelism = 4;

    /// Throws PreconditionError or UnknownIndustryId.
    void validate(const std::vector<IndustryDoc>& corpus) const;
    json to_json() const;
    static GenerationPlan from_json(const json& j);
};

struct AuditRecord {
    std::string qa_id;
    QaType type;
    std::vector<std::string> industries;
    std::string outcome; // accepted | discarded | failed
    std::string reason;  // empty when accepted
    json gates = json::object();
    std::optional<QAPair> question;
    std::optional<eval::EvalScores> scores;

    json to_json() const;
};

struct PipelineResult {
    std::vector<QAPair> accepted;           // qa_id order
    std::vector<eval::EvalScores> scores;   // parallel to accepted
    std::vector<AuditRecord> audit;         // one per planned question, qa_id order
    std::vector<post::ImprovementRecord> improvements;
    std::size_t generated = 0;
    std::size_t discarded = 0;
    std::size_t failed = 0;
};

struct PipelineServices {
    const QAGenerator& generator;
    const eval::ScoreSource& scorer;
    const post::PostProcessor& post;
    const llm::Provider& embedder;
};

/// Generate, evaluate, improve once if needed, generalise, then (in qa_id
/// order) similarity filter and SBA gate before acceptance.
PipelineResult run_generation_pipeline(const GenerationPlan& plan, const std::vector<IndustryDoc>& corpus,
                                       const PipelineServices& services);

/// qa_pairs.jsonl, scores.jsonl, audit.jsonl and improvements.jsonl.
void write_dataset(const std::filesystem::path& dir, const PipelineResult& result);

} // namespace esgqa::gen
