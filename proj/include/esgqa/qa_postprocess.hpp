#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "esgqa/qa_evaluation.hpp"

namespace esgqa::post {

using eval::EvalScores;
using eval::Metric;
using ingest::IndustryDoc;
using json = nlohmann::json;
using qa::QAPair;

inline constexpr double kSimilarityThreshold = 0.99;

/// Gated metrics below `theta`, in faithfulness, relevance, specificity
/// order. Throws PreconditionError for excluded scores.
std::vector<Metric> weak_metrics(const EvalScores& scores, double theta);

enum class ImproveOutcome { Improved, DiscardedMultiWeak, DiscardedStillFailing, DiscardedNewFailure };
std::string_view to_string(ImproveOutcome o);

struct ImprovementRecord {
    std::string qa_id;
    std::vector<Metric> weak; // the first entry is the targeted metric
    EvalScores before;
    std::optional<EvalScores> after;
    ImproveOutcome outcome = ImproveOutcome::Improved;

    json to_json() const;
};

struct Improvement {
    QAPair question;
    ImprovementRecord record;
};

/// A question span that may be rewritten by generalisation: an industry
/// name, widened to a preceding "the " and a following " industry".
struct IndustryMention {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Case-insensitive matches of each doc's display name, id phrase and id.
/// Overlapping matches are merged; result is ordered.
std::vector<IndustryMention> find_industry_mentions(const std::string& question,
                                                    const std::vector<const IndustryDoc*>& docs);

/// True when `rewritten` equals `original` outside the mention spans, each
/// span having been replaced by a nonempty string.
bool rewrite_within_mentions(const std::string& original, const std::string& rewritten,
                             const std::vector<IndustryMention>& mentions);

struct SbaResult {
    bool pass = false;
    std::set<char> correct_options;
    /// "pass", "multiple_correct", "none_correct" or "different_answer".
    std::string reason;
};

struct PostConfig {
    std::string model = "gpt-4o";
    double temperature = 0.0;
};

class PostProcessor {
public:
    PostProcessor(const llm::Provider& provider, PostConfig cfg = {}, qa::Thresholds thresholds = {});

    /// Single-shot rewrite for a question with exactly one weak metric,
    /// followed by full re-evaluation through `scorer`. Two or more weak
    /// metrics discard without any provider call.
    Improvement improve(const QAPair& q, const EvalScores& scores, const std::vector<const IndustryDoc*>& docs,
                        const eval::ScoreSource& scorer) const;

    /// Slightly generalised industry mention. nullopt when the question
    /// names no industry. Throws RewriteScopeViolation when the model
    /// touched text outside the mention.
    std::optional<QAPair> generalise(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const;

    SbaResult sba_check(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const;

    const qa::Thresholds& thresholds() const { return thresholds_; }

private:
    std::string rewrite(const std::string& system, const std::string& user) const;

    const llm::Provider& provider_;
    PostConfig cfg_;
    qa::Thresholds thresholds_;
};

std::string improvement_prompt(const QAPair& q, const EvalScores& scores, Metric target,
                               const std::vector<const IndustryDoc*>& docs);
std::string generalisation_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs);
std::string sba_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs);
const json& sba_schema();

/// Incremental near-duplicate check over question texts.
class SimilarityGate {
public:
    SimilarityGate(const llm::Provider& provider, double threshold = kSimilarityThreshold);

    /// Cosine of `text` to its nearest kept question, or -1 when none.
    double nearest(const std::string& text) const;
    bool is_similar(const std::string& text) const { return nearest(text) > threshold_; }
    void keep(const std::string& text);

private:
    const llm::Provider& provider_;
    double threshold_;
    std::vector<llm::Embedding> kept_;
};

/// Greedy scan in qa_id order; a question is dropped iff its cosine to an
/// already-kept question exceeds `threshold`. Dropped ids go to `dropped`.
std::vector<QAPair> similarity_filter(const std::vector<QAPair>& questions, double threshold,
                                      const llm::Provider& provider, std::vector<std::string>* dropped = nullptr);

} // namespace esgqa::post
