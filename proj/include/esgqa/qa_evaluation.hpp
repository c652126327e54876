#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esgqa/ingest.hpp"
#include "esgqa/llm_provider.hpp"
#include "esgqa/qa_types.hpp"

namespace esgqa::eval {

using ingest::IndustryDoc;
using json = nlohmann::json;
using qa::QAPair;

// ---------------------------------------------------------------- metrics

/// Tokens used by BLEU and ROUGE-L (the chunking tokenizer's surface forms).
std::vector<std::string> metric_tokens(std::string_view text);

struct BleuConfig {
    std::size_t max_n = 4;
    std::vector<double> weights; // empty: uniform 1/max_n

    void validate() const;
    std::vector<double> resolved_weights() const;
};

struct BleuBreakdown {
    std::vector<double> precisions;     // p_n, n = 1..N
    std::vector<std::size_t> matches;   // clipped n-gram matches
    std::vector<std::size_t> totals;    // candidate n-grams
    double brevity_penalty = 1.0;
    std::size_t candidate_length = 0;   // c
    std::size_t reference_length = 0;   // r
    double score = 0.0;
};

BleuBreakdown bleu(std::string_view candidate, const std::vector<std::string>& references, const BleuConfig& cfg = {});
BleuBreakdown bleu_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::vector<std::string>>& references, const BleuConfig& cfg = {});

struct RougeLBreakdown {
    std::size_t lcs_len = 0;
    double recall = 0.0;    // LCS / len(reference)
    double precision = 0.0; // LCS / len(candidate)
    double beta = 1.2;
    double score = 0.0;
};

RougeLBreakdown rouge_l(std::string_view candidate, std::string_view reference, double beta = 1.2);
RougeLBreakdown rouge_l_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                               double beta = 1.2);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// ---------------------------------------------------------------- scores

inline constexpr double kReferenceGate = 0.7;

/// [0,1] -> [1,10].
inline double rebase(double raw) { return 1.0 + 9.0 * raw; }

enum class Metric { Faithfulness, Relevance, Specificity };
std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

struct EvalScores {
    std::string qa_id;
    double ref_faithfulness = 0.0;
    double ref_relevance = 0.0;
    double answer_faithfulness = 0.0;
    double answer_relevance = 0.0;
    int question_faithfulness = 1;
    int question_relevance = 1;
    int specificity = 1;
    std::optional<double> agg_faithfulness;
    std::optional<double> agg_relevance;
    std::optional<double> bleu;
    std::optional<double> rouge_l;
    std::optional<bool> sba_pass;

    /// Reference gate failed: no aggregates.
    bool excluded() const { return !agg_faithfulness.has_value(); }
    /// Value of a gated metric on the 1-10 scale; nullopt when excluded.
    std::optional<double> metric(Metric m) const;

    json to_json() const;
    static EvalScores from_json(const json& j);
};

/// Raw judge outputs, any of which may be missing.
struct Components {
    std::optional<double> ref_faithfulness, ref_relevance;
    std::optional<double> answer_faithfulness, answer_relevance;
    std::optional<int> question_faithfulness, question_relevance;
    std::optional<int> specificity;
};

/// Applies the reference gate, rebases [0,1] components and averages.
/// Free-text questions also get BLEU and ROUGE-L of the answer against the
/// joined reference text. Throws MissingComponent.
EvalScores aggregate(const QAPair& q, const Components& c, double gate = kReferenceGate);

// ---------------------------------------------------------------- judges

/// A single doc's markdown, or each doc's markdown under an industry label.
std::string combined_markdown(const std::vector<const IndustryDoc*>& docs);

struct ContinuousScores {
    double faithfulness = 0.0;
    double relevance = 0.0;
};

struct QuestionScores {
    int faithfulness = 1;
    int relevance = 1;
};

struct JudgeConfig {
    std::string model = "gpt-4o";
    double temperature = 0.0;
};

/// Model-backed judges, all via structured output.
class Judge {
public:
    Judge(const llm::Provider& provider, JudgeConfig cfg = {});

    /// Reference snippets scored against the full markdown of `docs`.
    ContinuousScores eval_reference(const std::vector<std::string>& reference_text,
                                    const std::vector<const IndustryDoc*>& docs) const;
    /// The answer (option text for MCQs) scored against the reference text.
    ContinuousScores eval_answer(const QAPair& q) const;
    QuestionScores eval_question(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const;
    int eval_specificity(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const;

    const JudgeConfig& config() const { return cfg_; }

private:
    json call(const std::string& system, const std::string& user, const json& schema, const std::string& name) const;

    const llm::Provider& provider_;
    JudgeConfig cfg_;
};

std::string question_eval_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs);
std::string specificity_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs);
const json& continuous_schema();
const json& question_score_schema();
const json& specificity_schema();

/// Anything that can score a question; the pipeline depends on this rather
/// than on a concrete judge so tests can script scores.
class ScoreSource {
public:
    virtual ~ScoreSource() = default;
    virtual EvalScores score(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const = 0;
};

class Evaluator : public ScoreSource {
public:
    Evaluator(const llm::Provider& provider, JudgeConfig cfg = {}, double gate = kReferenceGate);

    Components components(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const;
    EvalScores score(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const override;

    const Judge& judge() const { return judge_; }

private:
    Judge judge_;
    double gate_;
};

/// The docs a question was generated from, in industry order. Throws
/// UnknownIndustryId.
std::vector<const IndustryDoc*> docs_for(const QAPair& q, const std::vector<IndustryDoc>& corpus);

/// Scores every pair concurrently; output follows input order.
std::vector<EvalScores> evaluate_all(const ScoreSource& source, const std::vector<QAPair>& pairs,
                                     const std::vector<IndustryDoc>& corpus, std::size_t parallelism = 4);

std::vector<EvalScores> read_scores(const std::string& path);
void write_scores(const std::string& path, const std::vector<EvalScores>& scores);

} // namespace esgqa::eval
