#include "esgqa/qa_evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "esgqa/chunking.hpp"
#include "esgqa/errors.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/util.hpp"

namespace esgqa::eval {

std::vector<std::string> metric_tokens(std::string_view text)
{
    std::vector<std::string> out;
    for (auto& t : chunking::tokenize(text)) out.push_back(std::move(t.text));
    return out;
}

void BleuConfig::validate() const
{
    if (max_n < 1) throw PreconditionError("BLEU max_n must be at least 1");
    if (weights.empty()) return;
    if (weights.size() != max_n) throw PreconditionError("BLEU needs one weight per n-gram order");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw PreconditionError("BLEU weights must be positive");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw PreconditionError("BLEU weights must sum to 1");
}

std::vector<double> BleuConfig::resolved_weights() const
{
    validate();
    if (!weights.empty()) return weights;
    return std::vector<double>(max_n, 1.0 / static_cast<double>(max_n));
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n)
{
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

} // namespace

BleuBreakdown bleu_tokens(const std::vector<std::string>& candidate,
                          const std::vector<std::vector<std::string>>& references, const BleuConfig& cfg)
{
    if (references.empty()) throw EmptyReferenceSet("BLEU needs at least one reference");
    if (candidate.empty()) throw PreconditionError("BLEU candidate is empty");
    const auto weights = cfg.resolved_weights();

    BleuBreakdown out;
    out.candidate_length = candidate.size();
    const std::size_t c = candidate.size();
    std::size_t best = references.front().size();
    for (const auto& ref : references) {
        const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
        if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
    }
    out.reference_length = best;

    for (std::size_t n = 1; n <= cfg.max_n; ++n) {
        const auto cand = ngrams(candidate, n);
        std::map<std::vector<std::string>, std::size_t> max_ref;
        for (const auto& ref : references) {
            for (const auto& [gram, count] : ngrams(ref, n)) {
                auto& m = max_ref[gram];
                m = std::max(m, count);
            }
        }
        std::size_t matched = 0;
        std::size_t total = 0;
        for (const auto& [gram, count] : cand) {
            total += count;
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) matched += std::min(count, it->second);
        }
        out.matches.push_back(matched);
        out.totals.push_back(total);
        out.precisions.push_back(total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total));
    }

    out.brevity_penalty = c > best ? 1.0 : std::exp(1.0 - static_cast<double>(best) / static_cast<double>(c));
    if (std::any_of(out.precisions.begin(), out.precisions.end(), [](double p) { return p == 0.0; })) {
        out.score = 0.0;
    } else {
        double log_sum = 0.0;
        for (std::size_t i = 0; i < out.precisions.size(); ++i) log_sum += weights[i] * std::log(out.precisions[i]);
        out.score = out.brevity_penalty * std::exp(log_sum);
    }
    return out;
}

BleuBreakdown bleu(std::string_view candidate, const std::vector<std::string>& references, const BleuConfig& cfg)
{
    std::vector<std::vector<std::string>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(metric_tokens(r));
    return bleu_tokens(metric_tokens(candidate), refs, cfg);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b)
{
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeLBreakdown rouge_l_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                               double beta)
{
    if (candidate.empty() || reference.empty()) throw PreconditionError("ROUGE-L needs nonempty inputs");
    RougeLBreakdown out;
    out.beta = beta;
    out.lcs_len = lcs_length(reference, candidate);
    out.recall = static_cast<double>(out.lcs_len) / static_cast<double>(reference.size());
    out.precision = static_cast<double>(out.lcs_len) / static_cast<double>(candidate.size());
    const double b2 = beta * beta;
    if (out.recall > 0.0 || out.precision > 0.0)
        out.score = (1.0 + b2) * out.recall * out.precision / (out.recall + b2 * out.precision);
    return out;
}

RougeLBreakdown rouge_l(std::string_view candidate, std::string_view reference, double beta)
{
    return rouge_l_tokens(metric_tokens(candidate), metric_tokens(reference), beta);
}

std::string_view to_string(Metric m)
{
    switch (m) {
    case Metric::Faithfulness: return "faithfulness";
    case Metric::Relevance: return "relevance";
    case Metric::Specificity: return "specificity";
    }
    return "faithfulness";
}

Metric metric_from_string(std::string_view s)
{
    for (auto m : {Metric::Faithfulness, Metric::Relevance, Metric::Specificity}) {
        if (to_string(m) == s) return m;
    }
    throw PreconditionError("unknown metric: " + std::string(s));
}

std::optional<double> EvalScores::metric(Metric m) const
{
    if (excluded()) return std::nullopt;
    switch (m) {
    case Metric::Faithfulness: return agg_faithfulness;
    case Metric::Relevance: return agg_relevance;
    case Metric::Specificity: return static_cast<double>(specificity);
    }
    return std::nullopt;
}

namespace {

template <typename T>
json opt(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const json& j, const char* key)
{
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

} // namespace

json EvalScores::to_json() const
{
    return {{"qa_id", qa_id},
            {"ref_faithfulness", ref_faithfulness},
            {"ref_relevance", ref_relevance},
            {"answer_faithfulness", answer_faithfulness},
            {"answer_relevance", answer_relevance},
            {"question_faithfulness", question_faithfulness},
            {"question_relevance", question_relevance},
            {"specificity", specificity},
            {"agg_faithfulness", opt(agg_faithfulness)},
            {"agg_relevance", opt(agg_relevance)},
            {"bleu", opt(bleu)},
            {"rouge_l", opt(rouge_l)},
            {"sba_pass", opt(sba_pass)}};
}

EvalScores EvalScores::from_json(const json& j)
{
    EvalScores s;
    s.qa_id = j.at("qa_id").get<std::string>();
    s.ref_faithfulness = j.at("ref_faithfulness").get<double>();
    s.ref_relevance = j.at("ref_relevance").get<double>();
    s.answer_faithfulness = j.at("answer_faithfulness").get<double>();
    s.answer_relevance = j.at("answer_relevance").get<double>();
    s.question_faithfulness = j.at("question_faithfulness").get<int>();
    s.question_relevance = j.at("question_relevance").get<int>();
    s.specificity = j.at("specificity").get<int>();
    s.agg_faithfulness = opt_get<double>(j, "agg_faithfulness");
    s.agg_relevance = opt_get<double>(j, "agg_relevance");
    s.bleu = opt_get<double>(j, "bleu");
    s.rouge_l = opt_get<double>(j, "rouge_l");
    s.sba_pass = opt_get<bool>(j, "sba_pass");
    return s;
}

EvalScores aggregate(const QAPair& q, const Components& c, double gate)
{
    auto need = [](const auto& v, const char* name) {
        if (!v) throw MissingComponent(std::string("missing score component: ") + name);
        return *v;
    };
    EvalScores s;
    s.qa_id = q.qa_id;
    s.ref_faithfulness = need(c.ref_faithfulness, "ref_faithfulness");
    s.ref_relevance = need(c.ref_relevance, "ref_relevance");
    s.answer_faithfulness = need(c.answer_faithfulness, "answer_faithfulness");
    s.answer_relevance = need(c.answer_relevance, "answer_relevance");
    s.question_faithfulness = need(c.question_faithfulness, "question_faithfulness");
    s.question_relevance = need(c.question_relevance, "question_relevance");
    s.specificity = need(c.specificity, "specificity");

    if (s.ref_faithfulness >= gate && s.ref_relevance >= gate) {
        s.agg_faithfulness =
            (rebase(s.ref_faithfulness) + s.question_faithfulness + rebase(s.answer_faithfulness)) / 3.0;
        s.agg_relevance = (rebase(s.ref_relevance) + s.question_relevance + rebase(s.answer_relevance)) / 3.0;
    }
    if (q.format == qa::Format::FreeText) {
        const std::string reference = join(q.reference_text, " ");
        const auto cand = metric_tokens(q.answer);
        const auto ref = metric_tokens(reference);
        if (!cand.empty() && !ref.empty()) {
            s.bleu = bleu_tokens(cand, {ref}).score;
            s.rouge_l = rouge_l_tokens(cand, ref).score;
        } else {
            s.bleu = 0.0;
            s.rouge_l = 0.0;
        }
    }
    return s;
}

// ---------------------------------------------------------------- judges

std::string combined_markdown(const std::vector<const IndustryDoc*>& docs)
{
    if (docs.size() == 1) return docs.front()->markdown;
    std::string out;
    for (const auto* d : docs) {
        if (!out.empty()) out += "\n\n---\n\n";
        out += "Industry: " + d->display_name() + " (" + d->industry_id + ")\n\n" + d->markdown;
    }
    return out;
}

namespace {

std::string industry_names(const std::vector<const IndustryDoc*>& docs)
{
    std::vector<std::string> names;
    for (const auto* d : docs) names.push_back(d->display_name());
    return join(names, ", ");
}

void check_docs(const std::vector<const IndustryDoc*>& docs)
{
    if (docs.empty()) throw PreconditionError("judging needs at least one source document");
    for (const auto* d : docs) {
        if (!d) throw PreconditionError("null source document");
    }
}

const char* kContinuousSystem =
    "You are an impartial evaluator. You score a piece of text against a source context on continuous scales "
    "from 0 to 1.";

} // namespace

const json& continuous_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"faithfulness", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
          {"relevance", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
          {"reason", {{"type", "string"}}}}},
        {"required", {"faithfulness", "relevance"}}};
    return s;
}

const json& question_score_schema()
{
    static const json s = {{"type", "object"},
                           {"properties",
                            {{"faithfulness", {{"type", "integer"}, {"minimum", 1}, {"maximum", 10}}},
                             {"relevancy", {{"type", "integer"}, {"minimum", 1}, {"maximum", 10}}}}},
                           {"required", {"faithfulness", "relevancy"}}};
    return s;
}

const json& specificity_schema()
{
    static const json s = {{"type", "object"},
                           {"properties", {{"specificity", {{"type", "integer"}, {"minimum", 1}, {"maximum", 10}}}}},
                           {"required", {"specificity"}}};
    return s;
}

std::string question_eval_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs)
{
    const bool one = docs.size() == 1;
    std::string p;
    p += "Critically evaluate the following question based on the provided context for the relevant ";
    p += one ? "industry" : "industries";
    p += ". Be extremely rigorous and unforgiving in your assessment.\n\n";
    p += "Faithfulness: Measure how accurately the question is grounded in the provided context";
    p += one ? "" : "s";
    p += ". A faithful question must be directly answerable from the given information without any need for "
         "external knowledge or inference. Be extremely critical - even minor discrepancies or omissions should "
         "significantly impact the score.\n\n";
    p += "Relevancy: Assess how precisely the question aligns with ";
    p += one ? "the" : "each";
    p += " industry's specific context, challenges, and goals. A highly relevant question should directly address "
         "key aspects, metrics, or challenges unique to the industry. Be very strict - even slight deviations from "
         "industry-specific concerns should result in lower scores. ALSO: if the question does not cover all the "
         "industries required, it must be considered irrelevant and given a score of 1.\n\n";
    p += "Score both metrics on a scale of 1 to 10, where:\n"
         "1-2: Completely irrelevant or unfaithful\n"
         "3-4: Major flaws in relevancy or faithfulness\n"
         "5-6: Moderate issues, but still lacking\n"
         "7-8: Generally good, with minor issues\n"
         "9-10: Excellent, near-perfect alignment\n\n";
    p += "Example Context:\n"
         "\"The Apparel, Accessories & Footwear industry faces significant sustainability challenges, particularly "
         "in raw materials sourcing. Key metrics include:\n"
         "1. Percentage of raw materials third-party certified to environmental and/or social sustainability "
         "standards.\n"
         "2. Priority raw materials: Description of environmental and social risks and/or hazards associated with "
         "priority raw materials used for products.\n"
         "3. Environmental impacts in the supply chain: Percentage of (1) Tier 1 supplier facilities and (2) "
         "supplier facilities beyond Tier 1 that have completed the Sustainable Apparel Coalition's Higg Facility "
         "Environmental Module (Higg FEM) assessment or an equivalent environmental data assessment.\"\n\n";
    p += "Examples:\n"
         "Good Question  (Faithfulness: 10, Relevancy: 9):\n"
         "\"What percentage of raw materials in the Apparel, Accessories & Footwear industry should be third-party "
         "certified to environmental or social sustainability standards, according to the context?\"\n"
         "Explanation: This question directly addresses a specific metric mentioned in the industry context and "
         "can be answered solely based on the provided information.\n\n"
         "Very Bad Question (Faithfulness: 1, Relevancy: 2):\n"
         "\"What is the average salary of a fashion designer in New York City?\"\n"
         "Explanation: This question is neither relevant to the industry's sustainability metrics nor answerable "
         "from the given context.\n\n";
    p += std::string(one ? "Industry: " : "Industries: ") + industry_names(docs) + "\n\n";
    p += "Context:\n" + join(q.reference_text, "\n") + "\n\n";
    p += "Question to evaluate:\n" + q.question;
    return p;
}

std::string specificity_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs)
{
    const bool mcq = q.format == qa::Format::Mcq;
    std::string p;
    p += "Full content:\n" + combined_markdown(docs) + "\n\n";
    p += "Evaluate the specificity of the following question based on the provided context and compared to the "
         "highly specific question examples provided.\n"
         "Score the specificity on a scale of 1 to 10, where 1 is extremely broad or general and 10 is very "
         "specific.\n\n";
    p += mcq ? "Consider both the question itself and the answer options given."
             : "Consider the question and the expected level of detail in the answer.";
    p += "\n\nIf a question requires a very specific answer directly from a specific sentence/part of the document, "
         "it is considered more specific. If a question can be answered in multiple ways or is broad, it is "
         "considered less specific.\n\n"
         "To help you, here are some example questions below:\n\n"
         "Highest specificity questions that score 10:\n"
         "\"What is the unit of measure for the 'Percentage of raw materials third-party certified to an "
         "environmental and/or social sustainability standard, by standard' metric in the Apparel, Accessories & "
         "Footwear industry (as listed in the relevant table)?\"\n\n"
         "High specificity questions that score 8:\n"
         "\"What topics are covered in the 'Raw Materials Sourcing' section of the Apparel, Accessories & Footwear "
         "document, and what are the key takeaways for a company writing its sustainability report in this "
         "industry?\"\n\n"
         "Medium specificity questions that score 6:\n"
         "\"A company in the Household & Personal Products industry is facing water scarcity issues in multiple "
         "manufacturing locations. What is the most comprehensive approach to address this challenge in their "
         "sustainability report?\"\n\n"
         "Low specificity questions that score 3:\n"
         "\"How might the increasing focus on energy efficiency certifications in the appliance industry influence "
         "future regulatory trends and consumer behaviour?\"\n\n"
         "Lowest specificity questions that score 1:\n"
         "\"What broader implications does the industry's focus on energy management have for environmental "
         "sustainability?\"\n\n"
         "Now the question to be evaluated:\n";
    p += "Question: " + (mcq ? q.question_with_options() : q.question);
    return p;
}

Judge::Judge(const llm::Provider& provider, JudgeConfig cfg) : provider_(provider), cfg_(std::move(cfg)) {}

json Judge::call(const std::string& system, const std::string& user, const json& schema,
                 const std::string& name) const
{
    llm::ProviderRequest req;
    req.model_id = cfg_.model;
    req.temperature = cfg_.temperature;
    req.messages = {llm::Message::system(system), llm::Message::user(user)};
    req.output_schema = llm::OutputSchema{name, "Return the scores for the evaluated text", schema};
    try {
        return provider_.complete_structured(req);
    } catch (const SchemaViolation& e) {
        throw NonNumericJudgment(std::string("judge returned no usable score: ") + e.what());
    }
}

ContinuousScores Judge::eval_reference(const std::vector<std::string>& reference_text,
                                       const std::vector<const IndustryDoc*>& docs) const
{
    if (reference_text.empty()) throw EmptyReferenceSet("reference evaluation needs reference text");
    check_docs(docs);
    std::string user =
        "Score the TEXT against the CONTEXT.\n"
        "faithfulness: the fraction of statements in the TEXT that are supported by the CONTEXT. Text taken "
        "verbatim from the CONTEXT is fully faithful.\n"
        "relevance: the fraction of the TEXT that is pertinent to the subject matter of the CONTEXT.\n\n"
        "CONTEXT:\n" +
        combined_markdown(docs) + "\n\nTEXT:\n" + join(reference_text, "\n");
    auto j = call(kContinuousSystem, user, continuous_schema(), "reference_scores");
    return {j.at("faithfulness").get<double>(), j.at("relevance").get<double>()};
}

ContinuousScores Judge::eval_answer(const QAPair& q) const
{
    if (q.reference_text.empty()) throw EmptyReferenceSet("answer evaluation needs reference text");
    std::string user =
        "Score the ANSWER to the QUESTION against the CONTEXT.\n"
        "faithfulness: the fraction of statements in the ANSWER that are supported by the CONTEXT.\n"
        "relevance: the fraction of the ANSWER that addresses the QUESTION.\n\n"
        "CONTEXT:\n" +
        join(q.reference_text, "\n") + "\n\nQUESTION:\n" + q.question + "\n\nANSWER:\n" + q.answer_text();
    auto j = call(kContinuousSystem, user, continuous_schema(), "answer_scores");
    return {j.at("faithfulness").get<double>(), j.at("relevance").get<double>()};
}

QuestionScores Judge::eval_question(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    if (trim(q.question).empty()) throw PreconditionError("cannot evaluate an empty question");
    check_docs(docs);
    auto j = call("You are an expert question evaluator. Given a question, you assess its faithfulness and "
                  "relevance relative to the reference text.",
                  question_eval_prompt(q, docs), question_score_schema(), "question_scores");
    return {j.at("faithfulness").get<int>(), j.at("relevancy").get<int>()};
}

int Judge::eval_specificity(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    if (trim(q.question).empty()) throw PreconditionError("cannot evaluate an empty question");
    check_docs(docs);
    auto j = call("You are an expert question evaluator.", specificity_prompt(q, docs), specificity_schema(),
                  "specificity_score");
    return j.at("specificity").get<int>();
}

Evaluator::Evaluator(const llm::Provider& provider, JudgeConfig cfg, double gate)
    : judge_(provider, std::move(cfg)), gate_(gate)
{
}

Components Evaluator::components(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    Components c;
    auto ref = judge_.eval_reference(q.reference_text, docs);
    c.ref_faithfulness = ref.faithfulness;
    c.ref_relevance = ref.relevance;
    auto ans = judge_.eval_answer(q);
    c.answer_faithfulness = ans.faithfulness;
    c.answer_relevance = ans.relevance;
    auto qs = judge_.eval_question(q, docs);
    c.question_faithfulness = qs.faithfulness;
    c.question_relevance = qs.relevance;
    c.specificity = judge_.eval_specificity(q, docs);
    return c;
}

EvalScores Evaluator::score(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    return aggregate(q, components(q, docs), gate_);
}

std::vector<const IndustryDoc*> docs_for(const QAPair& q, const std::vector<IndustryDoc>& corpus)
{
    std::vector<const IndustryDoc*> out;
    for (const auto& id : q.industries) {
        auto it = std::find_if(corpus.begin(), corpus.end(), [&](const IndustryDoc& d) { return d.industry_id == id; });
        if (it == corpus.end()) throw UnknownIndustryId("question " + q.qa_id + " names unknown industry " + id);
        out.push_back(&*it);
    }
    return out;
}

std::vector<EvalScores> evaluate_all(const ScoreSource& source, const std::vector<QAPair>& pairs,
                                     const std::vector<IndustryDoc>& corpus, std::size_t parallelism)
{
    return parallel_map<EvalScores>(pairs.size(), parallelism, [&](std::size_t i) {
        return source.score(pairs[i], docs_for(pairs[i], corpus));
    });
}

std::vector<EvalScores> read_scores(const std::string& path)
{
    std::vector<EvalScores> out;
    for (const auto& row : read_jsonl(path)) out.push_back(EvalScores::from_json(row));
    return out;
}

void write_scores(const std::string& path, const std::vector<EvalScores>& scores)
{
    std::vector<json> rows;
    rows.reserve(scores.size());
    for (const auto& s : scores) rows.push_back(s.to_json());
    write_jsonl(path, rows);
}

} // namespace esgqa::eval
