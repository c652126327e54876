#include "esgqa/qa_postprocess.hpp"

#include <algorithm>
#include <cstdio>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/util.hpp"

namespace esgqa::post {

namespace {

const Metric kMetrics[] = {Metric::Faithfulness, Metric::Relevance, Metric::Specificity};

std::string fixed2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string prompt_metric_name(Metric m)
{
    return m == Metric::Relevance ? "relevancy" : std::string(eval::to_string(m));
}

/// Model output with surrounding whitespace and quotes removed.
std::string clean_rewrite(std::string s)
{
    s = trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(s.substr(1, s.size() - 2));
    return s;
}

std::string industry_list(const std::vector<const IndustryDoc*>& docs, std::string_view sep)
{
    std::vector<std::string> names;
    for (const auto* d : docs) names.push_back(d->display_name());
    return join(names, sep);
}

bool starts_with_ci(std::string_view s, std::string_view prefix)
{
    return s.size() >= prefix.size() && to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

bool ends_with_ci(std::string_view s, std::string_view suffix)
{
    return s.size() >= suffix.size() && to_lower(s.substr(s.size() - suffix.size())) == to_lower(suffix);
}

} // namespace

std::vector<Metric> weak_metrics(const EvalScores& scores, double theta)
{
    if (scores.excluded()) throw PreconditionError("question " + scores.qa_id + " was excluded by the reference gate");
    std::vector<Metric> out;
    for (auto m : kMetrics) {
        if (*scores.metric(m) < theta) out.push_back(m);
    }
    return out;
}

std::string_view to_string(ImproveOutcome o)
{
    switch (o) {
    case ImproveOutcome::Improved: return "improved";
    case ImproveOutcome::DiscardedMultiWeak: return "discarded_multi_weak";
    case ImproveOutcome::DiscardedStillFailing: return "discarded_still_failing";
    case ImproveOutcome::DiscardedNewFailure: return "discarded_new_failure";
    }
    return "improved";
}

json ImprovementRecord::to_json() const
{
    json weak_names = json::array();
    for (auto m : weak) weak_names.push_back(eval::to_string(m));
    return {{"qa_id", qa_id},
            {"weak_metric", weak.empty() ? json(nullptr) : json(eval::to_string(weak.front()))},
            {"weak_metrics", weak_names},
            {"before", before.to_json()},
            {"after", after ? after->to_json() : json(nullptr)},
            {"outcome", to_string(outcome)}};
}

std::vector<IndustryMention> find_industry_mentions(const std::string& question,
                                                    const std::vector<const IndustryDoc*>& docs)
{
    std::vector<IndustryMention> raw;
    for (const auto* d : docs) {
        std::set<std::string> names;
        for (const auto& n : {d->display_name(), d->industry_name, ingest::id_phrase(d->industry_id), d->industry_id}) {
            if (!trim(n).empty()) names.insert(trim(n));
        }
        for (const auto& name : names) {
            for (std::size_t pos = ifind(question, name); pos != std::string::npos;
                 pos = ifind(question, name, pos + 1))
                raw.push_back({pos, pos + name.size()});
        }
    }
    for (auto& m : raw) {
        std::string_view before(question.data(), m.begin);
        std::string_view after(question.data() + m.end, question.size() - m.end);
        if (ends_with_ci(before, "the ")) m.begin -= 4;
        if (starts_with_ci(after, " industries"))
            m.end += 11;
        else if (starts_with_ci(after, " industry"))
            m.end += 9;
    }
    std::sort(raw.begin(), raw.end(), [](const IndustryMention& a, const IndustryMention& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end > b.end;
    });
    std::vector<IndustryMention> merged;
    for (const auto& m : raw) {
        if (!merged.empty() && m.begin <= merged.back().end)
            merged.back().end = std::max(merged.back().end, m.end);
        else
            merged.push_back(m);
    }
    return merged;
}

bool rewrite_within_mentions(const std::string& original, const std::string& rewritten,
                             const std::vector<IndustryMention>& mentions)
{
    if (mentions.empty()) return original == rewritten;
    std::vector<std::string_view> keep;
    std::size_t cursor = 0;
    for (const auto& m : mentions) {
        keep.emplace_back(original.data() + cursor, m.begin - cursor);
        cursor = m.end;
    }
    keep.emplace_back(original.data() + cursor, original.size() - cursor);

    const std::string_view out(rewritten);
    const std::string_view head = keep.front();
    const std::string_view tail = keep.back();
    if (out.size() < head.size() + tail.size() + mentions.size()) return false;
    if (out.substr(0, head.size()) != head || out.substr(out.size() - tail.size()) != tail) return false;
    const std::size_t limit = out.size() - tail.size();
    std::size_t pos = head.size();
    for (std::size_t i = 1; i + 1 < keep.size(); ++i) {
        const auto found = out.substr(0, limit).find(keep[i], pos + 1);
        if (found == std::string_view::npos) return false;
        pos = found + keep[i].size();
    }
    return limit > pos;
}

PostProcessor::PostProcessor(const llm::Provider& provider, PostConfig cfg, qa::Thresholds thresholds)
    : provider_(provider), cfg_(std::move(cfg)), thresholds_(thresholds)
{
}

std::string PostProcessor::rewrite(const std::string& system, const std::string& user) const
{
    llm::ProviderRequest req;
    req.model_id = cfg_.model;
    req.temperature = cfg_.temperature;
    req.messages = {llm::Message::system(system), llm::Message::user(user)};
    auto out = clean_rewrite(provider_.complete_text(req));
    if (out.empty()) throw ProviderError("rewrite returned an empty question");
    return out;
}

std::string improvement_prompt(const QAPair& q, const EvalScores& scores, Metric target,
                               const std::vector<const IndustryDoc*>& docs)
{
    std::string p;
    p += "Improve the following question by focusing on the " + prompt_metric_name(target) + " metric.\n";
    p += "The question is from the " + join(q.industries, ", ") + " industry/industries.\n\n";
    p += "Original question: " + q.question_with_options() + "\n\n";
    p += "Current metrics:\n";
    p += "Faithfulness: " + fixed2(scores.agg_faithfulness.value_or(0.0)) + "\n";
    p += "Relevancy: " + (scores.agg_relevance ? fixed2(*scores.agg_relevance) : std::string("N/A")) + "\n";
    p += "Specificity: " + std::to_string(scores.specificity) + "\n\n";
    p += "Relevant industry content:\n" + eval::combined_markdown(docs) + "\n\n";
    p += "Guidelines for improvement:\n"
         "1. If improving faithfulness: Ensure accuracy, verify metrics and concepts, remove misleading "
         "information.\n"
         "2. If improving relevancy: Focus on industry-specific aspects, use appropriate terminology.\n"
         "3. If improving specificity: Add precise details, use exact metric names or values, narrow the scope if "
         "needed.\n\n"
         "Maintain the original structure, intent, and difficulty level of the question.\n"
         "If it's a multi-choice question, preserve that format.\n\n"
         "Provide only the improved question.";
    return p;
}

Improvement PostProcessor::improve(const QAPair& q, const EvalScores& scores,
                                   const std::vector<const IndustryDoc*>& docs, const eval::ScoreSource& scorer) const
{
    const double theta = thresholds_.for_span(q.span);
    Improvement out{q, {}};
    out.record.qa_id = q.qa_id;
    out.record.before = scores;
    out.record.weak = weak_metrics(scores, theta);
    if (out.record.weak.empty()) throw PreconditionError("question " + q.qa_id + " has no weak metric to improve");
    if (out.record.weak.size() >= 2) {
        out.record.outcome = ImproveOutcome::DiscardedMultiWeak;
        return out;
    }
    const Metric target = out.record.weak.front();
    out.question.question = rewrite("You are an expert at improving questions while maintaining their core meaning "
                                    "and structure.",
                                    improvement_prompt(q, scores, target, docs));
    auto after = scorer.score(out.question, docs);
    after.qa_id = q.qa_id;
    out.record.after = after;
    if (after.excluded() || *after.metric(target) < theta)
        out.record.outcome = ImproveOutcome::DiscardedStillFailing;
    else if (!weak_metrics(after, theta).empty())
        out.record.outcome = ImproveOutcome::DiscardedNewFailure;
    else
        out.record.outcome = ImproveOutcome::Improved;
    return out;
}

std::string generalisation_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs)
{
    std::string p;
    p += "Refine the following question by ONLY slightly generalizing the name of the industry.\n";
    p += "The question is from the " + industry_list(docs, " and ") + " industry.\n";
    p += "Keep the entire question exactly the same, only modifying the industry name to be slightly more "
         "general.\n\n";
    p += "Original question: " + q.question + "\n\n";
    p += "Guidelines:\n"
         "1. ONLY change the specific industry name to a slightly more general term.\n"
         "2. Keep ALL other parts of the question, including technical terms, metrics, and structure, exactly the "
         "same.\n"
         "3. The refined question should be identical to the original except for the industry name.\n"
         "4. Make the change in industry name as minimal as possible while still generalizing slightly.\n\n"
         "Examples:\n"
         "1. Original: What is the code for the 'Gross global Scope 1 emissions, percentage covered under "
         "emissions-limiting regulations' metric in the Coal Operations industry?\n"
         "   Refined: What is the code for the 'Gross global Scope 1 emissions, percentage covered under "
         "emissions-limiting regulations' metric in the industry about operating coal?\n\n"
         "2. Original: In the Apparel, Accessories & Footwear industry, what percentage of raw materials should be "
         "third-party certified to environmental or social sustainability standards?\n"
         "   Refined: For clothing companies, what percentage of raw materials should be third-party certified to "
         "environmental or social sustainability standards?\n\n"
         "3. Original: What is the reporting metric for water consumption in Oil & Gas Exploration & Production "
         "operations?\n"
         "   Refined: What is the reporting metric for water consumption in fossil fuel extraction operations?\n\n"
         "4. Original: For Electric Utilities, what is the RIF (Recordable Incident Frequency) safety performance "
         "indicator?\n"
         "   Refined: For power utility companies, what is the RIF (Recordable Incident Frequency) safety "
         "performance indicator?\n\n"
         "Provide only the revised question without any explanation.";
    return p;
}

std::optional<QAPair> PostProcessor::generalise(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    const auto mentions = find_industry_mentions(q.question, docs);
    if (mentions.empty()) return std::nullopt;
    auto revised = rewrite("You are an expert at rephrasing questions to make them slightly more vague while "
                           "maintaining their core meaning.",
                           generalisation_prompt(q, docs));
    if (!rewrite_within_mentions(q.question, revised, mentions))
        throw RewriteScopeViolation("generalisation of " + q.qa_id + " changed text outside the industry name: " +
                                    revised);
    QAPair out = q;
    out.question = revised;
    return out;
}

const json& sba_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"correct_answers",
           {{"type", "array"}, {"items", {{"type", "string"}, {"enum", {"A", "B", "C", "D", "E"}}}}}}}},
        {"required", {"correct_answers"}}};
    return s;
}

std::string sba_prompt(const QAPair& q, const std::vector<const IndustryDoc*>& docs)
{
    std::string p;
    p += "Full context:\n" + eval::combined_markdown(docs) + "\n";
    p += "Based on the following question and the given context, determine if there is only one correct answer "
         "option, by identifying all correct answer options based on the reference text and full content "
         "provided.\n"
         "Example: If the correct answer is A and B, the correct_answers should be [\"A\", \"B\"].\n"
         "If there is no correct answer, the correct_answers should be an empty list [].\n\n";
    p += "Question: " + q.question + "\n\n";
    for (char letter : qa::kOptionLetters)
        p += "Option " + std::string(1, letter) + ": " + q.option(letter) + "\n";
    return p;
}

SbaResult PostProcessor::sba_check(const QAPair& q, const std::vector<const IndustryDoc*>& docs) const
{
    if (q.format != qa::Format::Mcq || !q.options) throw PreconditionError("SBA check applies to MCQs only");
    llm::ProviderRequest req;
    req.model_id = cfg_.model;
    req.temperature = cfg_.temperature;
    req.messages = {llm::Message::system("You are an expert question designer. Given a question and full context, "
                                         "you check if it has one and only one correct option."),
                    llm::Message::user(sba_prompt(q, docs))};
    req.output_schema = llm::OutputSchema{"sba_check", "All answer options that are correct", sba_schema()};
    const auto j = provider_.complete_structured(req);
    SbaResult r;
    for (const auto& letter : j.at("correct_answers")) r.correct_options.insert(letter.get<std::string>().at(0));
    if (r.correct_options.size() > 1)
        r.reason = "multiple_correct";
    else if (r.correct_options.empty())
        r.reason = "none_correct";
    else if (*r.correct_options.begin() != q.answer.at(0))
        r.reason = "different_answer";
    else
        r.reason = "pass";
    r.pass = r.reason == "pass";
    return r;
}

SimilarityGate::SimilarityGate(const llm::Provider& provider, double threshold)
    : provider_(provider), threshold_(threshold)
{
}

double SimilarityGate::nearest(const std::string& text) const
{
    if (kept_.empty()) return -1.0;
    const auto v = provider_.embed_one(text);
    double best = -1.0;
    for (const auto& k : kept_) best = std::max(best, llm::cosine(v, k));
    return best;
}

void SimilarityGate::keep(const std::string& text)
{
    kept_.push_back(provider_.embed_one(text));
}

std::vector<QAPair> similarity_filter(const std::vector<QAPair>& questions, double threshold,
                                      const llm::Provider& provider, std::vector<std::string>* dropped)
{
    std::vector<QAPair> ordered = questions;
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const QAPair& a, const QAPair& b) { return a.qa_id < b.qa_id; });
    std::vector<QAPair> kept;
    if (ordered.empty()) return kept;
    std::vector<std::string> texts;
    for (const auto& q : ordered) texts.push_back(q.question);
    const auto vectors = provider.embed(texts);
    std::vector<const llm::Embedding*> kept_vectors;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const bool similar = std::any_of(kept_vectors.begin(), kept_vectors.end(),
                                         [&](const llm::Embedding* k) { return llm::cosine(vectors[i], *k) > threshold; });
        if (similar) {
            spdlog::debug("similarity filter dropped {}", ordered[i].qa_id);
            if (dropped) dropped->push_back(ordered[i].qa_id);
            continue;
        }
        kept.push_back(ordered[i]);
        kept_vectors.push_back(&vectors[i]);
    }
    return kept;
}

} // namespace esgqa::post
