#pragma once

// Scripted 24-question run of the generation pipeline: every question's
// scores, rewrites and SBA verdicts are fixed in advance, so the accepted
// set can be derived by hand from the case kinds.

#include <atomic>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "esgqa/errors.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/qa_generation.hpp"

namespace testing_support {

class ScriptedScores : public esgqa::eval::ScoreSource {
public:
    std::map<std::string, esgqa::eval::EvalScores> by_question;
    mutable std::atomic<int> calls{0};

    esgqa::eval::EvalScores score(const esgqa::qa::QAPair& q,
                                  const std::vector<const esgqa::ingest::IndustryDoc*>&) const override
    {
        ++calls;
        auto it = by_question.find(q.question);
        if (it == by_question.end()) throw esgqa::PreconditionError("no scripted score for: " + q.question);
        auto s = it->second;
        s.qa_id = q.qa_id;
        return s;
    }
};

inline esgqa::eval::EvalScores make_scores(double f, double r, int spec)
{
    esgqa::eval::EvalScores s;
    s.ref_faithfulness = s.ref_relevance = 1.0;
    s.answer_faithfulness = s.answer_relevance = 1.0;
    s.question_faithfulness = s.question_relevance = 10;
    s.specificity = spec;
    s.agg_faithfulness = f;
    s.agg_relevance = r;
    return s;
}

inline esgqa::ingest::IndustryDoc fixture_doc(std::string id, std::string name, std::string markdown)
{
    esgqa::ingest::IndustryDoc d;
    d.industry_id = std::move(id);
    d.industry_name = std::move(name);
    d.markdown = std::move(markdown);
    d.page_spans[1] = {0, d.markdown.size()};
    return d;
}

struct GenerationLoopFixture {
    enum class Kind { Pass, Improvable, Unimprovable, NewFailure, DoubleWeak, RefGate, MultiAnswer, Duplicate, Generalised };

    struct Case {
        Kind kind;
        int duplicate_of = -1;
    };

    std::vector<esgqa::ingest::IndustryDoc> corpus = {
        fixture_doc("b61-airlines", "Airlines", "# Airlines\n\nTotal fuel consumed, percentage alternative.\n"),
        fixture_doc("b63-automobiles", "Automobiles", "# Automobiles\n\nSales-weighted average fuel economy.\n")};

    // One entry per planned question, in qa_id order.
    std::vector<Case> cases = {
        {Kind::Pass},         {Kind::Improvable},  {Kind::DoubleWeak},   // cross multi free_text
        {Kind::Pass},         {Kind::MultiAnswer}, {Kind::Unimprovable}, // cross multi mcq
        {Kind::NewFailure},   {Kind::RefGate},     {Kind::Pass},         // cross single free_text
        {Kind::Improvable},   {Kind::Duplicate, 3}, {Kind::Pass},        // cross single mcq
        {Kind::Pass},         {Kind::Unimprovable}, {Kind::DoubleWeak},  // local multi free_text
        {Kind::MultiAnswer},  {Kind::Improvable},  {Kind::Pass},         // local multi mcq
        {Kind::Duplicate, 12}, {Kind::Pass},       {Kind::Improvable},   // local single free_text
        {Kind::Generalised},  {Kind::DoubleWeak},  {Kind::Duplicate, 17}, // local single mcq
    };

    ScriptedScores scorer;
    std::shared_ptr<esgqa::llm::MockBackend> mock = std::make_shared<esgqa::llm::MockBackend>();
    std::shared_ptr<std::atomic<std::size_t>> generated = std::make_shared<std::atomic<std::size_t>>(0);

    esgqa::gen::GenerationPlan plan() const
    {
        esgqa::gen::GenerationPlan p;
        p.per_type = 3;
        p.industry_pairs = {{"b61-airlines", "b63-automobiles"}};
        p.parallelism = 1;
        return p;
    }

    std::vector<esgqa::qa::QaType> job_types() const
    {
        std::vector<std::string> tags;
        for (const auto& t : esgqa::qa::QaType::all()) tags.push_back(t.tag());
        std::sort(tags.begin(), tags.end());
        std::vector<esgqa::qa::QaType> out;
        for (const auto& tag : tags)
            for (int i = 0; i < 3; ++i) out.push_back(esgqa::qa::QaType::from_tag(tag));
        return out;
    }

    static std::string text(std::size_t i)
    {
        return "Scripted question " + std::to_string(i) + " on reported fuel figures?";
    }

    std::string question_text(std::size_t i) const
    {
        if (cases[i].kind == Kind::Duplicate) return text(static_cast<std::size_t>(cases[i].duplicate_of));
        if (cases[i].kind == Kind::Generalised) return "What is the fuel metric code in the Airlines industry?";
        return text(i);
    }

    static std::string improved(std::size_t i) { return "Improved scripted question " + std::to_string(i) + "?"; }
    static std::string generalised() { return "What is the fuel metric code in the passenger aviation industry?"; }

    bool is_local(std::size_t i) const { return job_types()[i].span == esgqa::qa::Span::Local; }

    void install()
    {
        using json = nlohmann::json;
        using esgqa::llm::ProviderRequest;
        using esgqa::llm::ProviderResponse;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const double hi_f = is_local(i) ? 9.5 : 7.5;
            const double lo_f = is_local(i) ? 8.0 : 6.0;
            const int hi_s = is_local(i) ? 9 : 7;
            const int lo_s = is_local(i) ? 5 : 4;
            const std::string q = question_text(i);
            switch (cases[i].kind) {
            case Kind::Pass:
            case Kind::MultiAnswer:
            case Kind::Generalised:
                scorer.by_question[q] = make_scores(hi_f, hi_f, hi_s);
                break;
            case Kind::Duplicate:
                break; // scored as its original
            case Kind::Improvable:
                scorer.by_question[q] = make_scores(hi_f, hi_f, lo_s);
                scorer.by_question[improved(i)] = make_scores(hi_f, hi_f, hi_s);
                break;
            case Kind::Unimprovable:
                scorer.by_question[q] = make_scores(lo_f, hi_f, hi_s);
                scorer.by_question[improved(i)] = make_scores(lo_f, hi_f, hi_s);
                break;
            case Kind::NewFailure:
                scorer.by_question[q] = make_scores(hi_f, hi_f, lo_s);
                scorer.by_question[improved(i)] = make_scores(hi_f, lo_f, hi_s);
                break;
            case Kind::DoubleWeak:
                scorer.by_question[q] = make_scores(lo_f, lo_f, hi_s);
                break;
            case Kind::RefGate: {
                auto s = make_scores(hi_f, hi_f, hi_s);
                s.ref_faithfulness = 0.5;
                s.agg_faithfulness.reset();
                s.agg_relevance.reset();
                scorer.by_question[q] = s;
                break;
            }
            }
            if (cases[i].kind == Kind::Improvable || cases[i].kind == Kind::Unimprovable ||
                cases[i].kind == Kind::NewFailure) {
                const std::string needle = "Original question: " + q + "\n";
                const std::string reply = improved(i);
                mock->on(
                    [needle](const ProviderRequest& r) {
                        const auto t = esgqa::llm::request_text(r);
                        return t.find("Improve the following question") != std::string::npos &&
                               t.find(needle) != std::string::npos;
                    },
                    [reply](const ProviderRequest&) {
                        ProviderResponse resp;
                        resp.text = reply;
                        return resp;
                    });
            }
            if (cases[i].kind == Kind::MultiAnswer)
                mock->on_structured("sba_check", "Question: " + q + "\n", {{"correct_answers", {"A", "B"}}});
        }
        mock->on_text("Refine the following question by ONLY slightly generalizing", generalised());
        mock->on_structured("sba_check", "", {{"correct_answers", {"A"}}});

        // Generation replies follow job order (parallelism 1).
        auto counter = generated;
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < cases.size(); ++i) texts.push_back(question_text(i));
        mock->on(
            [](const ProviderRequest& r) {
                return r.output_schema && (r.output_schema->name == "qa_pair_schema" ||
                                           r.output_schema->name == "free_text_qa_pair_schema");
            },
            [counter, texts](const ProviderRequest& r) {
                const std::size_t i = (*counter)++;
                const std::string& q = texts.at(i);
                json item = {{"question", q}, {"reference_text", {"Total fuel consumed"}}, {"pages", {"1"}}};
                if (r.output_schema->name == "qa_pair_schema") {
                    for (char c : std::string("ABCDE"))
                        item[std::string("option") + c] = std::string("Choice ") + c + " for " + std::to_string(i);
                    item["answer"] = "A";
                } else {
                    item["answer"] = "Total fuel consumed";
                }
                ProviderResponse resp;
                resp.structured = json{{"qa_pairs", {item}}};
                resp.text = resp.structured->dump();
                return resp;
            });
    }

    /// Accepted iff the case passes every gate; duplicates lose to their
    /// (accepted) originals.
    std::map<std::string, std::string> expected_reasons(const std::vector<std::string>& ids) const
    {
        std::map<std::string, std::string> out;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            std::string r;
            switch (cases[i].kind) {
            case Kind::Pass:
            case Kind::Improvable:
            case Kind::Generalised: r = ""; break;
            case Kind::Unimprovable: r = "discarded_still_failing"; break;
            case Kind::NewFailure: r = "discarded_new_failure"; break;
            case Kind::DoubleWeak: r = "discarded_multi_weak"; break;
            case Kind::RefGate: r = "reference_gate"; break;
            case Kind::MultiAnswer: r = "sba_multiple_correct"; break;
            case Kind::Duplicate: r = "similar"; break;
            }
            out[ids[i]] = r;
        }
        return out;
    }

    std::size_t single_weak_count() const
    {
        std::size_t n = 0;
        for (const auto& c : cases)
            n += c.kind == Kind::Improvable || c.kind == Kind::Unimprovable || c.kind == Kind::NewFailure;
        return n;
    }
    std::size_t weak_count() const
    {
        std::size_t n = single_weak_count();
        for (const auto& c : cases) n += c.kind == Kind::DoubleWeak;
        return n;
    }
};

} // namespace testing_support
