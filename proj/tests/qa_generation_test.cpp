#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <regex>
#include <set>

#include "generation_loop_fixture.hpp"
#include "esgqa/errors.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/qa_generation.hpp"
#include "esgqa/util.hpp"
#include "test_support.hpp"

using namespace esgqa;
using json = nlohmann::json;
using testing_support::fixture_doc;

namespace {

std::vector<const ingest::IndustryDoc*> ptrs(const std::vector<ingest::IndustryDoc>& docs)
{
    std::vector<const ingest::IndustryDoc*> out;
    for (const auto& d : docs) out.push_back(&d);
    return out;
}

json mcq_item(const std::string& q)
{
    return {{"question", q},          {"optionA", "Alpha"},   {"optionB", "Beta"},
            {"optionC", "Gamma"},     {"optionD", "Delta"},   {"optionE", "Epsilon"},
            {"answer", "B"},          {"reference_text", {"Total fuel consumed"}},
            {"pages", {"12"}}};
}

const std::vector<ingest::IndustryDoc>& two_docs()
{
    static const std::vector<ingest::IndustryDoc> docs = {
        fixture_doc("b61-airlines", "Airlines", "# Airlines\n\n| Total fuel consumed | Quantitative | GJ | TR-AL-110a.2 |\n"),
        fixture_doc("b63-automobiles", "Automobiles", "# Automobiles\n\nSales-weighted average fuel economy.\n")};
    return docs;
}

} // namespace

TEST(QuestionBank, CategorySizesMatchShippedData)
{
    const auto& bank = gen::QuestionStructureBank::builtin();
    std::ifstream in("data/question_structures.json");
    ASSERT_TRUE(in.good());
    const auto raw = json::parse(in);
    const std::map<std::string, std::pair<qa::Span, qa::Format>> keys = {
        {"Local", {qa::Span::Local, qa::Format::Mcq}},
        {"Cross-industry", {qa::Span::CrossIndustry, qa::Format::Mcq}},
        {"Free_local", {qa::Span::Local, qa::Format::FreeText}},
        {"Free_cross-industry", {qa::Span::CrossIndustry, qa::Format::FreeText}}};
    for (const auto& [key, sf] : keys) {
        for (auto hops : {qa::Hops::Single, qa::Hops::Multi}) {
            const qa::QaType t{sf.first, hops, sf.second};
            const auto& expect = raw.at(key).at(hops == qa::Hops::Single ? "single_hop" : "multi_hop");
            const auto& got = bank.templates(t);
            EXPECT_EQ(got.size(), expect.size()) << t.tag();
            EXPECT_GE(got.size(), 10u) << t.tag();
            for (const auto& s : got) EXPECT_NE(s.find("xxx"), std::string::npos) << s;
        }
    }
}

TEST(QuestionBank, SampleIsDistinctSizedAndSeeded)
{
    const auto& bank = gen::QuestionStructureBank::builtin();
    for (const auto& t : qa::QaType::all()) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 a(seed), b(seed);
            const auto s1 = bank.sample(t, a);
            const auto s2 = bank.sample(t, b);
            EXPECT_EQ(s1, s2);
            EXPECT_GE(s1.size(), 10u);
            EXPECT_LE(s1.size(), 12u);
            EXPECT_EQ(std::set<std::string>(s1.begin(), s1.end()).size(), s1.size());
            const auto& all = bank.templates(t);
            for (const auto& s : s1) EXPECT_NE(std::find(all.begin(), all.end(), s), all.end());
        }
    }
}

TEST(GenerationSchema, McqSchemaCarriesListingFields)
{
    const auto& s = gen::mcq_schema();
    const auto& item = s.at("properties").at("qa_pairs").at("items");
    for (const char* f : {"question", "optionA", "optionB", "optionC", "optionD", "optionE", "answer",
                          "reference_text", "pages"})
        EXPECT_TRUE(item.at("properties").contains(f)) << f;
    EXPECT_EQ(gen::output_schema(qa::Format::Mcq).name, "qa_pair_schema");
    EXPECT_EQ(gen::output_schema(qa::Format::FreeText).name, "free_text_qa_pair_schema");
    EXPECT_FALSE(gen::free_text_schema().at("properties").at("qa_pairs").at("items").at("properties").contains(
        "optionA"));
}

TEST(GenerationPrompt, MethodsDifferAsDocumented)
{
    const auto docs = ptrs(two_docs());
    const qa::QaType local{qa::Span::Local, qa::Hops::Single, qa::Format::Mcq};
    const std::vector<std::string> structures = {"What is the code for xxx?", "How is xxx measured?"};
    const std::vector<const ingest::IndustryDoc*> one = {docs[0]};

    const auto base = gen::user_prompt(qa::Method::Baseline, local, one, 3);
    EXPECT_NE(base.find("generate 3 multiple-choice questions of type local single-hop"), std::string::npos);
    EXPECT_EQ(base.find("To generate questions, follow these steps"), std::string::npos);
    EXPECT_NE(base.find("TR-AL-110a.2"), std::string::npos);

    const auto cot = gen::user_prompt(qa::Method::Cot, local, one, 3);
    EXPECT_NE(cot.find("'Single Best Answer' (SBA)"), std::string::npos);
    EXPECT_NE(cot.find("3. Write five answer options"), std::string::npos);
    EXPECT_EQ(cot.find("Here are some question structures"), std::string::npos);

    const auto fs = gen::user_prompt(qa::Method::CotFewShot, local, one, 3, structures);
    EXPECT_NE(fs.find("Here are some question structures:\n- What is the code for xxx?\n- How is xxx measured?\n"),
              std::string::npos);

    const qa::QaType cross_ft{qa::Span::CrossIndustry, qa::Hops::Multi, qa::Format::FreeText};
    const auto ft = gen::user_prompt(qa::Method::Cot, cross_ft, docs, 2);
    EXPECT_EQ(ft.find("Single Best Answer"), std::string::npos);
    EXPECT_NE(ft.find("3. Write the answer."), std::string::npos);
    EXPECT_NE(ft.find("Airlines"), std::string::npos);
    EXPECT_NE(ft.find("Automobiles"), std::string::npos);
    EXPECT_NE(gen::system_prompt().size(), 0u);
}

TEST(Generate, ReturnsRequestedScriptedPairs)
{
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("qa_pair_schema", "", {{"qa_pairs", {mcq_item("First?"), mcq_item("Second?")}}});
    llm::Provider provider(mock);
    gen::QAGenerator generator(provider, {"gen-model", 7});
    const auto docs = ptrs(two_docs());
    gen::GenerationRequest req{{docs[0]}, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}, 2,
                               qa::Method::CotFewShot, 0.5, "air"};
    const auto pairs = generator.generate(req);
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].qa_id, "air-01");
    EXPECT_EQ(pairs[1].qa_id, "air-02");
    EXPECT_EQ(pairs[1].question, "Second?");
    EXPECT_EQ(pairs[0].answer, "B");
    EXPECT_EQ(pairs[0].answer_text(), "Beta");
    EXPECT_EQ(pairs[0].industries, std::vector<std::string>{"b61-airlines"});
    EXPECT_EQ(pairs[0].method, qa::Method::CotFewShot);
    EXPECT_DOUBLE_EQ(pairs[0].temperature, 0.5);

    const auto h = mock->history();
    ASSERT_EQ(h.size(), 1u);
    EXPECT_EQ(h[0].model_id, "gen-model");
    EXPECT_DOUBLE_EQ(h[0].temperature, 0.5);
    ASSERT_TRUE(h[0].output_schema);
    EXPECT_EQ(h[0].output_schema->name, "qa_pair_schema");
    EXPECT_EQ(h[0].messages.front().text(), gen::system_prompt());
}

TEST(Generate, ContextCountPreconditions)
{
    auto mock = std::make_shared<llm::MockBackend>();
    llm::Provider provider(mock);
    gen::QAGenerator generator(provider);
    const auto docs = ptrs(two_docs());
    gen::GenerationRequest cross{{docs[0]}, {qa::Span::CrossIndustry, qa::Hops::Single, qa::Format::Mcq}};
    EXPECT_THROW(generator.generate(cross), PreconditionError);
    gen::GenerationRequest local{docs, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}};
    EXPECT_THROW(generator.generate(local), PreconditionError);
    gen::GenerationRequest zero{{docs[0]}, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}, 0};
    EXPECT_THROW(generator.generate(zero), PreconditionError);
    EXPECT_EQ(mock->calls(), 0u);
}

TEST(Generate, ShortReplyRetriesOnceThenFails)
{
    const auto docs = ptrs(two_docs());
    gen::GenerationRequest req{{docs[0]}, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}, 3,
                               qa::Method::Cot};
    {
        auto mock = std::make_shared<llm::MockBackend>();
        mock->on_structured("qa_pair_schema", "generate 3 ", {{"qa_pairs", {mcq_item("One?")}}}, 1);
        mock->on_structured("qa_pair_schema", "generate 2 ", {{"qa_pairs", {mcq_item("Two?"), mcq_item("Three?")}}},
                            1);
        llm::Provider provider(mock);
        const auto pairs = gen::QAGenerator(provider).generate(req);
        ASSERT_EQ(pairs.size(), 3u);
        EXPECT_EQ(pairs[2].question, "Three?");
        EXPECT_EQ(mock->calls(), 2u);
    }
    {
        auto mock = std::make_shared<llm::MockBackend>();
        mock->on_structured("qa_pair_schema", "", {{"qa_pairs", {mcq_item("Only?")}}});
        llm::Provider provider(mock);
        try {
            gen::QAGenerator(provider).generate(req);
            FAIL() << "expected UnderGeneration";
        } catch (const UnderGeneration& e) {
            EXPECT_EQ(e.requested(), 3u);
            EXPECT_EQ(e.returned(), 2u);
            EXPECT_EQ(e.partial().size(), 2u);
        }
        EXPECT_EQ(mock->calls(), 2u);
    }
}

TEST(Generate, SurplusIsTruncated)
{
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("qa_pair_schema", "", {{"qa_pairs", {mcq_item("A?"), mcq_item("B?"), mcq_item("C?")}}});
    llm::Provider provider(mock);
    const auto docs = ptrs(two_docs());
    gen::GenerationRequest req{{docs[0]}, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}, 2};
    EXPECT_EQ(gen::QAGenerator(provider).generate(req).size(), 2u);
}

TEST(Generate, InvalidItemIsSchemaViolation)
{
    const auto docs = ptrs(two_docs());
    gen::GenerationRequest req{{docs[0]}, {qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}};
    auto bad = mcq_item("   ");
    EXPECT_THROW(gen::pair_from_item(bad, req, "x-01"), SchemaViolation);
}

TEST(Generate, TableCodesQuestionIsGroundedInTables)
{
    std::ifstream in("tests/fixtures/codes_question.json");
    ASSERT_TRUE(in.good());
    const auto fx = json::parse(in);
    std::vector<ingest::IndustryDoc> docs;
    for (const auto& d : fx.at("docs")) {
        auto doc = fixture_doc(d.at("industry_id"), d.at("industry_name"), d.at("markdown"));
        docs.push_back(doc);
    }
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("qa_pair_schema", "", fx.at("reply"));
    llm::Provider provider(mock);
    gen::GenerationRequest req{ptrs(docs), {qa::Span::CrossIndustry, qa::Hops::Multi, qa::Format::Mcq}};
    const auto q = gen::QAGenerator(provider).generate(req).front();

    EXPECT_TRUE(icontains(q.question, "Insurance") && icontains(q.question, "Real Estate Services"));
    for (const auto& ref : q.reference_text) {
        const bool found = docs[0].markdown.find(ref) != std::string::npos ||
                           docs[1].markdown.find(ref) != std::string::npos;
        EXPECT_TRUE(found) << ref;
    }
    // The keyed answer lists exactly the codes of the quantitative rows.
    const std::regex code(R"(\b[A-Z]{2}-[A-Z]{2}-\d{3}[a-z]\.\d+\b)");
    std::set<std::string> expected;
    for (const auto& d : docs) {
        for (const auto& line : split(d.markdown, '\n')) {
            if (line.find("| Quantitative |") == std::string::npos) continue;
            for (std::sregex_iterator it(line.begin(), line.end(), code), end; it != end; ++it)
                expected.insert(it->str());
        }
    }
    std::set<std::string> keyed;
    const auto answer = q.answer_text();
    for (std::sregex_iterator it(answer.begin(), answer.end(), code), end; it != end; ++it) keyed.insert(it->str());
    EXPECT_EQ(keyed, expected);
    EXPECT_EQ(expected.size(), 6u);
    for (char c : std::string("BCDE")) {
        std::set<std::string> other;
        const auto opt = q.option(c);
        for (std::sregex_iterator it(opt.begin(), opt.end(), code), end; it != end; ++it) other.insert(it->str());
        EXPECT_NE(other, expected) << c;
    }
}

TEST(IndustryPairing, GroupsBecomePairs)
{
    std::vector<ingest::IndustryDoc> docs = {
        fixture_doc("b61-airlines", "Airlines", "a"), fixture_doc("b62-auto-parts", "Auto Parts", "b"),
        fixture_doc("b63-automobiles", "Automobiles", "c"), fixture_doc("b19-insurance", "Insurance", "d")};
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("industry_groups", "",
                        {{"groups",
                          {{{"industries", {"b63-automobiles", "b61-airlines", "b62-auto-parts"}},
                            {"explanation", "transport"}}}}});
    llm::Provider provider(mock);
    const auto groups = gen::pair_industries(docs, provider);
    ASSERT_EQ(groups.size(), 1u);
    const auto pairs = gen::pairs_from_groups(groups);
    const std::vector<std::pair<std::string, std::string>> expect = {
        {"b61-airlines", "b62-auto-parts"}, {"b61-airlines", "b63-automobiles"}, {"b62-auto-parts", "b63-automobiles"}};
    EXPECT_EQ(pairs, expect);
    const auto prompt = llm::request_text(mock->history().front());
    EXPECT_NE(prompt.find("b19-insurance"), std::string::npos);
}

TEST(IndustryPairing, UnknownIdAndTwoDocCorpus)
{
    std::vector<ingest::IndustryDoc> docs = {fixture_doc("b61-airlines", "Airlines", "a"),
                                             fixture_doc("b63-automobiles", "Automobiles", "c"),
                                             fixture_doc("b19-insurance", "Insurance", "d")};
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("industry_groups", "",
                        {{"groups", {{{"industries", {"b61-airlines", "b99-space-tourism"}}, {"explanation", ""}}}}});
    llm::Provider provider(mock);
    EXPECT_THROW(gen::pair_industries(docs, provider), UnknownIndustryId);

    docs.pop_back();
    const auto calls = mock->calls();
    const auto groups = gen::pair_industries(docs, provider);
    EXPECT_EQ(mock->calls(), calls);
    ASSERT_EQ(groups.size(), 1u);
    EXPECT_EQ(gen::pairs_from_groups(groups).size(), 1u);
}

TEST(GenerationPlan, ValidatesAndRoundTrips)
{
    const auto& docs = two_docs();
    gen::GenerationPlan plan;
    plan.per_type = 2;
    EXPECT_THROW(plan.validate(docs), PreconditionError); // cross types, no pairs
    plan.industry_pairs = {{"b61-airlines", "b63-automobiles"}};
    plan.validate(docs);
    plan.industries = {"b00-nowhere"};
    EXPECT_THROW(plan.validate(docs), UnknownIndustryId);
    plan.industries = {"b61-airlines"};
    plan.thresholds = {8.5, 6.5};
    const auto back = gen::GenerationPlan::from_json(plan.to_json());
    EXPECT_EQ(back.to_json(), plan.to_json());
    EXPECT_DOUBLE_EQ(back.thresholds.local, 8.5);
}

TEST(GenerationPipeline, AllPassingYieldsEveryPlannedQuestion)
{
    const auto& docs = two_docs();
    auto mock = std::make_shared<llm::MockBackend>();
    auto counter = std::make_shared<std::atomic<int>>(0);
    mock->on(
        [](const llm::ProviderRequest& r) {
            return r.output_schema && r.output_schema->name.find("qa_pair_schema") != std::string::npos;
        },
        [counter](const llm::ProviderRequest& r) {
            auto item = mcq_item("Distinct question " + std::to_string((*counter)++) + "?");
            if (r.output_schema->name != "qa_pair_schema") item = {{"question", item["question"]},
                                                                   {"answer", "Total fuel consumed"},
                                                                   {"reference_text", item["reference_text"]},
                                                                   {"pages", item["pages"]}};
            llm::ProviderResponse resp;
            resp.structured = json{{"qa_pairs", {item}}};
            return resp;
        });
    mock->on_structured("sba_check", "", {{"correct_answers", {"B"}}});
    llm::Provider provider(mock);
    testing_support::ScriptedScores scorer;
    for (int i = 0; i < 16; ++i)
        scorer.by_question["Distinct question " + std::to_string(i) + "?"] = testing_support::make_scores(9.5, 9.5, 9);
    gen::QAGenerator generator(provider);
    post::PostProcessor post(provider);
    gen::GenerationPlan plan;
    plan.per_type = 2;
    plan.industry_pairs = {{"b61-airlines", "b63-automobiles"}};
    plan.parallelism = 3;
    const auto result = gen::run_generation_pipeline(plan, docs, {generator, scorer, post, provider});
    EXPECT_EQ(result.accepted.size(), 16u);
    EXPECT_EQ(result.audit.size(), 16u);
    EXPECT_EQ(result.generated, 16u);
    EXPECT_TRUE(result.improvements.empty());
    for (std::size_t i = 1; i < result.accepted.size(); ++i)
        EXPECT_LT(result.accepted[i - 1].qa_id, result.accepted[i].qa_id);
    for (const auto& q : result.accepted) {
        if (q.format == qa::Format::Mcq) {
            EXPECT_EQ(q.span == qa::Span::Local ? q.industries.size() : 2u, q.industries.size());
        }
    }
}

TEST(GenerationPipeline, ScriptedFixtureMatchesDerivedAcceptance)
{
    const auto start = std::chrono::steady_clock::now();
    testing_support::GenerationLoopFixture fx;
    fx.install();
    llm::Provider provider(fx.mock);
    gen::QAGenerator generator(provider);
    post::PostProcessor post(provider);
    const auto result = gen::run_generation_pipeline(fx.plan(), fx.corpus, {generator, fx.scorer, post, provider});

    ASSERT_EQ(result.audit.size(), fx.cases.size());
    std::vector<std::string> ids;
    for (const auto& a : result.audit) ids.push_back(a.qa_id);
    const auto expected = fx.expected_reasons(ids);
    std::set<std::string> accepted_ids;
    for (const auto& q : result.accepted) accepted_ids.insert(q.qa_id);
    std::size_t expected_accepted = 0;
    for (const auto& a : result.audit) {
        const auto& want = expected.at(a.qa_id);
        if (want.empty()) {
            ++expected_accepted;
            EXPECT_EQ(a.outcome, "accepted") << a.qa_id << " " << a.reason;
            EXPECT_TRUE(accepted_ids.count(a.qa_id)) << a.qa_id;
        } else {
            EXPECT_EQ(a.outcome, "discarded") << a.qa_id;
            EXPECT_EQ(a.reason, want) << a.qa_id;
            EXPECT_FALSE(accepted_ids.count(a.qa_id)) << a.qa_id;
        }
    }
    EXPECT_EQ(result.accepted.size(), expected_accepted);
    EXPECT_EQ(expected_accepted, 12u);
    EXPECT_EQ(result.generated, 24u);
    EXPECT_EQ(result.accepted.size() + result.discarded, result.generated);

    // At most one improvement attempt per question, and only for single-weak ones.
    std::set<std::string> improved_ids;
    for (const auto& r : result.improvements) EXPECT_TRUE(improved_ids.insert(r.qa_id).second) << r.qa_id;
    EXPECT_EQ(result.improvements.size(), fx.weak_count());
    std::size_t rewrite_calls = 0;
    for (const auto& h : fx.mock->history())
        rewrite_calls += llm::request_text(h).find("Improve the following question") != std::string::npos;
    EXPECT_EQ(rewrite_calls, fx.single_weak_count());

    for (std::size_t i = 0; i < result.accepted.size(); ++i) {
        const auto& q = result.accepted[i];
        const auto weak = post::weak_metrics(result.scores[i], fx.plan().thresholds.for_span(q.span));
        EXPECT_TRUE(weak.empty()) << q.qa_id;
        if (q.format == qa::Format::Mcq) EXPECT_EQ(result.scores[i].sba_pass, true) << q.qa_id;
    }
    bool saw_generalised = false;
    for (const auto& q : result.accepted) saw_generalised |= q.question == fx.generalised();
    EXPECT_TRUE(saw_generalised);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
}

TEST(GenerationPipeline, FailedGenerationIsAudited)
{
    const auto& docs = two_docs();
    auto mock = std::make_shared<llm::MockBackend>();
    mock->on_structured("qa_pair_schema", "", {{"qa_pairs", json::array()}});
    mock->on_structured("free_text_qa_pair_schema", "", {{"qa_pairs", json::array()}});
    llm::Provider provider(mock);
    testing_support::ScriptedScores scorer;
    gen::QAGenerator generator(provider);
    post::PostProcessor post(provider);
    gen::GenerationPlan plan;
    plan.types = {{qa::Span::Local, qa::Hops::Single, qa::Format::Mcq}};
    plan.per_type = 2;
    const auto result = gen::run_generation_pipeline(plan, docs, {generator, scorer, post, provider});
    EXPECT_EQ(result.failed, 2u);
    EXPECT_TRUE(result.accepted.empty());
    ASSERT_EQ(result.audit.size(), 2u);
    EXPECT_EQ(result.audit[0].outcome, "failed");
    EXPECT_EQ(result.audit[0].reason, "generation_error");
}

TEST(GenerationPipeline, DatasetFilesAreWritten)
{
    testing_support::GenerationLoopFixture fx;
    fx.install();
    llm::Provider provider(fx.mock);
    gen::QAGenerator generator(provider);
    post::PostProcessor post(provider);
    const auto result = gen::run_generation_pipeline(fx.plan(), fx.corpus, {generator, fx.scorer, post, provider});
    testing_support::TempDir dir;
    gen::write_dataset(dir.path(), result);
    const auto pairs = qa::read_pairs((dir.path() / "qa_pairs.jsonl").string());
    ASSERT_EQ(pairs.size(), result.accepted.size());
    EXPECT_EQ(pairs.front().to_json(), result.accepted.front().to_json());
    EXPECT_EQ(read_jsonl(dir.path() / "audit.jsonl").size(), 24u);
    EXPECT_EQ(read_jsonl(dir.path() / "improvements.jsonl").size(), fx.weak_count());
}
