#include <gtest/gtest.h>

#include "esgqa/errors.hpp"
#include "esgqa/ingest.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/util.hpp"
#include "test_support.hpp"

using namespace esgqa;
using namespace esgqa::ingest;
using esgqa::llm::MockBackend;
using esgqa::llm::ProviderRequest;
using esgqa::llm::ProviderResponse;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

PageImage page(int n, const std::string& payload) { return {n, bytes_of(payload), 2.5}; }

// Matches requests whose image part carries `payload` and whose schema is `schema`.
MockBackend::Matcher image_is(const std::string& payload, const std::string& schema)
{
    const auto b64 = llm::ContentPart::from_image(bytes_of(payload)).data_base64;
    return [b64, schema](const ProviderRequest& req) {
        if (!req.output_schema || req.output_schema->name != schema) return false;
        for (const auto& m : req.messages)
            for (const auto& p : m.parts)
                if (p.kind == llm::ContentPart::Kind::Image && p.data_base64 == b64) return true;
        return false;
    };
}

MockBackend::Responder reply(json value)
{
    return [value](const ProviderRequest&) {
        ProviderResponse r;
        r.structured = value;
        r.text = value.dump();
        return r;
    };
}

const std::string kSustainability =
    "| TOPIC | METRIC | CATEGORY | UNIT OF MEASURE | CODE |\n"
    "| --- | --- | --- | --- | --- |\n"
    "| Greenhouse Gas Emissions | Gross global Scope 1 emissions | Quantitative | Metric tons (t) CO₂-e | TR-AL-110a.1 |";

const std::string kActivity =
    "| ACTIVITY METRIC | CATEGORY | UNIT OF MEASURE | CODE |\n"
    "| --- | --- | --- | --- |\n"
    "| Available seat kilometres (ASK) | Quantitative | ASK | TR-AL-000.A |";

// Fixture exchanges for a three-page report: a prose page, a table page and
// a page holding only excluded headers and footers.
void script_report(MockBackend& mock)
{
    mock.on(image_is("prose-page", "check_table_presence"), reply({{"has_table", false}}));
    mock.on(image_is("table-page", "check_table_presence"), reply({{"has_table", true}}));
    mock.on(image_is("footer-page", "check_table_presence"), reply({{"has_table", false}}));
    mock.on(image_is("prose-page", "process_individual_page"),
            reply({{"text_content", "# Airlines\n\n## Industry Description\n\nThe Airlines industry provides air "
                                    "transportation for passengers and cargo."},
                   {"page_number", 1}}));
    mock.on(image_is("table-page", "process_table_pages"),
            reply({{"sustainability_metrics_table", kSustainability},
                   {"activity_metrics_table", kActivity},
                   {"report_title", "Airlines"},
                   {"industry", "Transportation"}}));
    mock.on(image_is("table-page", "process_individual_page"),
            reply({{"text_content", "## Greenhouse Gas Emissions\n\n### Topic Summary\n\nFuel use drives emissions."},
                   {"page_number", 2}}));
    mock.on(image_is("footer-page", "process_individual_page"), reply({{"text_content", ""}, {"page_number", 3}}));
}

bool table_line_outside_block(const std::string& md)
{
    // A pipe line must sit in a block delimited by blank lines (or the document
    // edges) that contains only pipe lines.
    auto lines = split(md, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (!is_table_line(lines[i])) continue;
        std::size_t a = i;
        while (a > 0 && !trim(lines[a - 1]).empty()) --a;
        std::size_t b = i;
        while (b + 1 < lines.size() && !trim(lines[b + 1]).empty()) ++b;
        for (std::size_t k = a; k <= b; ++k)
            if (!is_table_line(lines[k])) return true;
    }
    return false;
}

} // namespace

TEST(DetectTable, FixtureExchangesAndBlankPage)
{
    auto mock = std::make_shared<MockBackend>();
    script_report(*mock);
    llm::Provider provider(mock);
    PageProcessor proc(provider, "vision-model");

    EXPECT_TRUE(proc.detect_table(page(2, "table-page")));
    EXPECT_FALSE(proc.detect_table(page(1, "prose-page")));
    const auto calls = mock->calls();
    EXPECT_FALSE(proc.detect_table(PageImage{4, {}, 2.5}));
    EXPECT_EQ(mock->calls(), calls);

    // Memoized per image content.
    EXPECT_TRUE(proc.detect_table(page(2, "table-page")));
    EXPECT_EQ(mock->calls(), calls);
}

TEST(ExtractPage, ProseTableAndExcludedOnlyPages)
{
    auto mock = std::make_shared<MockBackend>();
    script_report(*mock);
    llm::Provider provider(mock);
    PageProcessor proc(provider, "vision-model");

    auto table = proc.extract_page(page(2, "table-page"), true);
    ASSERT_EQ(table.tables.size(), 2u);
    EXPECT_EQ(table.tables[0].name, TableKind::SustainabilityMetrics);
    EXPECT_EQ(table.tables[1].name, TableKind::ActivityMetrics);
    EXPECT_FALSE(check_table_markdown(table.tables[0].markdown, 5));
    EXPECT_FALSE(check_table_markdown(table.tables[1].markdown, 4));
    EXPECT_EQ(proc.report_title(), "Airlines");

    // The text prompt carries the identity learned from the table page.
    const auto hist = mock->history();
    EXPECT_NE(request_text(hist.back()).find("The report title is 'Airlines'"), std::string::npos);

    auto prose = proc.extract_page(page(1, "prose-page"), false);
    EXPECT_TRUE(prose.tables.empty());
    EXPECT_EQ(prose.page_number, 1);

    auto footer = proc.extract_page(page(3, "footer-page"), false);
    EXPECT_TRUE(footer.text_content.empty());
    EXPECT_TRUE(proc.warnings().empty());
}

TEST(ExtractPage, FooterMismatchIsWarning)
{
    auto mock = std::make_shared<MockBackend>();
    script_report(*mock);
    llm::Provider provider(mock);
    PageProcessor proc(provider, "vision-model");
    auto e = proc.extract_page(page(7, "prose-page"), false);
    EXPECT_EQ(e.page_number, 1);
    ASSERT_EQ(proc.warnings().size(), 1u);
}

TEST(ExtractPage, MalformedTableRepairedOnceThenRejected)
{
    auto mock = std::make_shared<MockBackend>();
    const json bad = {{"sustainability_metrics_table", "| A | B |\n| --- | --- |\n| 1 | 2 |"},
                      {"report_title", "T"},
                      {"industry", "I"}};
    mock->on(image_is("t", "process_table_pages"), reply(bad));
    llm::Provider provider(mock);
    PageProcessor proc(provider, "vision-model");
    EXPECT_THROW(proc.extract_page(page(1, "t"), true), SchemaViolation);
    EXPECT_EQ(mock->calls(), 2u);

    auto mock2 = std::make_shared<MockBackend>();
    mock2->on(image_is("t", "process_table_pages"), reply(bad), 1);
    mock2->on(image_is("t", "process_table_pages"),
              reply({{"sustainability_metrics_table", kSustainability}, {"report_title", "T"}, {"industry", "I"}}));
    mock2->on(image_is("t", "process_individual_page"), reply({{"text_content", "x"}, {"page_number", 1}}));
    llm::Provider provider2(mock2);
    PageProcessor proc2(provider2, "vision-model");
    EXPECT_EQ(proc2.extract_page(page(1, "t"), true).tables.size(), 1u);
}

TEST(TableMarkdown, ColumnChecks)
{
    EXPECT_FALSE(check_table_markdown(kSustainability, 5));
    EXPECT_TRUE(check_table_markdown(kSustainability, 4));
    EXPECT_TRUE(check_table_markdown("| a | b |\n| 1 | 2 |", 2)); // no separator
    EXPECT_TRUE(check_table_markdown("| a | b |\n| --- | --- |\n| 1 | 2 | 3 |", 2));
    EXPECT_TRUE(check_table_markdown("| a |", 1));
    EXPECT_EQ(expected_columns(TableKind::SustainabilityMetrics), 5u);
    EXPECT_EQ(expected_columns(TableKind::ActivityMetrics), 4u);
}

TEST(Assemble, ContinuationAcrossPagesAndSpans)
{
    std::vector<PageExtract> pages = {
        {4, "## Fuel Management\n\nFleet fuel use is", {}},
        {5, "reported in gigajoules.", {}},
    };
    auto doc = assemble_markdown(pages, "b61-airlines");
    EXPECT_EQ(doc.page_spans.size(), 2u);
    std::string rebuilt;
    for (const auto& [p, span] : doc.page_spans) rebuilt += doc.markdown.substr(span.begin, span.size());
    EXPECT_EQ(rebuilt, doc.markdown);
    EXPECT_EQ(doc.page_spans.begin()->second.begin, 0u);
    EXPECT_EQ(doc.page_spans.rbegin()->second.end, doc.markdown.size());
    // One section heading only.
    EXPECT_EQ(doc.markdown.find("## Fuel Management"), doc.markdown.rfind("## Fuel Management"));
    EXPECT_EQ(doc.page_text(5), "reported in gigajoules.\n\n");
    EXPECT_EQ(doc.page_at(0), 4);
    EXPECT_EQ(doc.page_at(doc.markdown.size() - 1), 5);
}

TEST(Assemble, TableIsolatedBetweenProse)
{
    std::vector<PageExtract> pages = {
        {1, "## Overview\nSome prose.\n| x | y |\n| - | - |\n| 1 | 2 |\nMore prose after the table.", {}},
        {2, "## Metrics", {{TableKind::SustainabilityMetrics, kSustainability}}},
        {3, "## Notes\n\nClosing prose.", {}},
    };
    auto doc = assemble_markdown(pages, "b61-airlines");
    EXPECT_FALSE(table_line_outside_block(doc.markdown));
    ASSERT_EQ(doc.tables.size(), 1u);
    EXPECT_EQ(doc.tables[0].page, 2);
    EXPECT_NE(doc.markdown.find("Some prose.\n\n| x | y |"), std::string::npos);
    EXPECT_NE(doc.markdown.find("| 1 | 2 |\n\nMore prose"), std::string::npos);
    EXPECT_NE(doc.markdown.find("## Metrics\n\n| TOPIC"), std::string::npos);
}

TEST(Assemble, Errors)
{
    EXPECT_THROW(assemble_markdown({}, "x"), PreconditionError);
    EXPECT_THROW(assemble_markdown({{1, "a", {}}, {3, "b", {}}}, "x"), NonContiguousPages);
    EXPECT_THROW(assemble_markdown({{2, "a", {}}, {1, "b", {}}}, "x"), NonContiguousPages);
    EXPECT_THROW(assemble_markdown({{1, "a", {}}, {1, "b", {}}}, "x"), NonContiguousPages);
}

TEST(Assemble, IdempotentAndCoversEveryCharacterOnFuzzedPages)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<PageExtract> pages;
        const int n = 1 + static_cast<int>(rng() % 6);
        for (int p = 0; p < n; ++p) {
            std::string text;
            const int blocks = static_cast<int>(rng() % 4);
            for (int b = 0; b < blocks; ++b) {
                if (rng() % 3 == 0) text += "| a | b |\n| --- | --- |\n| 1 | 2 |\n";
                else text += testing_support::random_ascii(rng, 0, 40) + "\n";
            }
            PageExtract e{10 + p, text, {}};
            if (rng() % 4 == 0) e.tables.push_back({TableKind::ActivityMetrics, kActivity});
            pages.push_back(e);
        }
        auto a = assemble_markdown(pages, "b1-x");
        auto b = assemble_markdown(pages, "b1-x");
        EXPECT_EQ(a.markdown, b.markdown);
        EXPECT_EQ(a.sidecar().dump(), b.sidecar().dump());
        EXPECT_FALSE(table_line_outside_block(a.markdown));

        std::size_t cursor = 0;
        for (const auto& [pg, span] : a.page_spans) {
            EXPECT_EQ(span.begin, cursor);
            cursor = span.end;
        }
        EXPECT_EQ(cursor, a.markdown.size());
    }
}

TEST(Ingest, PipelineArchivesBoilerplateAndPersists)
{
    auto mock = std::make_shared<MockBackend>();
    script_report(*mock);
    llm::Provider provider(mock);
    PageProcessor proc(provider, "vision-model");

    IngestOptions opts;
    opts.industry_id = "b61-airlines";
    opts.archive_pages = {3};
    auto result = ingest_pages(proc, {page(1, "prose-page"), page(2, "table-page"), page(3, "footer-page")}, opts);
    EXPECT_EQ(result.archived.size(), 1u);
    EXPECT_EQ(result.doc.page_spans.size(), 2u);
    EXPECT_EQ(result.doc.title, "Airlines");
    EXPECT_EQ(result.doc.tables.size(), 2u);
    EXPECT_FALSE(table_line_outside_block(result.doc.markdown));

    testing_support::TempDir dir;
    save_doc(result.doc, dir.path());
    auto loaded = load_doc(dir.path() / "b61-airlines.md");
    EXPECT_EQ(loaded.markdown, result.doc.markdown);
    EXPECT_EQ(loaded.page_spans, result.doc.page_spans);
    EXPECT_EQ(loaded.tables.size(), 2u);
    EXPECT_EQ(load_corpus(dir.path()).size(), 1u);
    EXPECT_NE(industry_description(loaded).find("air transportation"), std::string::npos);
}

TEST(Ingest, LoadsPageImagesByTrailingNumber)
{
    testing_support::TempDir dir;
    write_file(dir.path() / "page-10.png", "ten");
    write_file(dir.path() / "page-2.png", "two");
    write_file(dir.path() / "notes.txt", "skip");
    auto pages = load_page_images(dir.path());
    ASSERT_EQ(pages.size(), 2u);
    EXPECT_EQ(pages[0].page_number, 2);
    EXPECT_EQ(pages[1].page_number, 10);
    EXPECT_DOUBLE_EQ(pages[0].zoom, 2.5);
}

TEST(Ingest, IdPhraseAndDisplayName)
{
    EXPECT_EQ(id_phrase("b62-auto-parts"), "auto parts");
    EXPECT_EQ(id_phrase("b61-airlines"), "airlines");
    IndustryDoc d;
    d.industry_id = "b62-auto-parts";
    EXPECT_EQ(d.display_name(), "Auto Parts");
}
