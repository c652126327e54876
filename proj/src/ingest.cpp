#include "esgqa/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <regex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/util.hpp"

namespace esgqa::ingest {

namespace {

constexpr const char* kPageHeaderFooterRule =
    "Exclude any headers (APPENDIX B OF DRAFT IFRS S2 CLIMATE-RELATED DISCLOSURES) or (EXPOSURE DRAFT MARCH 2022) "
    "and footers (2022 SASB, part of Value Reporting Foundation. All rights reserved.) of the pages, but include "
    "footnotes.";

std::string table_prompt()
{
    return std::string(
               "Process these PDF pages and extract the following information:\n"
               "1. Markdown of the entire sustainability metrics table, which has these five columns: TOPIC, METRIC, "
               "CATEGORY, UNIT OF MEASURE, CODE (make sure to exclude any text that has been crossed out, but include "
               "any underlined text!)\n"
               "2. Markdown of the activity metrics table, if present, which has these four columns: ACTIVITY METRIC, "
               "CATEGORY, UNIT OF MEASURE, CODE (make sure to exclude any text that has been crossed out, but include "
               "any underlined text!). If there is no activity metrics table, omit this field.\n"
               "3. Report title\n"
               "4. Industry\n\n") +
           kPageHeaderFooterRule +
           " Exclude any instances of 'continued...' or '...continued'. Exclude any text that has been crossed out, "
           "but include any underlined text. Note that tables may continue across pages. Provide the output in the "
           "specified schema.";
}

std::string text_prompt(const std::string& title, const std::string& industry)
{
    return std::string(
               "Process this PDF page and extract all text content, excluding the tables Table 1. Sustainability "
               "Disclosure Topics & Metrics and Table 2. Activity Metrics, but including any other tables that "
               "appear. Exclude any text that has been crossed out, but include any underlined text. ") +
           kPageHeaderFooterRule +
           " Exclude the section header titled 'Sustainability Disclosure Topics & Metrics'. Exclude subsections "
           "'Table 1. Sustainability Disclosure Topics & Metrics' and 'Table 2. Activity Metrics'. Exclude any "
           "instances of 'continued...' or '...continued'. The report title is '" +
           title + "', the industry is '" + industry +
           "' (but DO NOT include the report title and industry as sections in the markdown). Provide the output in "
           "the specified schema.";
}

constexpr const char* kDetectPrompt =
    "Does this PDF page contain a table (rows and columns of structured data, such as a metrics table)? Answer "
    "using the provided schema.";

std::vector<std::string> lines_of(std::string_view s)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto pos = s.find('\n', start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::size_t count_cells(std::string_view line)
{
    std::string t = trim(line);
    if (!t.empty() && t.front() == '|') t.erase(t.begin());
    if (!t.empty() && t.back() == '|' && (t.size() < 2 || t[t.size() - 2] != '\\')) t.pop_back();
    std::size_t cells = 1;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == '|' && (i == 0 || t[i - 1] != '\\')) ++cells;
    }
    return cells;
}

bool is_separator_row(std::string_view line)
{
    const std::string t = trim(line);
    if (t.empty()) return false;
    bool has_dash = false;
    for (char c : t) {
        if (c == '-') has_dash = true;
        else if (c != '|' && c != ':' && c != ' ') return false;
    }
    return has_dash;
}

/// Ensures every run of table lines is separated from prose by blank lines
/// and strips trailing whitespace at the end.
std::string isolate_tables(std::string_view text)
{
    const auto lines = lines_of(text);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const bool table = is_table_line(lines[i]);
        if (!out.empty()) {
            const bool prev_table = is_table_line(out.back());
            const bool prev_blank = trim(out.back()).empty();
            if (table != prev_table && !prev_blank && !trim(lines[i]).empty()) out.emplace_back();
        }
        out.push_back(lines[i]);
    }
    std::string joined = join(out, "\n");
    while (!joined.empty() && std::isspace(static_cast<unsigned char>(joined.back()))) joined.pop_back();
    std::size_t lead = 0;
    while (lead < joined.size() && (joined[lead] == '\n' || joined[lead] == '\r')) ++lead;
    return joined.substr(lead);
}

std::string image_digest(const PageImage& page)
{
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(page.image_bytes.data()), page.image_bytes.size()));
}

} // namespace

std::string_view to_string(TableKind kind)
{
    return kind == TableKind::SustainabilityMetrics ? "sustainability_metrics" : "activity_metrics";
}

TableKind table_kind_from_string(std::string_view s)
{
    if (s == "sustainability_metrics") return TableKind::SustainabilityMetrics;
    if (s == "activity_metrics") return TableKind::ActivityMetrics;
    throw PreconditionError("unknown table kind: " + std::string(s));
}

std::size_t expected_columns(TableKind kind)
{
    return kind == TableKind::SustainabilityMetrics ? 5 : 4;
}

std::string IndustryDoc::page_text(int page) const
{
    auto it = page_spans.find(page);
    if (it == page_spans.end()) throw PreconditionError("no page " + std::to_string(page));
    return markdown.substr(it->second.begin, it->second.size());
}

std::optional<int> IndustryDoc::page_at(std::size_t offset) const
{
    std::optional<int> last;
    for (const auto& [page, span] : page_spans) {
        if (offset >= span.begin && offset < span.end) return page;
        if (span.size() > 0) last = page;
    }
    if (offset == markdown.size()) return last;
    return std::nullopt;
}

std::string IndustryDoc::display_name() const
{
    if (!industry_name.empty()) return industry_name;
    std::string phrase = id_phrase(industry_id);
    bool start = true;
    for (auto& c : phrase) {
        if (start) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        start = c == ' ';
    }
    return phrase;
}

json IndustryDoc::sidecar() const
{
    json spans = json::array();
    for (const auto& [page, span] : page_spans)
        spans.push_back({{"page", page}, {"begin", span.begin}, {"end", span.end}});
    json tabs = json::array();
    for (const auto& t : tables)
        tabs.push_back({{"name", to_string(t.name)}, {"page", t.page}, {"markdown", t.markdown}});
    return {{"industry_id", industry_id},
            {"title", title},
            {"industry_name", industry_name},
            {"page_spans", spans},
            {"tables", tabs}};
}

IndustryDoc IndustryDoc::from_sidecar(const json& sidecar, std::string md)
{
    IndustryDoc doc;
    doc.industry_id = sidecar.at("industry_id").get<std::string>();
    doc.title = sidecar.value("title", "");
    doc.industry_name = sidecar.value("industry_name", "");
    doc.markdown = std::move(md);
    for (const auto& s : sidecar.value("page_spans", json::array())) {
        CharRange r{s.at("begin").get<std::size_t>(), s.at("end").get<std::size_t>()};
        if (r.end < r.begin || r.end > doc.markdown.size())
            throw PreconditionError("page span outside markdown for " + doc.industry_id);
        doc.page_spans[s.at("page").get<int>()] = r;
    }
    for (const auto& t : sidecar.value("tables", json::array())) {
        doc.tables.push_back({table_kind_from_string(t.at("name").get<std::string>()), t.value("page", 0),
                              t.at("markdown").get<std::string>()});
    }
    return doc;
}

std::string id_phrase(std::string_view industry_id)
{
    auto parts = split(industry_id, '-');
    if (parts.size() > 1 && !parts[0].empty() && std::tolower(static_cast<unsigned char>(parts[0][0])) == 'b' &&
        std::all_of(parts[0].begin() + 1, parts[0].end(), [](unsigned char c) { return std::isdigit(c); })) {
        parts.erase(parts.begin());
    }
    return join(parts, " ");
}

bool is_table_line(std::string_view line)
{
    const std::string t = trim(line);
    return !t.empty() && t.front() == '|';
}

std::optional<std::string> check_table_markdown(std::string_view markdown, std::size_t columns)
{
    std::vector<std::string> rows;
    for (auto& l : lines_of(markdown)) {
        if (!trim(l).empty()) rows.push_back(l);
    }
    if (rows.size() < 2) return "table needs a header row and a separator row";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!is_table_line(rows[i])) return "row " + std::to_string(i) + " is not a pipe-table row";
        const auto cells = count_cells(rows[i]);
        if (cells != columns)
            return "row " + std::to_string(i) + " has " + std::to_string(cells) + " columns, expected " +
                   std::to_string(columns);
    }
    if (!is_separator_row(rows[1])) return "second row is not a header separator";
    return std::nullopt;
}

const json& table_pages_schema()
{
    static const json schema = json::parse(R"({
        "type": "object",
        "properties": {
            "sustainability_metrics_table": {"type": "string", "description": "Markdown of sustainability metrics table"},
            "activity_metrics_table": {"type": "string", "description": "Markdown of activity metrics table, if present"},
            "report_title": {"type": "string", "description": "Title of the report"},
            "industry": {"type": "string", "description": "Industry of the report"}
        },
        "required": ["sustainability_metrics_table", "report_title", "industry"]
    })");
    return schema;
}

const json& individual_page_schema()
{
    static const json schema = json::parse(R"({
        "type": "object",
        "properties": {
            "text_content": {"type": "string", "description": "All text content, specifically in markdown format, excluding the tables Table 1. Sustainability Disclosure Topics & Metrics and Table 2. Activity Metrics."},
            "page_number": {"type": "integer", "description": "Page number of the processed page in the footer"}
        },
        "required": ["text_content", "page_number"]
    })");
    return schema;
}

const json& table_presence_schema()
{
    static const json schema = json::parse(R"({
        "type": "object",
        "properties": {"has_table": {"type": "boolean", "description": "true if the page contains a table"}},
        "required": ["has_table"]
    })");
    return schema;
}

PageProcessor::PageProcessor(const llm::Provider& provider, std::string model_id)
    : provider_(provider), model_(std::move(model_id))
{
}

void PageProcessor::set_report_identity(std::string title, std::string industry)
{
    std::lock_guard lock(mu_);
    title_ = std::move(title);
    industry_ = std::move(industry);
}

std::string PageProcessor::report_title() const
{
    std::lock_guard lock(mu_);
    return title_;
}

std::string PageProcessor::industry() const
{
    std::lock_guard lock(mu_);
    return industry_;
}

std::vector<std::string> PageProcessor::warnings() const
{
    std::lock_guard lock(mu_);
    return warnings_;
}

bool PageProcessor::detect_table(const PageImage& page)
{
    if (page.image_bytes.empty()) return false;
    const auto digest = image_digest(page);
    {
        std::lock_guard lock(mu_);
        if (auto it = table_memo_.find(digest); it != table_memo_.end()) return it->second;
    }
    llm::ProviderRequest req;
    req.model_id = model_;
    llm::Message msg{llm::Role::User, {llm::ContentPart::from_image(page.image_bytes), llm::ContentPart::from_text(kDetectPrompt)}};
    req.messages = {msg};
    req.output_schema = llm::OutputSchema{"check_table_presence", "Report whether the page contains a table",
                                          table_presence_schema()};
    const bool has = provider_.complete_structured(req).at("has_table").get<bool>();
    std::lock_guard lock(mu_);
    table_memo_[digest] = has;
    return has;
}

std::vector<ExtractedTable> PageProcessor::extract_tables(const PageImage& page)
{
    llm::ProviderRequest req;
    req.model_id = model_;
    req.messages = {llm::Message{llm::Role::User,
                                 {llm::ContentPart::from_image(page.image_bytes), llm::ContentPart::from_text(table_prompt())}}};
    req.output_schema = llm::OutputSchema{"process_table_pages",
                                          "Process the pages containing tables and extract specified information",
                                          table_pages_schema()};

    for (int attempt = 0;; ++attempt) {
        const json out = provider_.complete_structured(req);
        std::vector<ExtractedTable> tables;
        std::optional<std::string> problem;
        const std::string sust = out.at("sustainability_metrics_table").get<std::string>();
        if (!trim(sust).empty()) {
            problem = check_table_markdown(sust, 5);
            tables.push_back({TableKind::SustainabilityMetrics, trim(sust)});
        }
        if (auto it = out.find("activity_metrics_table"); !problem && it != out.end() && !trim(it->get<std::string>()).empty()) {
            problem = check_table_markdown(it->get<std::string>(), 4);
            tables.push_back({TableKind::ActivityMetrics, trim(it->get<std::string>())});
        }
        if (!problem) {
            std::lock_guard lock(mu_);
            if (title_.empty()) title_ = out.at("report_title").get<std::string>();
            if (industry_.empty()) industry_ = out.at("industry").get<std::string>();
            return tables;
        }
        if (attempt >= 1) throw SchemaViolation("table markdown invalid after repair: " + *problem);
        req.messages.push_back(llm::Message::assistant(out.dump()));
        req.messages.push_back(llm::Message::user("The table markdown is malformed (" + *problem +
                                                  "). Return each table as a pipe table with a header row, a "
                                                  "separator row and the exact column count."));
    }
}

PageExtract PageProcessor::extract_text(const PageImage& page)
{
    llm::ProviderRequest req;
    req.model_id = model_;
    req.messages = {llm::Message{llm::Role::User,
                                 {llm::ContentPart::from_image(page.image_bytes),
                                  llm::ContentPart::from_text(text_prompt(report_title(), industry()))}}};
    req.output_schema = llm::OutputSchema{"process_individual_page",
                                          "Process a single page of a PDF document and extract specified information",
                                          individual_page_schema()};
    const json out = provider_.complete_structured(req);
    PageExtract extract;
    extract.page_number = out.at("page_number").get<int>();
    extract.text_content = out.at("text_content").get<std::string>();
    if (extract.page_number != page.page_number) {
        const std::string w = "footer page " + std::to_string(extract.page_number) + " differs from image page " +
                              std::to_string(page.page_number);
        spdlog::warn("{}", w);
        std::lock_guard lock(mu_);
        warnings_.push_back(w);
    }
    return extract;
}

PageExtract PageProcessor::extract_page(const PageImage& page, bool has_table)
{
    if (page.image_bytes.empty()) return PageExtract{page.page_number, "", {}};
    std::vector<ExtractedTable> tables;
    if (has_table) tables = extract_tables(page);
    PageExtract extract = extract_text(page);
    extract.tables = std::move(tables);
    return extract;
}

IndustryDoc assemble_markdown(const std::vector<PageExtract>& pages, const std::string& industry_id,
                              std::string title, std::string industry_name)
{
    if (pages.empty()) throw PreconditionError("cannot assemble an empty page list");
    for (std::size_t i = 1; i < pages.size(); ++i) {
        if (pages[i].page_number != pages[i - 1].page_number + 1)
            throw NonContiguousPages("page " + std::to_string(pages[i].page_number) + " follows page " +
                                     std::to_string(pages[i - 1].page_number));
    }

    IndustryDoc doc;
    doc.industry_id = industry_id;
    doc.title = std::move(title);
    doc.industry_name = std::move(industry_name);
    for (const auto& page : pages) {
        std::string segment = isolate_tables(page.text_content);
        for (const auto& table : page.tables) {
            std::string md = trim(table.markdown);
            if (md.empty()) continue;
            if (!segment.empty()) segment += "\n\n";
            segment += md;
            doc.tables.push_back({table.name, page.page_number, md});
        }
        if (!segment.empty()) segment += "\n\n";
        const std::size_t begin = doc.markdown.size();
        doc.markdown += segment;
        doc.page_spans[page.page_number] = {begin, doc.markdown.size()};
    }
    return doc;
}

IngestResult ingest_pages(PageProcessor& processor, const std::vector<PageImage>& pages, const IngestOptions& options)
{
    if (pages.empty()) throw PreconditionError("no pages to ingest");
    if (!options.title.empty() || !options.industry_name.empty())
        processor.set_report_identity(options.title, options.industry_name);

    const auto has_table = parallel_map<char>(pages.size(), options.parallelism, [&](std::size_t i) {
        return static_cast<char>(processor.detect_table(pages[i]));
    });

    std::vector<PageExtract> extracts(pages.size());
    // Table pages first: they carry the report title and industry that the
    // text prompt refers to.
    std::vector<std::size_t> table_idx;
    std::vector<std::size_t> text_idx;
    for (std::size_t i = 0; i < pages.size(); ++i) (has_table[i] ? table_idx : text_idx).push_back(i);
    auto run = [&](const std::vector<std::size_t>& idx) {
        auto done = parallel_map<PageExtract>(idx.size(), options.parallelism, [&](std::size_t k) {
            return processor.extract_page(pages[idx[k]], has_table[idx[k]] != 0);
        });
        for (std::size_t k = 0; k < idx.size(); ++k) extracts[idx[k]] = std::move(done[k]);
    };
    run(table_idx);
    run(text_idx);

    IngestResult result;
    std::vector<PageExtract> kept;
    for (auto& e : extracts) {
        if (options.archive_pages.count(e.page_number)) result.archived.push_back(std::move(e));
        else kept.push_back(std::move(e));
    }
    std::sort(kept.begin(), kept.end(), [](const PageExtract& a, const PageExtract& b) { return a.page_number < b.page_number; });
    const std::string title = options.title.empty() ? processor.report_title() : options.title;
    const std::string name = options.industry_name.empty() ? processor.industry() : options.industry_name;
    result.doc = assemble_markdown(kept, options.industry_id, title, name);
    result.warnings = processor.warnings();
    return result;
}

std::vector<PageImage> load_page_images(const std::filesystem::path& dir, double zoom)
{
    static const std::regex trailing_number(R"((\d+)$)");
    std::vector<PageImage> pages;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || to_lower(entry.path().extension().string()) != ".png") continue;
        const std::string stem = entry.path().stem().string();
        std::smatch m;
        if (!std::regex_search(stem, m, trailing_number)) continue;
        PageImage page;
        page.page_number = std::stoi(m[1].str());
        const std::string bytes = read_file(entry.path());
        page.image_bytes.assign(bytes.begin(), bytes.end());
        page.zoom = zoom;
        pages.push_back(std::move(page));
    }
    std::sort(pages.begin(), pages.end(), [](const PageImage& a, const PageImage& b) { return a.page_number < b.page_number; });
    for (std::size_t i = 1; i < pages.size(); ++i) {
        if (pages[i].page_number == pages[i - 1].page_number)
            throw PreconditionError("duplicate page number " + std::to_string(pages[i].page_number));
    }
    return pages;
}

std::vector<PageImage> rasterize_pdf(const std::filesystem::path& pdf, const std::filesystem::path& out_dir,
                                     double zoom, const std::string& command_template)
{
    std::filesystem::create_directories(out_dir);
    auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
        for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
            s.replace(pos, from.size(), to);
        return s;
    };
    std::string cmd = command_template;
    cmd = replace_all(cmd, "{pdf}", "'" + pdf.string() + "'");
    cmd = replace_all(cmd, "{out}", "'" + out_dir.string() + "'");
    cmd = replace_all(cmd, "{zoom}", std::to_string(zoom));
    cmd = replace_all(cmd, "{dpi}", std::to_string(static_cast<int>(72.0 * zoom + 0.5)));
    if (std::system(cmd.c_str()) != 0) throw Error("rasterizer command failed: " + cmd);
    return load_page_images(out_dir, zoom);
}

void save_doc(const IndustryDoc& doc, const std::filesystem::path& dir)
{
    write_file(dir / (doc.industry_id + ".md"), doc.markdown);
    write_file(dir / (doc.industry_id + ".json"), doc.sidecar().dump(2));
}

IndustryDoc load_doc(const std::filesystem::path& markdown_path)
{
    std::string md = read_file(markdown_path);
    auto sidecar_path = markdown_path;
    sidecar_path.replace_extension(".json");
    if (std::filesystem::exists(sidecar_path)) {
        return IndustryDoc::from_sidecar(json::parse(read_file(sidecar_path)), std::move(md));
    }
    IndustryDoc doc;
    doc.industry_id = markdown_path.stem().string();
    doc.title = doc.industry_id;
    doc.markdown = std::move(md);
    doc.page_spans[1] = {0, doc.markdown.size()};
    return doc;
}

std::vector<IndustryDoc> load_corpus(const std::filesystem::path& dir)
{
    std::vector<IndustryDoc> docs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".md") docs.push_back(load_doc(entry.path()));
    }
    std::sort(docs.begin(), docs.end(), [](const IndustryDoc& a, const IndustryDoc& b) { return a.industry_id < b.industry_id; });
    return docs;
}

std::string industry_description(const IndustryDoc& doc, std::size_t max_chars)
{
    const std::string& md = doc.markdown;
    std::size_t start = 0;
    std::size_t end = md.size();
    if (auto pos = ifind(md, "industry description"); pos != std::string::npos) {
        start = md.find('\n', pos);
        start = start == std::string::npos ? md.size() : start + 1;
        auto next_heading = md.find("\n#", start);
        if (next_heading != std::string::npos) end = next_heading;
    }
    std::string text = trim(std::string_view(md).substr(start, end - start));
    if (text.size() > max_chars) text = text.substr(0, max_chars);
    return text;
}

} // namespace esgqa::ingest
