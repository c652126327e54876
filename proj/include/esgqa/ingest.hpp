#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "esgqa/llm_provider.hpp"

namespace esgqa::ingest {

using json = nlohmann::json;

struct PageImage {
    int page_number = 0;
    std::vector<std::uint8_t> image_bytes; // PNG payload
    double zoom = 2.5;
};

enum class TableKind { SustainabilityMetrics, ActivityMetrics };

std::string_view to_string(TableKind kind);
TableKind table_kind_from_string(std::string_view s);
/// 5 for the sustainability metrics table, 4 for activity metrics.
std::size_t expected_columns(TableKind kind);

struct ExtractedTable {
    TableKind name = TableKind::SustainabilityMetrics;
    std::string markdown;
};

struct PageExtract {
    int page_number = 0;
    std::string text_content;
    std::vector<ExtractedTable> tables;
};

/// Half-open byte range [begin, end).
struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct DocTable {
    TableKind name = TableKind::SustainabilityMetrics;
    int page = 0;
    std::string markdown;
};

/// One parsed industry report.
struct IndustryDoc {
    std::string industry_id; // e.g. "b61-airlines"
    std::string title;
    std::string industry_name; // display name, e.g. "Airlines"
    std::string markdown;
    std::map<int, CharRange> page_spans;
    std::vector<DocTable> tables;

    std::string page_text(int page) const;
    /// Page whose span contains `offset`; the last page for offset == size.
    std::optional<int> page_at(std::size_t offset) const;
    /// Display name, falling back to one derived from the id.
    std::string display_name() const;

    json sidecar() const;
    static IndustryDoc from_sidecar(const json& sidecar, std::string markdown);
};

/// "b61-airlines" -> "airlines"; "b62-auto-parts" -> "auto parts".
std::string id_phrase(std::string_view industry_id);

/// A line that belongs to a pipe table.
bool is_table_line(std::string_view line);

/// Checks header row, separator row and a constant column count equal to
/// `columns`. Returns the first problem, or nullopt.
std::optional<std::string> check_table_markdown(std::string_view markdown, std::size_t columns);

/// Schemas of the two extraction tools.
const json& table_pages_schema();
const json& individual_page_schema();
const json& table_presence_schema();

/// Multimodal page processing: table detection and conditional extraction.
class PageProcessor {
public:
    PageProcessor(const llm::Provider& provider, std::string model_id);

    /// True iff the judge model reports a table; memoized per image content.
    /// Zero-length (blank) payloads short-circuit to false.
    bool detect_table(const PageImage& page);

    /// Table pages go through the table prompt (5/4-column schemas) and the
    /// text prompt; other pages through the text prompt only.
    PageExtract extract_page(const PageImage& page, bool has_table);

    /// Report title / industry learned from table extraction, or preset.
    void set_report_identity(std::string title, std::string industry);
    std::string report_title() const;
    std::string industry() const;

    /// Footer page numbers that disagreed with the image's page number.
    std::vector<std::string> warnings() const;

private:
    std::vector<ExtractedTable> extract_tables(const PageImage& page);
    PageExtract extract_text(const PageImage& page);

    const llm::Provider& provider_;
    std::string model_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, bool> table_memo_;
    std::string title_;
    std::string industry_;
    std::vector<std::string> warnings_;
};

/// Folds sorted, contiguous page extracts into one markdown document.
/// Throws NonContiguousPages on gaps, duplicates or disorder and
/// PreconditionError on an empty list.
IndustryDoc assemble_markdown(const std::vector<PageExtract>& pages, const std::string& industry_id,
                              std::string title = {}, std::string industry_name = {});

struct IngestOptions {
    std::string industry_id;
    std::string title;
    std::string industry_name;
    /// Footer page numbers of repeated boilerplate pages kept out of the doc.
    std::set<int> archive_pages;
    std::size_t parallelism = 4;
};

struct IngestResult {
    IndustryDoc doc;
    std::vector<PageExtract> archived;
    std::vector<std::string> warnings;
};

/// Runs detect -> extract for every page (concurrently) and assembles.
IngestResult ingest_pages(PageProcessor& processor, const std::vector<PageImage>& pages,
                          const IngestOptions& options);

/// Loads `*.png` files whose stem ends in a page number, sorted by number.
std::vector<PageImage> load_page_images(const std::filesystem::path& dir, double zoom = 2.5);

/// Renders a PDF with an external command. The template may use {pdf},
/// {out}, {zoom} and {dpi} (72 * zoom).
std::vector<PageImage> rasterize_pdf(const std::filesystem::path& pdf, const std::filesystem::path& out_dir,
                                     double zoom, const std::string& command_template);

inline constexpr const char* kDefaultRasterizer = "mutool draw -r {dpi} -o {out}/page-%d.png {pdf}";

/// Writes `<dir>/<industry_id>.md` and the `<industry_id>.json` sidecar.
void save_doc(const IndustryDoc& doc, const std::filesystem::path& dir);
IndustryDoc load_doc(const std::filesystem::path& markdown_path);
/// Every `*.md` in `dir`, sorted by industry id.
std::vector<IndustryDoc> load_corpus(const std::filesystem::path& dir);

/// Text of the "Industry Description" section (or the document head),
/// truncated to `max_chars`.
std::string industry_description(const IndustryDoc& doc, std::size_t max_chars = 800);

} // namespace esgqa::ingest
