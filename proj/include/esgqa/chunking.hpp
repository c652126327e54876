#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esgqa/ingest.hpp"
#include "esgqa/llm_provider.hpp"

namespace esgqa::chunking {

using json = nlohmann::json;
using ingest::CharRange;
using ingest::IndustryDoc;

struct Token {
    std::string text;
    std::size_t begin = 0; // byte offsets into the source
    std::size_t end = 0;
};

/// Tokens plus the separators around them: separators[i] precedes
/// tokens[i] and separators.back() trails the last token.
struct Tokenized {
    std::vector<Token> tokens;
    std::vector<std::string> separators;

    std::string reconstruct() const;
};

/// Splits on ASCII whitespace and detaches each ASCII punctuation
/// character as its own token. Bytes >= 0x80 are word characters, so UTF-8
/// sequences stay intact.
Tokenized tokenize_with_separators(std::string_view text);
std::vector<Token> tokenize(std::string_view text);
std::size_t count_tokens(std::string_view text);

enum class Strategy { Fixed256, Fixed512, Fixed1024, Window, Page, Semantic, Markdown };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);
const std::vector<Strategy>& all_strategies();

struct ChunkingSpec {
    Strategy strategy = Strategy::Markdown;
    std::size_t window_size = 512;
    double window_overlap_fraction = 0.10;
    double semantic_boundary_threshold = 0.5;
    int markdown_heading_level = 2;

    void validate() const;
};

enum class ChunkKind { FreeText, Table };
std::string_view to_string(ChunkKind k);

struct PageRange {
    int first = 0;
    int last = 0;
    friend bool operator==(const PageRange&, const PageRange&) = default;
};

struct ChunkMetadata {
    PageRange page;
    std::string report;
    std::string industry;
    ChunkKind kind = ChunkKind::FreeText;
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    std::size_t token_begin = 0;
    std::size_t token_end = 0;
    CharRange char_span;
    ChunkMetadata metadata;
    std::optional<llm::Embedding> embedding;

    /// JSONL row; the embedding is never written.
    json to_json() const;
    static Chunk from_json(const json& j);
};

/// Round-half-up of size * fraction.
std::size_t window_overlap(std::size_t size, double fraction);

std::vector<Chunk> chunk_fixed(const IndustryDoc& doc, std::size_t size);
std::vector<Chunk> chunk_window(const IndustryDoc& doc, std::size_t size, double overlap_fraction);
std::vector<Chunk> chunk_page(const IndustryDoc& doc);
/// Boundaries fire between sentences i and i+1 when max(0, cosine) of the
/// embeddings of the 3-sentence windows ending at i and starting at i+1
/// falls below `threshold`.
std::vector<Chunk> chunk_semantic(const IndustryDoc& doc, double threshold, const llm::Provider& provider);
std::vector<Chunk> chunk_markdown(const IndustryDoc& doc, int heading_level);

/// Dispatches on spec.strategy. `provider` is required for Semantic only.
std::vector<Chunk> chunk_document(const IndustryDoc& doc, const ChunkingSpec& spec,
                                  const llm::Provider* provider = nullptr);

/// Sentence segments of `text` as byte ranges that partition it.
std::vector<CharRange> split_sentences(std::string_view text);

/// True iff the trimmed text is a single pipe-table block.
bool is_single_table_block(std::string_view text);

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks(const std::filesystem::path& path);

} // namespace esgqa::chunking
