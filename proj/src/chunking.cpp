#include "esgqa/chunking.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "esgqa/errors.hpp"
#include "esgqa/util.hpp"

namespace esgqa::chunking {

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(char c)
{
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
}

struct LineInfo {
    std::size_t begin;
    std::size_t end; // excludes the newline
    std::size_t next; // start of the following line
};

std::vector<LineInfo> line_table(std::string_view text)
{
    std::vector<LineInfo> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            lines.push_back({pos, text.size(), text.size()});
            break;
        }
        lines.push_back({pos, nl, nl + 1});
        pos = nl + 1;
    }
    return lines;
}

int heading_depth(std::string_view line)
{
    std::size_t n = 0;
    while (n < line.size() && line[n] == '#') ++n;
    if (n == 0 || n > 6) return 0;
    if (n < line.size() && line[n] != ' ' && line[n] != '\t') return 0;
    return static_cast<int>(n);
}

class Builder {
public:
    Builder(const IndustryDoc& doc, Strategy strategy)
        : doc_(doc), strategy_(strategy), tokens_(tokenize(doc.markdown))
    {
        if (tokens_.empty()) throw EmptyDocument("document " + doc.industry_id + " has no tokens");
    }

    const std::vector<Token>& tokens() const { return tokens_; }

    /// First token whose begin is >= offset.
    std::size_t token_at(std::size_t offset) const
    {
        auto it = std::lower_bound(tokens_.begin(), tokens_.end(), offset,
                                   [](const Token& t, std::size_t off) { return t.begin < off; });
        return static_cast<std::size_t>(it - tokens_.begin());
    }

    std::size_t char_of_token(std::size_t index) const
    {
        return index >= tokens_.size() ? doc_.markdown.size() : tokens_[index].begin;
    }

    Chunk make(std::size_t index, CharRange span, std::size_t tok_begin, std::size_t tok_end) const
    {
        Chunk c;
        c.chunk_id = doc_.industry_id + ":" + std::string(to_string(strategy_)) + ":" + std::to_string(index);
        c.doc_id = doc_.industry_id;
        c.text = doc_.markdown.substr(span.begin, span.size());
        c.token_begin = tok_begin;
        c.token_end = tok_end;
        c.char_span = span;
        c.metadata.report = doc_.title;
        c.metadata.industry = doc_.industry_id;
        c.metadata.kind = is_single_table_block(c.text) ? ChunkKind::Table : ChunkKind::FreeText;
        c.metadata.page = pages_of(span);
        return c;
    }

    /// Turns a partition of the document into chunks; pieces without tokens
    /// are folded into the previous piece (or the next one at the start).
    std::vector<Chunk> from_partition(const std::vector<CharRange>& pieces) const
    {
        std::vector<CharRange> merged;
        std::optional<std::size_t> pending_begin;
        for (const auto& p : pieces) {
            if (p.size() == 0) continue;
            const bool has_token = token_at(p.begin) < tokens_.size() && tokens_[token_at(p.begin)].begin < p.end;
            if (!has_token) {
                if (!merged.empty()) merged.back().end = p.end;
                else if (!pending_begin) pending_begin = p.begin;
                continue;
            }
            CharRange r = p;
            if (pending_begin) {
                r.begin = *pending_begin;
                pending_begin.reset();
            }
            merged.push_back(r);
        }
        std::vector<Chunk> out;
        for (std::size_t i = 0; i < merged.size(); ++i) {
            const auto& r = merged[i];
            out.push_back(make(i, r, token_at(r.begin), token_at(r.end)));
        }
        return out;
    }

private:
    PageRange pages_of(CharRange span) const
    {
        if (doc_.page_spans.empty()) return {};
        auto first = doc_.page_at(span.begin);
        auto last = doc_.page_at(span.end > span.begin ? span.end - 1 : span.begin);
        const int f = first.value_or(doc_.page_spans.begin()->first);
        return {f, last.value_or(f)};
    }

    const IndustryDoc& doc_;
    Strategy strategy_;
    std::vector<Token> tokens_;
};

} // namespace

std::string Tokenized::reconstruct() const
{
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out += separators[i];
        out += tokens[i].text;
    }
    if (!separators.empty()) out += separators.back();
    return out;
}

Tokenized tokenize_with_separators(std::string_view text)
{
    Tokenized out;
    std::size_t i = 0;
    std::size_t sep_begin = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (is_space(c)) {
            ++i;
            continue;
        }
        out.separators.emplace_back(text.substr(sep_begin, i - sep_begin));
        std::size_t j = i + 1;
        if (!is_punct(c)) {
            while (j < text.size() && !is_space(text[j]) && !is_punct(text[j])) ++j;
        }
        out.tokens.push_back({std::string(text.substr(i, j - i)), i, j});
        i = j;
        sep_begin = j;
    }
    out.separators.emplace_back(text.substr(sep_begin));
    return out;
}

std::vector<Token> tokenize(std::string_view text)
{
    return tokenize_with_separators(text).tokens;
}

std::size_t count_tokens(std::string_view text)
{
    return tokenize(text).size();
}

std::string_view to_string(Strategy s)
{
    switch (s) {
    case Strategy::Fixed256: return "fixed256";
    case Strategy::Fixed512: return "fixed512";
    case Strategy::Fixed1024: return "fixed1024";
    case Strategy::Window: return "window";
    case Strategy::Page: return "page";
    case Strategy::Semantic: return "semantic";
    case Strategy::Markdown: return "markdown";
    }
    return "markdown";
}

Strategy strategy_from_string(std::string_view s)
{
    for (auto st : all_strategies()) {
        if (to_string(st) == s) return st;
    }
    throw PreconditionError("unknown chunking strategy: " + std::string(s));
}

const std::vector<Strategy>& all_strategies()
{
    static const std::vector<Strategy> all = {Strategy::Fixed256, Strategy::Fixed512, Strategy::Fixed1024,
                                              Strategy::Window,   Strategy::Page,     Strategy::Semantic,
                                              Strategy::Markdown};
    return all;
}

void ChunkingSpec::validate() const
{
    if (!(window_overlap_fraction > 0.0 && window_overlap_fraction < 1.0))
        throw PreconditionError("window overlap fraction must be in (0,1)");
    if (!(semantic_boundary_threshold >= 0.0 && semantic_boundary_threshold <= 1.0))
        throw PreconditionError("semantic boundary threshold must be in [0,1]");
    if (markdown_heading_level < 1) throw PreconditionError("heading level must be >= 1");
    if (window_size == 0) throw PreconditionError("window size must be positive");
}

std::string_view to_string(ChunkKind k)
{
    return k == ChunkKind::Table ? "table" : "free_text";
}

json Chunk::to_json() const
{
    json page = metadata.page.first == metadata.page.last ? json(metadata.page.first)
                                                          : json::array({metadata.page.first, metadata.page.last});
    return {{"chunk_id", chunk_id},
            {"doc_id", doc_id},
            {"text", text},
            {"token_span", {token_begin, token_end}},
            {"char_span", {char_span.begin, char_span.end}},
            {"metadata",
             {{"page", page}, {"report", metadata.report}, {"industry", metadata.industry}, {"kind", to_string(metadata.kind)}}}};
}

Chunk Chunk::from_json(const json& j)
{
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.doc_id = j.value("doc_id", "");
    c.text = j.at("text").get<std::string>();
    if (auto it = j.find("token_span"); it != j.end()) {
        c.token_begin = it->at(0).get<std::size_t>();
        c.token_end = it->at(1).get<std::size_t>();
    }
    if (auto it = j.find("char_span"); it != j.end()) {
        c.char_span = {it->at(0).get<std::size_t>(), it->at(1).get<std::size_t>()};
    }
    const json& m = j.at("metadata");
    const json& page = m.at("page");
    if (page.is_array()) c.metadata.page = {page.at(0).get<int>(), page.at(1).get<int>()};
    else c.metadata.page = {page.get<int>(), page.get<int>()};
    c.metadata.report = m.value("report", "");
    c.metadata.industry = m.at("industry").get<std::string>();
    c.metadata.kind = m.value("kind", "free_text") == "table" ? ChunkKind::Table : ChunkKind::FreeText;
    if (auto it = j.find("embedding"); it != j.end()) c.embedding = it->get<llm::Embedding>();
    return c;
}

std::size_t window_overlap(std::size_t size, double fraction)
{
    return static_cast<std::size_t>(std::floor(static_cast<double>(size) * fraction + 0.5));
}

std::vector<Chunk> chunk_fixed(const IndustryDoc& doc, std::size_t size)
{
    if (size == 0) throw PreconditionError("chunk size must be positive");
    Strategy s = size == 256 ? Strategy::Fixed256 : size == 1024 ? Strategy::Fixed1024 : Strategy::Fixed512;
    Builder b(doc, s);
    const std::size_t n = b.tokens().size();
    std::vector<Chunk> out;
    for (std::size_t start = 0, i = 0; start < n; start += size, ++i) {
        const std::size_t end = std::min(n, start + size);
        const CharRange span{start == 0 ? 0 : b.char_of_token(start), b.char_of_token(end)};
        out.push_back(b.make(i, span, start, end));
    }
    return out;
}

std::vector<Chunk> chunk_window(const IndustryDoc& doc, std::size_t size, double overlap_fraction)
{
    if (!(overlap_fraction > 0.0 && overlap_fraction < 1.0))
        throw PreconditionError("window overlap fraction must be in (0,1)");
    if (size == 0) throw PreconditionError("window size must be positive");
    const std::size_t overlap = window_overlap(size, overlap_fraction);
    if (overlap >= size) throw PreconditionError("window overlap leaves no stride");
    const std::size_t stride = size - overlap;
    Builder b(doc, Strategy::Window);
    const std::size_t n = b.tokens().size();
    std::vector<Chunk> out;
    for (std::size_t start = 0, i = 0;; start += stride, ++i) {
        const std::size_t end = std::min(n, start + size);
        const CharRange span{start == 0 ? 0 : b.char_of_token(start), b.char_of_token(end)};
        out.push_back(b.make(i, span, start, end));
        if (end == n) break;
    }
    return out;
}

std::vector<Chunk> chunk_page(const IndustryDoc& doc)
{
    if (doc.page_spans.empty()) throw MissingPageSpans("document " + doc.industry_id + " has no page spans");
    Builder b(doc, Strategy::Page);
    std::vector<CharRange> pieces;
    for (const auto& [page, span] : doc.page_spans) pieces.push_back(span);
    return b.from_partition(pieces);
}

std::vector<CharRange> split_sentences(std::string_view text)
{
    std::vector<CharRange> out;
    std::size_t begin = 0;
    std::size_t i = 0;
    auto consume_space = [&](std::size_t j) {
        while (j < text.size() && is_space(text[j])) ++j;
        return j;
    };
    while (i < text.size()) {
        const char c = text[i];
        std::size_t cut = 0;
        if (c == '\n') {
            cut = consume_space(i + 1);
        } else if (c == '.' || c == '!' || c == '?') {
            std::size_t j = i + 1;
            while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
            if (j < text.size() && is_space(text[j])) cut = consume_space(j);
            else {
                i = j;
                continue;
            }
        }
        if (cut) {
            out.push_back({begin, cut});
            begin = cut;
            i = cut;
        } else {
            ++i;
        }
    }
    if (begin < text.size()) out.push_back({begin, text.size()});
    return out;
}

std::vector<Chunk> chunk_semantic(const IndustryDoc& doc, double threshold, const llm::Provider& provider)
{
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw PreconditionError("semantic threshold must be in [0,1]");
    Builder b(doc, Strategy::Semantic);
    // Sentences with at least one token.
    const auto sentences = b.from_partition(split_sentences(doc.markdown));
    const std::size_t n = sentences.size();
    if (n <= 1) return sentences;

    auto window_text = [&](std::size_t first, std::size_t last) {
        const auto begin = sentences[first].char_span.begin;
        const auto end = sentences[last].char_span.end;
        return trim(std::string_view(doc.markdown).substr(begin, end - begin));
    };
    std::vector<std::pair<std::string, std::string>> pairs; // boundary after i
    std::map<std::string, std::size_t> unique;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        auto left = window_text(i >= 2 ? i - 2 : 0, i);
        auto right = window_text(i + 1, std::min(n - 1, i + 3));
        unique.emplace(left, 0);
        unique.emplace(right, 0);
        pairs.emplace_back(std::move(left), std::move(right));
    }
    std::vector<std::string> texts;
    for (auto& [text, idx] : unique) {
        idx = texts.size();
        texts.push_back(text);
    }
    const auto vectors = provider.embed(texts);

    std::vector<CharRange> pieces;
    CharRange current = sentences[0].char_span;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double sim = std::max(0.0, llm::cosine(vectors[unique.at(pairs[i].first)], vectors[unique.at(pairs[i].second)]));
        if (sim < threshold) {
            pieces.push_back(current);
            current = sentences[i + 1].char_span;
        } else {
            current.end = sentences[i + 1].char_span.end;
        }
    }
    pieces.push_back(current);
    return b.from_partition(pieces);
}

std::vector<Chunk> chunk_markdown(const IndustryDoc& doc, int heading_level)
{
    if (heading_level < 1) throw PreconditionError("heading level must be >= 1");
    Builder b(doc, Strategy::Markdown);
    const std::string_view md = doc.markdown;

    std::vector<std::size_t> cuts{0};
    bool in_fence = false;
    bool in_table = false;
    for (const auto& l : line_table(md)) {
        const auto line = md.substr(l.begin, l.end - l.begin);
        const std::string t = trim(line);
        const bool fence_marker = t.rfind("```", 0) == 0;
        const bool table = !in_fence && !fence_marker && ingest::is_table_line(line);
        if (table != in_table) cuts.push_back(l.begin);
        in_table = table;
        if (!in_fence && !table) {
            const int depth = heading_depth(line);
            if (depth > 0 && depth <= heading_level) cuts.push_back(l.begin);
        }
        if (fence_marker) in_fence = !in_fence;
    }
    cuts.push_back(md.size());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::vector<CharRange> pieces;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) pieces.push_back({cuts[i], cuts[i + 1]});
    return b.from_partition(pieces);
}

std::vector<Chunk> chunk_document(const IndustryDoc& doc, const ChunkingSpec& spec, const llm::Provider* provider)
{
    spec.validate();
    switch (spec.strategy) {
    case Strategy::Fixed256: return chunk_fixed(doc, 256);
    case Strategy::Fixed512: return chunk_fixed(doc, 512);
    case Strategy::Fixed1024: return chunk_fixed(doc, 1024);
    case Strategy::Window: return chunk_window(doc, spec.window_size, spec.window_overlap_fraction);
    case Strategy::Page: return chunk_page(doc);
    case Strategy::Semantic:
        if (!provider) throw PreconditionError("semantic chunking needs an embedding provider");
        return chunk_semantic(doc, spec.semantic_boundary_threshold, *provider);
    case Strategy::Markdown: return chunk_markdown(doc, spec.markdown_heading_level);
    }
    throw PreconditionError("unknown strategy");
}

bool is_single_table_block(std::string_view text)
{
    const std::string t = trim(text);
    if (t.empty()) return false;
    for (const auto& line : split(t, '\n')) {
        if (!ingest::is_table_line(line)) return false;
    }
    return true;
}

void write_chunks(const std::filesystem::path& path, const std::vector<Chunk>& chunks)
{
    std::vector<json> rows;
    rows.reserve(chunks.size());
    for (const auto& c : chunks) rows.push_back(c.to_json());
    write_jsonl(path, rows);
}

std::vector<Chunk> read_chunks(const std::filesystem::path& path)
{
    std::vector<Chunk> out;
    for (const auto& row : read_jsonl(path)) out.push_back(Chunk::from_json(row));
    return out;
}

} // namespace esgqa::chunking
