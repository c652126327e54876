#include "esgqa/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/openai_backend.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/qa_evaluation.hpp"
#include "esgqa/util.hpp"

namespace esgqa::bench {

namespace {

bool is_option_letter(char c) { return c >= 'A' && c <= 'E'; }

std::string strip_decoration(std::string s)
{
    s = trim(s);
    auto strip = [&](std::string_view chars) {
        while (!s.empty() && chars.find(s.front()) != std::string_view::npos) s.erase(s.begin());
        while (!s.empty() && chars.find(s.back()) != std::string_view::npos) s.pop_back();
    };
    strip("*_`\"' \t\n");
    strip("().:*");
    return trim(s);
}

std::string normalise_option(std::string_view s)
{
    std::string out = to_lower(trim(s));
    while (!out.empty() && (out.back() == '.' || std::isspace(static_cast<unsigned char>(out.back())))) out.pop_back();
    return out;
}

std::string pct(const std::optional<double>& v)
{
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
}

std::string two(const std::optional<double>& v)
{
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

std::string env(const char* name)
{
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
}

bool has_key_named(const json& j, const std::string& key)
{
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() == key || has_key_named(it.value(), key)) return true;
        }
    } else if (j.is_array()) {
        for (const auto& v : j)
            if (has_key_named(v, key)) return true;
    }
    return false;
}

} // namespace

json GradedAnswer::to_json() const
{
    json j = {{"qa_id", qa_id},
              {"span", qa::to_string(span)},
              {"format", qa::to_string(format)},
              {"raw_answer", raw_answer}};
    if (extracted_letter) j["extracted_letter"] = std::string(1, *extracted_letter);
    if (correct) j["correct"] = *correct;
    if (bleu) j["bleu"] = *bleu;
    if (rouge_l) j["rouge_l"] = *rouge_l;
    if (flagged) j["flagged"] = true;
    if (errored) {
        j["errored"] = true;
        j["error"] = error;
    }
    return j;
}

std::optional<char> extract_letter(const std::string& raw, const std::optional<std::array<std::string, 5>>& options)
{
    const std::string bare = strip_decoration(raw);
    if (bare.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(bare[0])));
        if (is_option_letter(c)) return c;
    }

    static const std::regex answer_is(R"([Aa]nswer(?: is|:)\s*:?\s*(?:option\s+)?[\(\*]*([A-E])(?![A-Za-z]))");
    static const std::regex leading(R"(^\s*[\(\*]*([A-E])[\*]*[\.\):])");
    std::smatch m;
    if (std::regex_search(raw, m, answer_is)) return m[1].str()[0];
    if (std::regex_search(raw, m, leading)) return m[1].str()[0];

    if (options) {
        const std::string body = normalise_option(bare);
        for (std::size_t i = 0; i < 5; ++i)
            if (!body.empty() && body == normalise_option((*options)[i])) return qa::kOptionLetters[i];
        std::optional<char> hit;
        std::size_t hits = 0;
        const std::string lower = to_lower(raw);
        for (std::size_t i = 0; i < 5; ++i) {
            const std::string opt = normalise_option((*options)[i]);
            if (!opt.empty() && lower.find(opt) != std::string::npos) {
                hit = qa::kOptionLetters[i];
                ++hits;
            }
        }
        if (hits == 1) return hit;
    }
    return std::nullopt;
}

GradedAnswer grade_mcq(const std::string& raw, char correct_letter,
                       const std::optional<std::array<std::string, 5>>& options)
{
    if (!is_option_letter(correct_letter))
        throw PreconditionError(std::string("correct letter must be A-E, got '") + correct_letter + "'");
    GradedAnswer g;
    g.format = qa::Format::Mcq;
    g.raw_answer = raw;
    g.extracted_letter = extract_letter(raw, options);
    if (g.extracted_letter)
        g.correct = *g.extracted_letter == correct_letter;
    else
        g.flagged = true;
    return g;
}

GradedAnswer grade_free_text(const std::string& raw, const std::string& reference)
{
    GradedAnswer g;
    g.format = qa::Format::FreeText;
    g.raw_answer = raw;
    if (eval::metric_tokens(raw).empty() || eval::metric_tokens(reference).empty()) {
        g.bleu = 0.0;
        g.rouge_l = 0.0;
        return g;
    }
    g.bleu = eval::bleu(raw, {reference}).score;
    g.rouge_l = eval::rouge_l(raw, reference).score;
    return g;
}

json CellStats::to_json() const
{
    json j = {{"n", n},
              {"graded", graded},
              {"correct", correct},
              {"incorrect", incorrect},
              {"errored", errored},
              {"unextractable", unextractable}};
    if (accuracy) j["accuracy"] = *accuracy;
    if (bleu) j["bleu"] = *bleu;
    if (rouge_l) j["rouge_l"] = *rouge_l;
    return j;
}

std::string cell_key(qa::Span span, qa::Format format)
{
    return std::string(qa::to_string(span)) + "/" + std::string(qa::to_string(format));
}

json BenchReport::to_json() const
{
    json c = json::object();
    for (const auto& [k, v] : cells) c[k] = v.to_json();
    json j = {{"run_id", run_id}, {"config", config.to_json()}, {"cells", c}};
    if (cache) j["cache"] = {{"hits", cache->hits}, {"misses", cache->misses}, {"live_calls", cache->live_calls}};
    return j;
}

std::string BenchReport::to_markdown() const
{
    auto cell = [&](qa::Span s, qa::Format f) -> const CellStats* {
        auto it = cells.find(cell_key(s, f));
        return it == cells.end() ? nullptr : &it->second;
    };
    auto acc = [&](qa::Span s) {
        const auto* c = cell(s, qa::Format::Mcq);
        return c ? pct(c->accuracy) : std::string("-");
    };
    auto bleu_of = [&](qa::Span s) {
        const auto* c = cell(s, qa::Format::FreeText);
        return c ? two(c->bleu) : std::string("-");
    };
    auto rouge_of = [&](qa::Span s) {
        const auto* c = cell(s, qa::Format::FreeText);
        return c ? two(c->rouge_l) : std::string("-");
    };
    using qa::Span;
    std::string out;
    out += "| Pipeline | MCQ Local Accuracy | MCQ Cross-Industry Accuracy | Free text Local BLEU | Free text Local ROUGE "
           "| Free text Cross-Industry BLEU | Free text Cross-Industry ROUGE |\n";
    out += "|---|---|---|---|---|---|---|\n";
    out += "| " + std::string(pipe::to_string(config.variant)) + " | " + acc(Span::Local) + " | " +
           acc(Span::CrossIndustry) + " | " + bleu_of(Span::Local) + " | " + rouge_of(Span::Local) + " | " +
           bleu_of(Span::CrossIndustry) + " | " + rouge_of(Span::CrossIndustry) + " |\n";
    out += "\n| Cell | n | graded | correct | incorrect | unextractable | errored |\n";
    out += "|---|---|---|---|---|---|---|\n";
    for (const auto& [k, v] : cells) {
        out += "| " + k + " | " + std::to_string(v.n) + " | " + std::to_string(v.graded) + " | " +
               std::to_string(v.correct) + " | " + std::to_string(v.incorrect) + " | " +
               std::to_string(v.unextractable) + " | " + std::to_string(v.errored) + " |\n";
    }
    return out;
}

BenchReport aggregate(const std::vector<GradedAnswer>& graded, const pipe::PipelineConfig& cfg, std::string run_id)
{
    std::vector<const GradedAnswer*> order;
    order.reserve(graded.size());
    for (const auto& g : graded) order.push_back(&g);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->qa_id < b->qa_id; });

    struct Sums {
        double bleu = 0.0;
        double rouge = 0.0;
    };
    BenchReport r;
    r.run_id = std::move(run_id);
    r.config = cfg;
    std::map<std::string, Sums> sums;
    for (const auto* g : order) {
        const std::string key = cell_key(g->span, g->format);
        auto& c = r.cells[key];
        ++c.n;
        if (g->errored) {
            ++c.errored;
            continue;
        }
        ++c.graded;
        if (g->format == qa::Format::Mcq) {
            if (g->correct.value_or(false))
                ++c.correct;
            else
                ++c.incorrect;
            if (g->flagged) ++c.unextractable;
        } else {
            sums[key].bleu += g->bleu.value_or(0.0);
            sums[key].rouge += g->rouge_l.value_or(0.0);
        }
    }
    for (auto& [key, c] : r.cells) {
        if (c.graded == 0) continue;
        const double d = static_cast<double>(c.graded);
        if (key.ends_with("/mcq")) {
            c.accuracy = static_cast<double>(c.correct) / d;
        } else {
            c.bleu = sums[key].bleu / d;
            c.rouge_l = sums[key].rouge / d;
        }
    }
    return r;
}

BenchResult run_benchmark(const std::vector<qa::QAPair>& dataset, const pipe::Answerer& answerer,
                          const pipe::PipelineConfig& cfg, const BenchOptions& opts)
{
    if (dataset.empty()) throw PreconditionError("benchmark dataset is empty");
    std::vector<const qa::QAPair*> order;
    for (const auto& q : dataset) order.push_back(&q);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->qa_id < b->qa_id; });

    auto graded = parallel_map<GradedAnswer>(order.size(), opts.parallelism, [&](std::size_t i) {
        const qa::QAPair& q = *order[i];
        GradedAnswer g;
        try {
            const pipe::Answer a = answerer.answer(pipe::query_for(q));
            if (q.format == qa::Format::Mcq)
                g = grade_mcq(a.text, q.answer.empty() ? '?' : q.answer[0], q.options);
            else
                g = grade_free_text(a.text, q.answer);
        } catch (const CacheMiss&) {
            throw;
        } catch (const PreconditionError&) {
            throw;
        } catch (const Error& e) {
            spdlog::warn("bench: {} errored: {}", q.qa_id, e.what());
            g = GradedAnswer{};
            g.errored = true;
            g.error = e.what();
        }
        g.qa_id = q.qa_id;
        g.span = q.span;
        g.format = q.format;
        return g;
    });

    BenchResult out;
    out.report = aggregate(graded, cfg, opts.run_id);
    out.graded = std::move(graded);
    return out;
}

void write_bench(const std::filesystem::path& dir, const BenchResult& result)
{
    std::filesystem::create_directories(dir);
    write_file(dir / "report.json", result.report.to_json().dump(2) + "\n");
    write_file(dir / "report.md", result.report.to_markdown());
    std::vector<json> rows;
    rows.reserve(result.graded.size());
    for (const auto& g : result.graded) rows.push_back(g.to_json());
    write_jsonl(dir / "answers.jsonl", rows);
}

// ---------------------------------------------------------------- app config

AppConfig AppConfig::from_json(const json& j)
{
    if (has_key_named(j, "api_key"))
        throw PreconditionError("config files must not contain api_key; set OPENAI_API_KEY instead");
    AppConfig c;
    if (j.contains("provider")) {
        const auto& p = j.at("provider");
        c.provider.kind = p.value("kind", c.provider.kind);
        c.provider.base_url = p.value("base_url", c.provider.base_url);
        c.provider.cache_dir = p.value("cache_dir", c.provider.cache_dir);
        if (p.contains("cache_mode")) c.provider.cache_mode = llm::cache_mode_from_string(p.at("cache_mode").get<std::string>());
        c.provider.embedding_model = p.value("embedding_model", c.provider.embedding_model);
        c.provider.mock_seed = p.value("mock_seed", c.provider.mock_seed);
    }
    if (j.contains("pipeline")) c.pipeline = pipe::PipelineConfig::from_json(j.at("pipeline"));
    if (j.contains("thresholds")) {
        c.thresholds.local = j.at("thresholds").value("local", c.thresholds.local);
        c.thresholds.cross = j.at("thresholds").value("cross", c.thresholds.cross);
    }
    c.generator_model = j.value("generator_model", c.generator_model);
    c.judge_model = j.value("judge_model", c.judge_model);
    c.seed = j.value("seed", c.seed);
    if (c.provider.kind != "mock" && c.provider.kind != "openai")
        throw PreconditionError("unknown provider kind: " + c.provider.kind);
    return c;
}

AppConfig AppConfig::load(const std::filesystem::path& path)
{
    return from_json(json::parse(read_file(path)));
}

void AppConfig::apply_env()
{
    if (auto v = env("ESGQA_PROVIDER"); !v.empty()) provider.kind = v;
    if (auto v = env("ESGQA_BASE_URL"); !v.empty()) provider.base_url = v;
    if (auto v = env("ESGQA_CACHE_DIR"); !v.empty()) provider.cache_dir = v;
    if (auto v = env("ESGQA_CACHE_MODE"); !v.empty()) provider.cache_mode = llm::cache_mode_from_string(v);
    if (auto v = env("OPENAI_API_KEY"); !v.empty()) provider.api_key = v;
}

json AppConfig::to_json() const
{
    return {{"provider",
             {{"kind", provider.kind},
              {"base_url", provider.base_url},
              {"cache_dir", provider.cache_dir},
              {"cache_mode", provider.cache_mode == llm::CacheMode::ReadWrite ? "readwrite" : "replay"},
              {"embedding_model", provider.embedding_model},
              {"mock_seed", provider.mock_seed}}},
            {"pipeline", pipeline.to_json()},
            {"thresholds", {{"local", thresholds.local}, {"cross", thresholds.cross}}},
            {"generator_model", generator_model},
            {"judge_model", judge_model},
            {"seed", seed}};
}

std::shared_ptr<llm::Backend> make_backend(const ProviderSettings& s)
{
    std::shared_ptr<llm::Backend> inner;
    std::string embedding_model = s.embedding_model;
    if (s.kind == "mock") {
        llm::MockBackend::Options o;
        o.seed = s.mock_seed;
        inner = std::make_shared<llm::MockBackend>(o);
        embedding_model = "mock-embedding";
    } else if (s.kind == "openai") {
        if (!s.api_key.empty()) {
            llm::OpenAIBackend::Options o;
            o.base_url = s.base_url;
            o.api_key = s.api_key;
            o.embedding_model = s.embedding_model;
            inner = std::make_shared<llm::OpenAIBackend>(o);
        } else if (s.cache_dir.empty() || s.cache_mode != llm::CacheMode::ReplayOnly) {
            throw PreconditionError("openai provider needs OPENAI_API_KEY unless replaying from a cache");
        }
    } else {
        throw PreconditionError("unknown provider kind: " + s.kind);
    }
    if (s.cache_dir.empty()) return inner;
    return std::make_shared<llm::ReplayCache>(inner, s.cache_dir, s.cache_mode, embedding_model);
}

} // namespace esgqa::bench
