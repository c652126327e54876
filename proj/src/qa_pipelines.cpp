#include "esgqa/qa_pipelines.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/util.hpp"

namespace esgqa::pipe {

std::string_view to_string(Variant v)
{
    switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::CustomRag: return "custom_rag";
    case Variant::LlmPipeline: return "llm_pipeline";
    }
    return "baseline";
}

Variant variant_from_string(std::string_view s)
{
    if (s == "baseline") return Variant::Baseline;
    if (s == "custom_rag") return Variant::CustomRag;
    if (s == "llm_pipeline") return Variant::LlmPipeline;
    throw PreconditionError("unknown pipeline variant: " + std::string(s));
}

void PipelineConfig::validate() const
{
    if (k < 1) throw PreconditionError("k must be at least 1");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw PreconditionError("temperature must lie in [0, 2]");
    if (parallelism < 1) throw PreconditionError("parallelism must be at least 1");
    if (trim(refusal).empty()) throw PreconditionError("refusal text is empty");
    chunking.validate();
}

PipelineConfig PipelineConfig::effective() const
{
    PipelineConfig c = *this;
    if (variant == Variant::CustomRag) {
        c.retriever = retrieval::RetrieverKind::Knn;
        c.k = 5;
        c.chunking.strategy = chunking::Strategy::Markdown;
        c.transform = retrieval::Transform::None;
    }
    return c;
}

json PipelineConfig::to_json() const
{
    return {{"variant", to_string(variant)},
            {"chunking", chunking::to_string(chunking.strategy)},
            {"window_size", chunking.window_size},
            {"retriever", retrieval::to_string(retriever)},
            {"k", k},
            {"transform", retrieval::to_string(transform)},
            {"generator_model", generator_model},
            {"temperature", temperature},
            {"gate_model", gate_model},
            {"selector_model", selector_model},
            {"transform_model", transform_model},
            {"refusal", refusal},
            {"parallelism", parallelism}};
}

PipelineConfig PipelineConfig::from_json(const json& j)
{
    PipelineConfig c;
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("chunking")) c.chunking.strategy = chunking::strategy_from_string(j.at("chunking").get<std::string>());
    c.chunking.window_size = j.value("window_size", c.chunking.window_size);
    if (j.contains("retriever")) c.retriever = retrieval::retriever_from_string(j.at("retriever").get<std::string>());
    c.k = j.value("k", c.k);
    if (j.contains("transform")) c.transform = retrieval::transform_from_string(j.at("transform").get<std::string>());
    c.generator_model = j.value("generator_model", c.generator_model);
    c.temperature = j.value("temperature", c.temperature);
    c.gate_model = j.value("gate_model", c.gate_model);
    c.selector_model = j.value("selector_model", c.selector_model);
    c.transform_model = j.value("transform_model", c.transform_model);
    c.refusal = j.value("refusal", c.refusal);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.validate();
    return c;
}

json RetrievedItem::to_json() const
{
    return {{"source", source}, {"industry", industry}, {"score", score}, {"text", text}};
}

json Answer::to_json() const
{
    json r = json::array(), x = json::array();
    for (const auto& i : retrieved) r.push_back(i.to_json());
    for (const auto& i : rejected) x.push_back(i.to_json());
    return {{"pipeline", to_string(pipeline)}, {"gated", gated},       {"text", text},
            {"industries", industries},        {"retrieved", r},       {"rejected", x}};
}

// ---------------------------------------------------------------- gate

const json& relevance_schema()
{
    static const json s = {{"type", "object"},
                           {"properties",
                            {{"relevant", {{"type", "boolean"}}},
                             {"reason", {{"type", "string"}}}}},
                           {"required", {"relevant", "reason"}},
                           {"additionalProperties", false}};
    return s;
}

std::string relevance_prompt(const std::string& query)
{
    return "You screen questions sent to an assistant that answers questions about the IFRS sustainability "
           "disclosure standards (IFRS S1, IFRS S2 and the industry-based guidance with its disclosure topics, "
           "metrics, codes and units).\n"
           "Decide whether the question below is within that scope. Questions about sustainability reporting, "
           "disclosure metrics or the industries covered by the standards are relevant; anything else is not.\n\n"
           "Question: " +
           query;
}

RelevanceGate::RelevanceGate(const llm::Provider& provider, std::string model)
    : provider_(provider), model_(std::move(model))
{
}

bool RelevanceGate::relevant(const std::string& query) const
{
    if (trim(query).empty()) return false;
    llm::ProviderRequest req;
    req.model_id = model_;
    req.temperature = 0.0;
    req.messages = {llm::Message::user(relevance_prompt(query))};
    req.output_schema = llm::OutputSchema{"relevance_check", "Whether the question is in scope", relevance_schema()};
    return provider_.complete_structured(req).at("relevant").get<bool>();
}

// ---------------------------------------------------------------- generation

std::string answer_system_prompt()
{
    return "You are an assistant helping companies prepare sustainability reports under the IFRS sustainability "
           "disclosure standards. Answer the question using only the context provided. If the context does not "
           "contain the answer, say so. For multiple-choice questions, state the letter of the correct option "
           "followed by its text.";
}

std::string answer_prompt(const std::string& query, const std::vector<RetrievedItem>& context,
                          const std::map<std::string, std::string>& industry_names)
{
    std::string p = "Context:\n";
    for (std::size_t i = 0; i < context.size(); ++i) {
        const auto& c = context[i];
        auto it = industry_names.find(c.industry);
        const std::string label = it != industry_names.end() ? it->second + " (" + c.industry + ")" : c.industry;
        p += "[" + std::to_string(i + 1) + "] Industry: " + label + "\n" + c.text + "\n\n";
    }
    return p + "Question: " + query;
}

namespace {

std::string generate_answer(const llm::Provider& provider, const PipelineConfig& cfg, const std::string& query,
                            const std::vector<RetrievedItem>& context, const std::map<std::string, std::string>& names)
{
    llm::ProviderRequest req;
    req.model_id = cfg.generator_model;
    req.temperature = cfg.temperature;
    req.messages = {llm::Message::system(answer_system_prompt()),
                    llm::Message::user(answer_prompt(query, context, names))};
    return trim(provider.complete_text(req));
}

Answer refusal(const PipelineConfig& cfg, Variant v)
{
    Answer a;
    a.text = cfg.refusal;
    a.gated = true;
    a.pipeline = v;
    return a;
}

std::vector<RetrievedItem> items_from(const retrieval::VectorIndex& index,
                                      const std::vector<retrieval::RetrievalResult>& hits)
{
    std::vector<RetrievedItem> out;
    for (const auto& h : hits) {
        const auto c = index.chunk(h.chunk_id);
        out.push_back({h.chunk_id, c.metadata.industry, h.score, c.text});
    }
    return out;
}

std::map<std::string, std::string> names_in(const retrieval::VectorIndex& index,
                                            const std::vector<RetrievedItem>& items)
{
    std::map<std::string, std::string> names;
    for (const auto& i : items) {
        if (names.count(i.industry)) continue;
        const auto report = index.chunk(i.source).metadata.report;
        if (!report.empty()) names[i.industry] = report;
    }
    return names;
}

} // namespace

retrieval::VectorIndex build_index(const std::vector<ingest::IndustryDoc>& corpus,
                                   const chunking::ChunkingSpec& spec, const llm::Provider& provider)
{
    if (corpus.empty()) throw EmptyIndex("no documents to index");
    std::vector<chunking::Chunk> chunks;
    for (const auto& d : corpus) {
        auto c = chunking::chunk_document(d, spec, &provider);
        chunks.insert(chunks.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    const auto vectors = provider.embed(texts);
    for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].embedding = vectors[i];
    retrieval::VectorIndex index;
    index.upsert(chunks);
    return index;
}

BaselineRag::BaselineRag(const llm::Provider& provider, const retrieval::VectorIndex& index, PipelineConfig cfg)
    : provider_(provider), index_(index), cfg_(cfg.effective()), gate_(provider, cfg_.gate_model),
      transformer_(provider, cfg_.transform_model)
{
    cfg_.validate();
}

Answer BaselineRag::answer(const std::string& query) const
{
    if (!gate_.relevant(query)) return refusal(cfg_, Variant::Baseline);
    if (index_.size() == 0) throw EmptyIndex("baseline pipeline has an empty index");
    retrieval::SearchOptions opts;
    opts.retriever = cfg_.retriever;
    opts.k = cfg_.k;
    opts.transform = cfg_.transform;
    Answer a;
    a.pipeline = Variant::Baseline;
    a.retrieved = items_from(index_, retrieval::search(index_, provider_, &transformer_, query, opts));
    if (a.retrieved.empty()) throw EmptyIndex("retrieval returned nothing");
    a.text = generate_answer(provider_, cfg_, query, a.retrieved, names_in(index_, a.retrieved));
    return a;
}

CustomRag::CustomRag(const llm::Provider& provider, const retrieval::VectorIndex& index,
                     const cls::LlmClassifier& classifier, PipelineConfig cfg)
    : provider_(provider), index_(index), classifier_(classifier), cfg_([&] {
          cfg.variant = Variant::CustomRag;
          return cfg.effective();
      }()),
      gate_(provider, cfg_.gate_model)
{
    cfg_.validate();
}

Answer CustomRag::answer(const std::string& query) const
{
    if (!gate_.relevant(query)) return refusal(cfg_, Variant::CustomRag);
    if (index_.size() == 0) throw EmptyIndex("custom RAG pipeline has an empty index");
    const auto labels = classifier_.classify(query);
    Answer a;
    a.pipeline = Variant::CustomRag;
    a.industries.assign(labels.begin(), labels.end());
    const auto hits = index_.knn(provider_.embed_one(query), cfg_.k, retrieval::IndustryFilter(labels));
    a.retrieved = items_from(index_, hits);
    if (a.retrieved.empty()) throw EmptyIndex("no indexed chunks for the predicted industries");
    a.text = generate_answer(provider_, cfg_, query, a.retrieved, names_in(index_, a.retrieved));
    return a;
}

const json& snippet_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"snippets",
           {{"type", "array"},
            {"items", {{"type", "string"}}},
            {"description", "passages copied verbatim from the report"}}}}},
        {"required", {"snippets"}},
        {"additionalProperties", false}};
    return s;
}

std::string snippet_prompt(const ingest::IndustryDoc& doc, const std::string& query)
{
    return "Below is the IFRS sustainability disclosure report for the " + doc.display_name() + " industry (" +
           doc.industry_id +
           ").\n\n"
           "Select the passages of the report that are best suited to answer the question. Copy each passage "
           "exactly as it appears in the report, character for character, including table rows. Return as many "
           "passages as are needed and no more; return none if the report is not relevant.\n\n"
           "Report:\n" +
           doc.markdown + "\n\nQuestion: " + query;
}

LlmPipeline::LlmPipeline(const llm::Provider& provider, const std::vector<ingest::IndustryDoc>& corpus,
                         const cls::LlmClassifier& classifier, PipelineConfig cfg)
    : provider_(provider), corpus_(corpus), classifier_(classifier), cfg_([&] {
          cfg.variant = Variant::LlmPipeline;
          return cfg;
      }()),
      gate_(provider, cfg_.gate_model)
{
    cfg_.validate();
}

Answer LlmPipeline::answer(const std::string& query) const
{
    if (!gate_.relevant(query)) return refusal(cfg_, Variant::LlmPipeline);
    const auto labels = classifier_.classify(query);
    std::vector<const ingest::IndustryDoc*> docs;
    for (const auto& id : labels) {
        auto it = std::find_if(corpus_.begin(), corpus_.end(),
                               [&](const ingest::IndustryDoc& d) { return d.industry_id == id; });
        if (it == corpus_.end()) throw UnknownIndustryId("classifier chose an industry with no report: " + id);
        docs.push_back(&*it);
    }

    using Selection = std::vector<std::string>;
    const auto selections = parallel_map<Selection>(docs.size(), cfg_.parallelism, [&](std::size_t i) {
        llm::ProviderRequest req;
        req.model_id = cfg_.selector_model;
        req.temperature = 0.0;
        req.messages = {llm::Message::user(snippet_prompt(*docs[i], query))};
        req.output_schema = llm::OutputSchema{"snippet_selection", "Verbatim passages from the report",
                                              snippet_schema()};
        Selection out;
        const auto reply = provider_.complete_structured(req);
        for (const auto& s : reply.at("snippets")) out.push_back(s.get<std::string>());
        return out;
    });

    Answer a;
    a.pipeline = Variant::LlmPipeline;
    a.industries.assign(labels.begin(), labels.end());
    std::map<std::string, std::string> names;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& doc = *docs[i];
        names[doc.industry_id] = doc.display_name();
        std::size_t n = 0;
        for (const auto& raw : selections[i]) {
            const auto snippet = trim(raw);
            RetrievedItem item{doc.industry_id + "#" + std::to_string(++n), doc.industry_id, 1.0, snippet};
            if (snippet.empty() || doc.markdown.find(snippet) == std::string::npos) {
                spdlog::warn("hallucinated snippet dropped for {}: {}", doc.industry_id, snippet.substr(0, 120));
                a.rejected.push_back(std::move(item));
                continue;
            }
            a.retrieved.push_back(std::move(item));
        }
    }
    if (a.retrieved.empty())
        throw AllSnippetsRejected("no verbatim snippets selected (" + std::to_string(a.rejected.size()) +
                                  " rejected)");
    a.text = generate_answer(provider_, cfg_, query, a.retrieved, names);
    return a;
}

std::string query_for(const qa::QAPair& q) { return q.format == qa::Format::Mcq ? q.question_with_options() : q.question; }

// ---------------------------------------------------------------- fine-tune export

namespace {

const std::string kPromptTail = "\nAnswer with the letter of the correct option followed by its text.";

} // namespace

json finetune_record(const qa::QAPair& q)
{
    if (q.format != qa::Format::Mcq || !q.options) throw PreconditionError("fine-tune records need an MCQ");
    return {{"qa_id", q.qa_id},
            {"prompt", q.question_with_options() + kPromptTail},
            {"completion", q.answer + ". " + q.answer_text()}};
}

FinetuneExample parse_finetune_record(const json& record)
{
    FinetuneExample ex;
    ex.qa_id = record.at("qa_id").get<std::string>();
    std::string prompt = record.at("prompt").get<std::string>();
    if (prompt.size() < kPromptTail.size() || prompt.compare(prompt.size() - kPromptTail.size(), kPromptTail.size(),
                                                             kPromptTail) != 0)
        throw PreconditionError("not a fine-tune prompt");
    prompt.resize(prompt.size() - kPromptTail.size());
    // Peel options from the end so option markers inside the question stay put.
    for (int i = 4; i >= 0; --i) {
        const std::string marker = std::string("\n") + qa::kOptionLetters[static_cast<std::size_t>(i)] + ". ";
        const auto at = prompt.rfind(marker);
        if (at == std::string::npos) throw PreconditionError("fine-tune prompt lacks option markers");
        ex.options[static_cast<std::size_t>(i)] = prompt.substr(at + marker.size());
        prompt.resize(at);
    }
    ex.question = prompt;
    const auto completion = record.at("completion").get<std::string>();
    if (completion.size() < 3 || completion.compare(1, 2, ". ") != 0)
        throw PreconditionError("fine-tune completion lacks a letter");
    ex.answer = completion[0];
    return ex;
}

std::size_t export_finetune_dataset(const std::vector<qa::QAPair>& pairs, const std::filesystem::path& out)
{
    if (pairs.empty()) throw PreconditionError("nothing to export");
    std::vector<const qa::QAPair*> mcqs;
    for (const auto& p : pairs) {
        if (p.format != qa::Format::Mcq) {
            spdlog::warn("{}: free-text pair skipped in fine-tune export", p.qa_id);
            continue;
        }
        mcqs.push_back(&p);
    }
    std::stable_sort(mcqs.begin(), mcqs.end(), [](const qa::QAPair* a, const qa::QAPair* b) { return a->qa_id < b->qa_id; });
    std::vector<json> rows;
    for (const auto* p : mcqs) rows.push_back(finetune_record(*p));
    write_jsonl(out, rows);
    return rows.size();
}

} // namespace esgqa::pipe
