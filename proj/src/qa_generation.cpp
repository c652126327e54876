#include "esgqa/qa_generation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <spdlog/spdlog.h>

#include "esgqa/errors.hpp"
#include "esgqa/parallel.hpp"
#include "esgqa/util.hpp"

namespace esgqa::gen {

namespace detail {
extern const char* const kQuestionBankJson;
}

using qa::Hops;
using qa::Span;

namespace {

const char* bank_key(Span span, Format format)
{
    if (format == Format::Mcq) return span == Span::Local ? "Local" : "Cross-industry";
    return span == Span::Local ? "Free_local" : "Free_cross-industry";
}

std::string padded(std::size_t v, int width)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, v);
    return buf;
}

std::string names_of(const std::vector<const IndustryDoc*>& docs)
{
    std::vector<std::string> names;
    for (const auto* d : docs) names.push_back(d->display_name());
    if (names.size() <= 1) return join(names, "");
    std::vector<std::string> head(names.begin(), names.end() - 1);
    return join(head, ", ") + " and " + names.back();
}

} // namespace

// ---------------------------------------------------------------- question bank

QuestionStructureBank QuestionStructureBank::from_json(const json& j)
{
    QuestionStructureBank bank;
    for (auto span : {Span::Local, Span::CrossIndustry}) {
        for (auto format : {Format::Mcq, Format::FreeText}) {
            const auto& cat = j.at(bank_key(span, format));
            bank.templates_[{span, Hops::Single, format}] = cat.at("single_hop").get<std::vector<std::string>>();
            bank.templates_[{span, Hops::Multi, format}] = cat.at("multi_hop").get<std::vector<std::string>>();
        }
    }
    return bank;
}

const QuestionStructureBank& QuestionStructureBank::builtin()
{
    static const QuestionStructureBank bank = from_json(json::parse(detail::kQuestionBankJson));
    return bank;
}

const std::vector<std::string>& QuestionStructureBank::templates(const QaType& t) const
{
    auto it = templates_.find({t.span, t.hops, t.format});
    if (it == templates_.end() || it->second.empty())
        throw PreconditionError("no question structures for " + t.tag());
    return it->second;
}

std::vector<std::string> QuestionStructureBank::sample(const QaType& t, std::mt19937_64& rng, std::size_t lo,
                                                       std::size_t hi) const
{
    if (lo > hi) throw PreconditionError("sample range is empty");
    std::vector<std::string> pool = templates(t);
    const std::size_t want = std::min(pool.size(), lo + uniform_index(rng, hi - lo + 1));
    for (std::size_t i = 0; i < want; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    pool.resize(want);
    return pool;
}

// ---------------------------------------------------------------- schemas and prompts

const json& mcq_schema()
{
    static const json s = [] {
        json props = {{"question", {{"type", "string"}, {"description", "the question"}}}};
        for (char letter : qa::kOptionLetters) {
            const std::string l(1, letter);
            props["option" + l] = {{"type", "string"}, {"description", "option " + l}};
        }
        props["answer"] = {{"type", "string"},
                           {"enum", {"A", "B", "C", "D", "E"}},
                           {"description", "the correct answer option letter"}};
        props["reference_text"] = {{"type", "array"},
                                   {"items", {{"type", "string"}}},
                                   {"minItems", 1},
                                   {"description", "the verbatim text taken directly from the report that is used to "
                                                   "generate the question and correct answer"}};
        props["pages"] = {{"type", "array"},
                          {"items", {{"type", "string"}}},
                          {"minItems", 1},
                          {"description", "List of page numbers"}};
        return json{{"type", "object"},
                    {"properties",
                     {{"qa_pairs",
                       {{"type", "array"},
                        {"items",
                         {{"type", "object"},
                          {"properties", props},
                          {"required", {"question", "optionA", "optionB", "optionC", "optionD", "optionE", "answer",
                                        "reference_text", "pages"}}}}}}}},
                    {"required", {"qa_pairs"}}};
    }();
    return s;
}

const json& free_text_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"qa_pairs",
           {{"type", "array"},
            {"items",
             {{"type", "object"},
              {"properties",
               {{"question", {{"type", "string"}, {"description", "the question"}}},
                {"answer",
                 {{"type", "string"},
                  {"minLength", 1},
                  {"description", "the complete answer, taken verbatim from the report where possible"}}},
                {"reference_text",
                 {{"type", "array"},
                  {"items", {{"type", "string"}}},
                  {"minItems", 1},
                  {"description", "the verbatim text taken directly from the report that is used to generate the "
                                  "question and answer"}}},
                {"pages", {{"type", "array"}, {"items", {{"type", "string"}}}, {"minItems", 1},
                           {"description", "List of page numbers"}}}}},
              {"required", {"question", "answer", "reference_text", "pages"}}}}}}}},
        {"required", {"qa_pairs"}}};
    return s;
}

llm::OutputSchema output_schema(Format f)
{
    if (f == Format::Mcq)
        return {"qa_pair_schema", "Generate multiple choice question-answer pairs from industry markdown", mcq_schema()};
    return {"free_text_qa_pair_schema", "Generate free-text question-answer pairs from industry markdown",
            free_text_schema()};
}

std::string system_prompt()
{
    return "You are a sustainability reporting expert that helps companies draft their corporate sustainability "
           "reports using the IFRS reporting standards. You are preparing some questions that a company might ask "
           "while preparing its sustainability report, for which the answer can be taken from the context given in "
           "the markdown below.";
}

std::string qa_type_label(const QaType& t)
{
    std::string s = t.span == Span::Local ? "local" : "cross-industry";
    s += t.hops == Hops::Single ? " single-hop" : " multi-hop";
    return s;
}

std::string qa_type_description(const QaType& t, const std::vector<const IndustryDoc*>& contexts)
{
    std::string s = qa_type_label(t);
    if (t.span == Span::Local)
        s += ", meaning the question is about the " + names_of(contexts) + " industry only";
    else
        s += ", meaning the question must cover all of the following industries: " + names_of(contexts);
    if (t.hops == Hops::Single)
        s += ", and can be answered from a single snippet of the markdown content";
    else
        s += ", and needs information from several snippets of the markdown content, or several reasoning steps, "
             "to be answered";
    return s + ".";
}

std::string user_prompt(Method method, const QaType& t, const std::vector<const IndustryDoc*>& contexts,
                        std::size_t n, const std::vector<std::string>& structures)
{
    const bool mcq = t.format == Format::Mcq;
    const std::string ns = std::to_string(n);
    std::string p = "Here is the markdown content:\n" + eval::combined_markdown(contexts) + "\n\n";
    if (method == Method::Baseline) {
        p += "Based on the markdown content, generate " + ns + (mcq ? " multiple-choice" : " free-text") +
             " questions of type " + qa_type_label(t) + ".\n\n";
        p += "Generate " + ns + " QA pairs for the specified type and return them using the provided schema.";
        return p;
    }
    if (mcq) {
        p += "Based on the markdown content, generate " + ns +
             " 'Single Best Answer' (SBA) questions that have only one correct answer out of five options. The "
             "correct answer should not be obvious and *should really require specific information from the source "
             "document to be able to be answered*. The incorrect answer options should not be so ridiculous or "
             "extreme that they are obviously wrong.";
    } else {
        p += "Based on the markdown content, generate " + ns +
             " free-text questions that each have one complete answer. The answer should not be obvious and *should "
             "really require specific information from the source document to be able to be answered*.";
    }
    p += " The questions must be of the type: " + qa_type_description(t, contexts) + "\n\n";
    p += "The questions should be ones that could occur when a human wants information from the chatbot. They should "
         "be directly relevant to companies preparing their sustainability reports and reflect real-world scenarios "
         "that reporting teams might encounter.\n\n";
    p += "To generate questions, follow these steps:\n"
         "1. Select a list of one or more sentences/snippets of the markdown content that can be used to form an "
         "answer to a question. This will form the reference text. Remember this should be relevant to the human for "
         "drafting sustainability reports.\n"
         "2. Write a question that requires the reader to understand the content of the selected text to answer "
         "correctly. The question should be based only on the selected text and should not require any additional "
         "information. Remember this should be the type of question a human would ask when drafting sustainability "
         "reports.\n";
    if (mcq)
        p += "3. Write five answer options, one of which is correct and the other four are incorrect. The correct "
             "answer should be complete and taken verbatim from the selected section(s) of the markdown content.\n\n";
    else
        p += "3. Write the answer. The answer should be complete and taken verbatim from the selected section(s) of "
             "the markdown content.\n\n";
    if (method == Method::CotFewShot) {
        p += "Some example " + qa_type_label(t) + (mcq ? " multiple-choice" : " free-text") +
             " question structures are shown below. Please choose " + ns +
             " structures at random but do not limit yourself to these types only. If some of these structures do "
             "not make sense given the content of the document, adapt them to the context as appropriate or choose "
             "ones that you think are appropriate.\n\n";
        p += "Here are some question structures:\n";
        for (const auto& s : structures) p += "- " + s + "\n";
        p += "\n";
    }
    p += "Generate " + ns + " unique and diverse QA pairs for the specified type and return them using the provided "
         "schema.";
    return p;
}

// ---------------------------------------------------------------- generation

QAPair pair_from_item(const json& item, const GenerationRequest& req, std::string qa_id)
{
    QAPair q;
    q.qa_id = std::move(qa_id);
    q.format = req.type.format;
    q.span = req.type.span;
    q.hops = req.type.hops;
    q.question = trim(item.at("question").get<std::string>());
    if (q.format == Format::Mcq) {
        std::array<std::string, 5> options;
        for (std::size_t i = 0; i < 5; ++i)
            options[i] = trim(item.at("option" + std::string(1, qa::kOptionLetters[i])).get<std::string>());
        q.options = options;
    }
    q.answer = trim(item.at("answer").get<std::string>());
    q.reference_text = item.at("reference_text").get<std::vector<std::string>>();
    q.pages = item.at("pages").get<std::vector<std::string>>();
    for (const auto* d : req.contexts) q.industries.push_back(d->industry_id);
    q.method = req.method;
    q.temperature = req.temperature;
    try {
        q.validate();
    } catch (const PreconditionError& e) {
        throw SchemaViolation(std::string("generated pair is invalid: ") + e.what());
    }
    return q;
}

QAGenerator::QAGenerator(const llm::Provider& provider, GeneratorConfig cfg, const QuestionStructureBank& bank)
    : provider_(provider), cfg_(std::move(cfg)), bank_(bank)
{
}

std::vector<QAPair> QAGenerator::call(const GenerationRequest& req, std::size_t n, std::mt19937_64& rng) const
{
    std::vector<std::string> structures;
    if (req.method == Method::CotFewShot) structures = bank_.sample(req.type, rng);
    llm::ProviderRequest pr;
    pr.model_id = cfg_.model;
    pr.temperature = req.temperature;
    pr.messages = {llm::Message::system(system_prompt()),
                   llm::Message::user(user_prompt(req.method, req.type, req.contexts, n, structures))};
    pr.output_schema = output_schema(req.type.format);
    const auto reply = provider_.complete_structured(pr);
    std::vector<QAPair> out;
    for (const auto& item : reply.at("qa_pairs")) out.push_back(pair_from_item(item, req, ""));
    return out;
}

std::vector<QAPair> QAGenerator::generate(const GenerationRequest& req) const
{
    if (req.n < 1) throw PreconditionError("generate_qa needs n >= 1");
    if (req.contexts.empty()) throw PreconditionError("generate_qa needs at least one context");
    for (const auto* d : req.contexts) {
        if (!d) throw PreconditionError("null context document");
    }
    if (req.type.span == Span::Local && req.contexts.size() != 1)
        throw PreconditionError("local questions take exactly one context");
    if (req.type.span == Span::CrossIndustry && req.contexts.size() < 2)
        throw PreconditionError("cross-industry questions take at least two contexts");

    std::mt19937_64 rng(cfg_.seed ^ fnv1a64(req.id_prefix + "|" + req.type.tag()));
    auto pairs = call(req, req.n, rng);
    if (pairs.size() < req.n) {
        spdlog::warn("generation returned {} of {} pairs; retrying for the remainder", pairs.size(), req.n);
        auto more = call(req, req.n - pairs.size(), rng);
        pairs.insert(pairs.end(), more.begin(), more.end());
    }
    if (pairs.size() < req.n) {
        std::vector<std::string> partial;
        for (const auto& p : pairs) partial.push_back(p.to_json().dump());
        throw UnderGeneration("model returned " + std::to_string(pairs.size()) + " of " + std::to_string(req.n) +
                                  " requested pairs",
                              req.n, std::move(partial));
    }
    pairs.resize(req.n);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].qa_id = req.id_prefix + "-" + padded(i + 1, 2);
    return pairs;
}

// ---------------------------------------------------------------- industry groups

const json& industry_groups_schema()
{
    static const json s = {
        {"type", "object"},
        {"properties",
         {{"groups",
           {{"type", "array"},
            {"minItems", 1},
            {"items",
             {{"type", "object"},
              {"properties",
               {{"industries", {{"type", "array"}, {"items", {{"type", "string"}}}, {"minItems", 2}}},
                {"explanation", {{"type", "string"}}}}},
              {"required", {"industries", "explanation"}}}}}}}},
        {"required", {"groups"}}};
    return s;
}

std::string industry_groups_prompt(const std::vector<IndustryDoc>& docs, const PairingConfig& cfg)
{
    const std::size_t size = std::min(cfg.group_size, docs.size());
    std::string p = "As a specialist consultant on IFRS sustainability reporting standards, please suggest " +
                    std::to_string(cfg.groups) + " groups of " + std::to_string(size) +
                    " different industries that are most likely to come up when considering reporting standards. "
                    "These should be industries where comparisons or relationships in sustainability reporting "
                    "would be particularly relevant or insightful.\n\n"
                    "Use the following industry groups and descriptions as a reference:\n\n";
    for (const auto& d : docs)
        p += "- " + d.industry_id + " (" + d.display_name() + "): " + ingest::industry_description(d) + "\n";
    p += "\nFor each suggestion, provide:\n"
         "1. The industries involved (using their codes, e.g., b1-apparel-accessories-and-footwear, "
         "b2-appliance-manufacturing, etc.)\n"
         "2. A brief explanation of why these industries are relevant to compare in terms of sustainability "
         "reporting.\n\n"
         "Use the provided schema to format your response.";
    return p;
}

std::vector<IndustryGroup> pair_industries(const std::vector<IndustryDoc>& docs, const llm::Provider& provider,
                                           const PairingConfig& cfg)
{
    if (docs.size() < 2) throw PreconditionError("pairing industries needs at least two documents");
    if (docs.size() == 2)
        return {{{std::min(docs[0].industry_id, docs[1].industry_id), std::max(docs[0].industry_id, docs[1].industry_id)},
                 "only two industries in the corpus"}};
    std::set<std::string> known;
    for (const auto& d : docs) known.insert(d.industry_id);

    llm::ProviderRequest req;
    req.model_id = cfg.model;
    req.temperature = cfg.temperature;
    req.messages = {llm::Message::user(industry_groups_prompt(docs, cfg))};
    req.output_schema = llm::OutputSchema{"industry_groups", "Groups of related industries", industry_groups_schema()};
    const auto reply = provider.complete_structured(req);

    std::vector<IndustryGroup> groups;
    for (const auto& g : reply.at("groups")) {
        IndustryGroup group;
        for (const auto& id : g.at("industries")) {
            auto s = trim(id.get<std::string>());
            if (!known.count(s)) throw UnknownIndustryId("industry grouping named unknown industry " + s);
            if (std::find(group.industries.begin(), group.industries.end(), s) == group.industries.end())
                group.industries.push_back(s);
        }
        group.explanation = g.value("explanation", "");
        groups.push_back(std::move(group));
    }
    return groups;
}

std::vector<std::pair<std::string, std::string>> pairs_from_groups(const std::vector<IndustryGroup>& groups)
{
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& g : groups) {
        for (std::size_t i = 0; i < g.industries.size(); ++i) {
            for (std::size_t j = i + 1; j < g.industries.size(); ++j)
                pairs.insert(std::minmax(g.industries[i], g.industries[j]));
        }
    }
    return {pairs.begin(), pairs.end()};
}

// ---------------------------------------------------------------- plan

void GenerationPlan::validate(const std::vector<IndustryDoc>& corpus) const
{
    if (per_type < 1) throw PreconditionError("plan needs at least one question per type");
    if (types.empty()) throw PreconditionError("plan names no question types");
    if (corpus.empty()) throw PreconditionError("plan needs a nonempty corpus");
    if (!(thresholds.local > 0) || !(thresholds.cross > 0)) throw PreconditionError("plan thresholds must be set");
    std::set<std::string> known;
    for (const auto& d : corpus) known.insert(d.industry_id);
    for (const auto& id : industries) {
        if (!known.count(id)) throw UnknownIndustryId("plan names unknown industry " + id);
    }
    for (const auto& [a, b] : industry_pairs) {
        if (!known.count(a)) throw UnknownIndustryId("plan pair names unknown industry " + a);
        if (!known.count(b)) throw UnknownIndustryId("plan pair names unknown industry " + b);
        if (a == b) throw PreconditionError("plan pair repeats industry " + a);
    }
    const bool cross = std::any_of(types.begin(), types.end(), [](const QaType& t) { return t.span == Span::CrossIndustry; });
    if (cross && industry_pairs.empty()) throw PreconditionError("cross-industry types need industry pairs");
}

json GenerationPlan::to_json() const
{
    json t = json::array();
    for (const auto& ty : types) t.push_back(ty.tag());
    json pairs = json::array();
    for (const auto& [a, b] : industry_pairs) pairs.push_back({a, b});
    return {{"per_type", per_type},
            {"types", t},
            {"industries", industries},
            {"industry_pairs", pairs},
            {"theta_local", thresholds.local},
            {"theta_cross", thresholds.cross},
            {"method", qa::to_string(method)},
            {"temperature", temperature},
            {"similarity_threshold", similarity_threshold},
            {"parallelism", parallelism}};
}

GenerationPlan GenerationPlan::from_json(const json& j)
{
    GenerationPlan p;
    p.per_type = j.value("per_type", p.per_type);
    if (j.contains("types")) {
        p.types.clear();
        for (const auto& t : j["types"]) p.types.push_back(QaType::from_tag(t.get<std::string>()));
    }
    p.industries = j.value("industries", std::vector<std::string>{});
    if (j.contains("industry_pairs")) {
        for (const auto& pr : j["industry_pairs"]) {
            if (!pr.is_array() || pr.size() != 2) throw PreconditionError("industry pairs must have two members");
            p.industry_pairs.emplace_back(pr[0].get<std::string>(), pr[1].get<std::string>());
        }
    }
    p.thresholds.local = j.value("theta_local", p.thresholds.local);
    p.thresholds.cross = j.value("theta_cross", p.thresholds.cross);
    if (j.contains("method")) p.method = qa::method_from_string(j["method"].get<std::string>());
    p.temperature = j.value("temperature", p.temperature);
    p.similarity_threshold = j.value("similarity_threshold", p.similarity_threshold);
    p.parallelism = j.value("parallelism", p.parallelism);
    return p;
}

// ---------------------------------------------------------------- pipeline

json AuditRecord::to_json() const
{
    return {{"qa_id", qa_id},
            {"type", type.tag()},
            {"industries", industries},
            {"outcome", outcome},
            {"reason", reason.empty() ? json(nullptr) : json(reason)},
            {"gates", gates},
            {"question", question ? question->to_json() : json(nullptr)},
            {"scores", scores ? scores->to_json() : json(nullptr)}};
}

namespace {

struct Job {
    std::string qa_id;
    QaType type;
    std::vector<const IndustryDoc*> docs;
};

struct Stage1 {
    AuditRecord audit;
    std::optional<QAPair> question; // set when still in the running
    std::optional<eval::EvalScores> scores;
    std::optional<post::ImprovementRecord> improvement;
};

const IndustryDoc* find_doc(const std::vector<IndustryDoc>& corpus, const std::string& id)
{
    for (const auto& d : corpus) {
        if (d.industry_id == id) return &d;
    }
    throw UnknownIndustryId("unknown industry " + id);
}

std::vector<Job> plan_jobs(const GenerationPlan& plan, const std::vector<IndustryDoc>& corpus)
{
    std::vector<const IndustryDoc*> local;
    if (plan.industries.empty()) {
        for (const auto& d : corpus) local.push_back(&d);
        std::sort(local.begin(), local.end(),
                  [](const IndustryDoc* a, const IndustryDoc* b) { return a->industry_id < b->industry_id; });
    } else {
        for (const auto& id : plan.industries) local.push_back(find_doc(corpus, id));
    }
    std::vector<Job> jobs;
    for (const auto& t : plan.types) {
        for (std::size_t i = 0; i < plan.per_type; ++i) {
            Job job{t.tag() + "-" + padded(i + 1, 4), t, {}};
            if (t.span == Span::Local) {
                job.docs = {local[i % local.size()]};
            } else {
                const auto& [a, b] = plan.industry_pairs[i % plan.industry_pairs.size()];
                job.docs = {find_doc(corpus, a), find_doc(corpus, b)};
            }
            jobs.push_back(std::move(job));
        }
    }
    std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) { return a.qa_id < b.qa_id; });
    return jobs;
}

json weak_json(const std::vector<eval::Metric>& weak)
{
    json out = json::array();
    for (auto m : weak) out.push_back(eval::to_string(m));
    return out;
}

Stage1 run_stage1(const Job& job, const GenerationPlan& plan, const PipelineServices& services)
{
    Stage1 s;
    auto& a = s.audit;
    a.qa_id = job.qa_id;
    a.type = job.type;
    for (const auto* d : job.docs) a.industries.push_back(d->industry_id);
    a.gates = {{"improvement", nullptr}, {"generalisation", nullptr}, {"similarity", nullptr}, {"sba", nullptr}};
    auto discard = [&](std::string reason) {
        a.outcome = "discarded";
        a.reason = std::move(reason);
        s.question.reset();
        return s;
    };

    QAPair q;
    try {
        GenerationRequest req{job.docs, job.type, 1, plan.method, plan.temperature, job.qa_id};
        q = services.generator.generate(req).front();
        q.qa_id = job.qa_id;
    } catch (const CacheMiss&) {
        throw;
    } catch (const Error& e) {
        spdlog::warn("{}: generation failed: {}", job.qa_id, e.what());
        a.outcome = "failed";
        a.reason = "generation_error";
        a.gates["error"] = e.what();
        return s;
    }
    a.question = q;
    s.question = q;

    const double theta = plan.thresholds.for_span(job.type.span);
    eval::EvalScores scores;
    try {
        scores = services.scorer.score(q, job.docs);
        scores.qa_id = q.qa_id;
    } catch (const CacheMiss&) {
        throw;
    } catch (const Error& e) {
        a.gates["error"] = e.what();
        return discard("evaluation_error");
    }
    a.scores = scores;
    a.gates["reference_gate"] = scores.excluded() ? "fail" : "pass";
    if (scores.excluded()) return discard("reference_gate");

    const auto weak = post::weak_metrics(scores, theta);
    a.gates["weak_metrics"] = weak_json(weak);
    if (!weak.empty()) {
        try {
            auto imp = services.post.improve(q, scores, job.docs, services.scorer);
            a.gates["improvement"] = post::to_string(imp.record.outcome);
            s.improvement = imp.record;
            if (imp.record.outcome != post::ImproveOutcome::Improved)
                return discard(std::string(post::to_string(imp.record.outcome)));
            q = imp.question;
            scores = *imp.record.after;
            a.question = q;
            a.scores = scores;
        } catch (const CacheMiss&) {
            throw;
        } catch (const Error& e) {
            a.gates["improvement"] = "error";
            a.gates["error"] = e.what();
            return discard("improvement_error");
        }
    }

    try {
        auto g = services.post.generalise(q, job.docs);
        a.gates["generalisation"] = g ? "applied" : "skipped";
        if (g) q = *g;
    } catch (const RewriteScopeViolation& e) {
        spdlog::info("{}: {}", job.qa_id, e.what());
        a.gates["generalisation"] = "scope_violation";
    } catch (const CacheMiss&) {
        throw;
    } catch (const Error& e) {
        a.gates["generalisation"] = "error";
        a.gates["generalisation_error"] = e.what();
    }
    a.question = q;
    s.question = q;
    s.scores = scores;
    return s;
}

} // namespace

PipelineResult run_generation_pipeline(const GenerationPlan& plan, const std::vector<IndustryDoc>& corpus,
                                       const PipelineServices& services)
{
    plan.validate(corpus);
    const auto jobs = plan_jobs(plan, corpus);
    auto stage1 = parallel_map<Stage1>(jobs.size(), plan.parallelism,
                                       [&](std::size_t i) { return run_stage1(jobs[i], plan, services); });

    PipelineResult result;
    post::SimilarityGate similar(services.embedder, plan.similarity_threshold);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        auto& s = stage1[i];
        auto& a = s.audit;
        if (s.improvement) result.improvements.push_back(*s.improvement);
        if (a.outcome == "failed") {
            ++result.failed;
            result.audit.push_back(std::move(a));
            continue;
        }
        ++result.generated;
        if (!s.question) {
            ++result.discarded;
            result.audit.push_back(std::move(a));
            continue;
        }
        auto& q = *s.question;
        auto& scores = *s.scores;
        const double theta = plan.thresholds.for_span(q.span);
        auto discard = [&](std::string reason) {
            a.outcome = "discarded";
            a.reason = std::move(reason);
            ++result.discarded;
            result.audit.push_back(std::move(a));
        };
        try {
            const double nearest = similar.nearest(q.question);
            a.gates["similarity"] = nearest;
            if (nearest > plan.similarity_threshold) {
                discard("similar");
                continue;
            }
            if (!post::weak_metrics(scores, theta).empty()) {
                discard("below_threshold");
                continue;
            }
            if (q.format == Format::Mcq) {
                const auto sba = services.post.sba_check(q, jobs[i].docs);
                scores.sba_pass = sba.pass;
                a.gates["sba"] = sba.reason;
                a.scores = scores;
                if (!sba.pass) {
                    discard("sba_" + sba.reason);
                    continue;
                }
            }
            similar.keep(q.question);
        } catch (const CacheMiss&) {
            throw;
        } catch (const Error& e) {
            a.gates["error"] = e.what();
            discard("postprocess_error");
            continue;
        }
        a.outcome = "accepted";
        a.scores = scores;
        result.accepted.push_back(q);
        result.scores.push_back(scores);
        result.audit.push_back(std::move(a));
    }
    spdlog::info("generation pipeline: {} accepted, {} discarded, {} failed", result.accepted.size(),
                 result.discarded, result.failed);
    return result;
}

void write_dataset(const std::filesystem::path& dir, const PipelineResult& result)
{
    std::filesystem::create_directories(dir);
    qa::write_pairs((dir / "qa_pairs.jsonl").string(), result.accepted);
    eval::write_scores((dir / "scores.jsonl").string(), result.scores);
    std::vector<json> audit, improvements;
    for (const auto& a : result.audit) audit.push_back(a.to_json());
    for (const auto& r : result.improvements) improvements.push_back(r.to_json());
    write_jsonl(dir / "audit.jsonl", audit);
    write_jsonl(dir / "improvements.jsonl", improvements);
}

} // namespace esgqa::gen
