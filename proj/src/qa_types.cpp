#include "esgqa/qa_types.hpp"

#include <algorithm>

#include "esgqa/errors.hpp"
#include "esgqa/util.hpp"

namespace esgqa::qa {

std::string_view to_string(Format f)
{
    return f == Format::Mcq ? "mcq" : "free_text";
}

std::string_view to_string(Span s)
{
    return s == Span::Local ? "local" : "cross_industry";
}

std::string_view to_string(Hops h)
{
    return h == Hops::Single ? "single" : "multi";
}

std::string_view to_string(Method m)
{
    switch (m) {
    case Method::Baseline: return "baseline";
    case Method::Cot: return "cot";
    case Method::CotFewShot: return "cot_fewshot";
    }
    return "cot_fewshot";
}

Format format_from_string(std::string_view s)
{
    if (s == "mcq") return Format::Mcq;
    if (s == "free_text") return Format::FreeText;
    throw PreconditionError("unknown question format: " + std::string(s));
}

Span span_from_string(std::string_view s)
{
    if (s == "local") return Span::Local;
    if (s == "cross_industry") return Span::CrossIndustry;
    throw PreconditionError("unknown question span: " + std::string(s));
}

Hops hops_from_string(std::string_view s)
{
    if (s == "single") return Hops::Single;
    if (s == "multi") return Hops::Multi;
    throw PreconditionError("unknown hop count: " + std::string(s));
}

Method method_from_string(std::string_view s)
{
    for (auto m : {Method::Baseline, Method::Cot, Method::CotFewShot}) {
        if (to_string(m) == s) return m;
    }
    throw PreconditionError("unknown generation method: " + std::string(s));
}

std::string QaType::tag() const
{
    return std::string(to_string(span)) + "-" + std::string(to_string(hops)) + "-" + std::string(to_string(format));
}

QaType QaType::from_tag(std::string_view tag)
{
    auto parts = split(tag, '-');
    if (parts.size() != 3) throw PreconditionError("malformed question type tag: " + std::string(tag));
    return {span_from_string(parts[0]), hops_from_string(parts[1]), format_from_string(parts[2])};
}

std::vector<QaType> QaType::all()
{
    std::vector<QaType> out;
    for (auto span : {Span::Local, Span::CrossIndustry}) {
        for (auto hops : {Hops::Single, Hops::Multi}) {
            for (auto format : {Format::Mcq, Format::FreeText}) out.push_back({span, hops, format});
        }
    }
    return out;
}

void QAPair::validate() const
{
    auto fail = [this](const std::string& what) { throw PreconditionError("QAPair " + qa_id + ": " + what); };
    if (trim(question).empty()) fail("empty question");
    if (format == Format::Mcq) {
        if (!options) fail("MCQ without options");
        for (const auto& o : *options) {
            if (trim(o).empty()) fail("empty option");
        }
        if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'E') fail("MCQ answer must be a letter A-E");
    } else {
        if (options) fail("free-text question with options");
        if (trim(answer).empty()) fail("empty answer");
    }
    if (span == Span::Local && industries.size() != 1) fail("local question needs exactly one industry");
    if (span == Span::CrossIndustry && industries.size() < 2) fail("cross-industry question needs two industries");
    if (reference_text.empty()) fail("empty reference_text");
    if (pages.empty()) fail("empty pages");
}

const std::string& QAPair::option(char letter) const
{
    if (!options || letter < 'A' || letter > 'E') throw PreconditionError("no option " + std::string(1, letter));
    return (*options)[static_cast<std::size_t>(letter - 'A')];
}

std::string QAPair::answer_text() const
{
    if (format == Format::FreeText) return answer;
    return option(answer.empty() ? '?' : answer[0]);
}

std::string QAPair::question_with_options() const
{
    std::string out = question;
    if (options) {
        for (std::size_t i = 0; i < 5; ++i) out += "\n" + std::string(1, kOptionLetters[i]) + ". " + (*options)[i];
    }
    return out;
}

json QAPair::to_json() const
{
    json j = {{"qa_id", qa_id},
              {"format", to_string(format)},
              {"span", to_string(span)},
              {"hops", to_string(hops)},
              {"question", question}};
    if (options) {
        json o = json::object();
        for (std::size_t i = 0; i < 5; ++i) o[std::string(1, kOptionLetters[i])] = (*options)[i];
        j["options"] = o;
    }
    j["answer"] = answer;
    j["reference_text"] = reference_text;
    j["pages"] = pages;
    j["industries"] = industries;
    j["method"] = to_string(method);
    j["temperature"] = temperature;
    return j;
}

QAPair QAPair::from_json(const json& j)
{
    QAPair q;
    q.qa_id = j.at("qa_id").get<std::string>();
    q.format = format_from_string(j.at("format").get<std::string>());
    q.span = span_from_string(j.at("span").get<std::string>());
    q.hops = hops_from_string(j.at("hops").get<std::string>());
    q.question = j.at("question").get<std::string>();
    if (j.contains("options") && !j["options"].is_null()) {
        std::array<std::string, 5> o;
        for (std::size_t i = 0; i < 5; ++i) o[i] = j["options"].at(std::string(1, kOptionLetters[i])).get<std::string>();
        q.options = o;
    }
    q.answer = j.at("answer").get<std::string>();
    q.reference_text = j.at("reference_text").get<std::vector<std::string>>();
    q.pages = j.at("pages").get<std::vector<std::string>>();
    q.industries = j.at("industries").get<std::vector<std::string>>();
    q.method = method_from_string(j.value("method", "cot_fewshot"));
    q.temperature = j.value("temperature", 0.5);
    return q;
}

std::vector<QAPair> read_pairs(const std::string& path)
{
    std::vector<QAPair> out;
    for (const auto& row : read_jsonl(path)) out.push_back(QAPair::from_json(row));
    return out;
}

void write_pairs(const std::string& path, const std::vector<QAPair>& pairs)
{
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(p.to_json());
    write_jsonl(path, rows);
}

} // namespace esgqa::qa
