#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace esgqa::qa {

using json = nlohmann::json;

enum class Format { Mcq, FreeText };
enum class Span { Local, CrossIndustry };
enum class Hops { Single, Multi };
enum class Method { Baseline, Cot, CotFewShot };

std::string_view to_string(Format f);
std::string_view to_string(Span s);
std::string_view to_string(Hops h);
std::string_view to_string(Method m);
Format format_from_string(std::string_view s);
Span span_from_string(std::string_view s);
Hops hops_from_string(std::string_view s);
Method method_from_string(std::string_view s);

inline constexpr std::array<char, 5> kOptionLetters{'A', 'B', 'C', 'D', 'E'};

struct QaType {
    Span span = Span::Local;
    Hops hops = Hops::Single;
    Format format = Format::Mcq;

    /// "local-single-mcq", "cross_industry-multi-free_text", ...
    std::string tag() const;
    static QaType from_tag(std::string_view tag);
    /// The eight span x hops x format configurations.
    static std::vector<QaType> all();

    friend bool operator==(const QaType&, const QaType&) = default;
    friend auto operator<=>(const QaType&, const QaType&) = default;
};

struct QAPair {
    std::string qa_id;
    Format format = Format::Mcq;
    Span span = Span::Local;
    Hops hops = Hops::Single;
    std::string question;
    std::optional<std::array<std::string, 5>> options;
    std::string answer; // letter for MCQ, text for free text
    std::vector<std::string> reference_text;
    std::vector<std::string> pages;
    std::vector<std::string> industries;
    Method method = Method::CotFewShot;
    double temperature = 0.5;

    QaType type() const { return {span, hops, format}; }
    /// Throws PreconditionError naming the first broken invariant.
    void validate() const;
    /// MCQ: text of the labelled option; free text: the answer itself.
    std::string answer_text() const;
    const std::string& option(char letter) const;
    /// Question followed by "A. ..." option lines for MCQs.
    std::string question_with_options() const;

    json to_json() const;
    static QAPair from_json(const json& j);
};

/// Per-span acceptance thresholds on the 1-10 metric scale.
struct Thresholds {
    double local = 9.0;
    double cross = 7.0;

    double for_span(Span s) const { return s == Span::Local ? local : cross; }
};

std::vector<QAPair> read_pairs(const std::string& path);
void write_pairs(const std::string& path, const std::vector<QAPair>& pairs);

} // namespace esgqa::qa
