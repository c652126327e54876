#pragma once

// Scripted provider pieces shared by the pipeline unit tests and the
// acceptance run.

#include <set>
#include <string>
#include <vector>

#include "generation_loop_fixture.hpp"
#include "esgqa/chunking.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/util.hpp"

namespace testing_support {

using json = nlohmann::json;
using esgqa::fnv1a64;
using esgqa::icontains;
using esgqa::to_lower;
namespace llm = esgqa::llm;
namespace ingest = esgqa::ingest;
namespace chunking = esgqa::chunking;

inline llm::Embedding bag_of_words(const std::string& text)
{
    llm::Embedding v(64, 0.0);
    for (const auto& t : chunking::tokenize(text)) v[fnv1a64(to_lower(t.text)) % 64] += 1.0;
    v[63] += 0.01;
    return v;
}

inline bool has_schema(const llm::ProviderRequest& r, const char* name)
{
    return r.output_schema && r.output_schema->name == name;
}

inline void script_gate(llm::MockBackend& mock)
{
    mock.on(
        [](const llm::ProviderRequest& r) { return has_schema(r, "relevance_check"); },
        [](const llm::ProviderRequest& r) {
            const bool off = icontains(llm::request_text(r), "pasta");
            llm::ProviderResponse resp;
            resp.structured = json{{"relevant", !off}, {"reason", off ? "cooking" : "reporting"}};
            return resp;
        });
}

inline std::size_t generation_calls(const llm::MockBackend& mock)
{
    std::size_t n = 0;
    for (const auto& h : mock.history()) n += !h.output_schema && llm::request_text(h).find("Context:\n") != std::string::npos;
    return n;
}

inline std::vector<ingest::IndustryDoc> transport_corpus()
{
    std::vector<ingest::IndustryDoc> docs;
    const std::vector<std::pair<std::string, std::string>> ids = {
        {"b60-air-freight-and-logistics", "Air Freight & Logistics"}, {"b61-airlines", "Airlines"},
        {"b62-auto-parts", "Auto Parts"}, {"b63-automobiles", "Automobiles"},
        {"b64-car-rental-and-leasing", "Car Rental & Leasing"}, {"b19-insurance", "Insurance"}};
    for (const auto& [id, name] : ids) {
        std::string md = "# " + name + "\n\n";
        for (int s = 0; s < 4; ++s)
            md += "## Topic " + std::to_string(s) + "\n\n" + name + " fuel fleet emissions activity metric " +
                  std::to_string(s) + " vehicles passengers.\n\n| Metric | Quantitative | " + name + "-" +
                  std::to_string(s) + " |\n\n";
        docs.push_back(fixture_doc(id, name, md));
    }
    return docs;
}

} // namespace testing_support
