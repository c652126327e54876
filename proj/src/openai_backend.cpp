#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "esgqa/openai_backend.hpp"

#include <httplib.h>

#include "esgqa/errors.hpp"

namespace esgqa::llm {

OpenAIBackend::OpenAIBackend(Options opts) : opts_(std::move(opts))
{
    if (opts_.api_key.empty()) throw PreconditionError("OpenAI backend needs an API key");
}

json OpenAIBackend::chat_body(const ProviderRequest& req)
{
    json messages = json::array();
    for (const auto& m : req.messages) {
        if (!m.has_image()) {
            messages.push_back({{"role", to_string(m.role)}, {"content", m.text()}});
            continue;
        }
        json parts = json::array();
        for (const auto& p : m.parts) {
            if (p.kind == ContentPart::Kind::Text) {
                parts.push_back({{"type", "text"}, {"text", p.text}});
            } else {
                parts.push_back({{"type", "image_url"},
                                 {"image_url", {{"url", "data:" + p.media_type + ";base64," + p.data_base64}}}});
            }
        }
        messages.push_back({{"role", to_string(m.role)}, {"content", parts}});
    }
    json body = {{"model", req.model_id},
                 {"messages", messages},
                 {"temperature", req.temperature},
                 {"max_tokens", req.max_output}};
    if (req.output_schema) {
        body["response_format"] = {{"type", "json_schema"},
                                   {"json_schema",
                                    {{"name", req.output_schema->name},
                                     {"description", req.output_schema->description},
                                     {"schema", req.output_schema->schema}}}};
    }
    return body;
}

json OpenAIBackend::post(const std::string& path, const json& body) const
{
    httplib::Client cli(opts_.base_url);
    cli.set_connection_timeout(opts_.timeout_seconds, 0);
    cli.set_read_timeout(opts_.timeout_seconds, 0);
    cli.set_bearer_token_auth(opts_.api_key);
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) throw TransportError("request to " + opts_.base_url + path + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429) throw RateLimited("rate limited by " + opts_.base_url);
    if (res->status >= 500) throw TransportError("server error " + std::to_string(res->status));
    if (res->status >= 400) throw ProviderError("HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw TransportError(std::string("malformed response body: ") + e.what());
    }
}

ProviderResponse OpenAIBackend::send(const ProviderRequest& req)
{
    const json reply = post("/v1/chat/completions", chat_body(req));
    ProviderResponse resp;
    const auto& choice = reply.at("choices").at(0).at("message");
    resp.text = choice.value("content", "");
    if (req.output_schema) {
        try {
            resp.structured = json::parse(resp.text);
        } catch (const json::exception&) {
            // Left empty; Provider treats a missing value as a schema violation.
        }
    }
    if (auto u = reply.find("usage"); u != reply.end()) {
        resp.usage.input_units = u->value("prompt_tokens", 0ULL);
        resp.usage.output_units = u->value("completion_tokens", 0ULL);
    }
    return resp;
}

std::vector<Embedding> OpenAIBackend::embed(const std::vector<std::string>& texts)
{
    const json reply = post("/v1/embeddings", {{"model", opts_.embedding_model}, {"input", texts}});
    std::vector<Embedding> out(texts.size());
    for (const auto& item : reply.at("data")) {
        const auto idx = item.at("index").get<std::size_t>();
        if (idx >= out.size()) throw DimensionMismatch("embedding index out of range");
        out[idx] = item.at("embedding").get<Embedding>();
    }
    return out;
}

bool OpenAIBackend::supports_images(const std::string& model_id) const
{
    return opts_.multimodal_models.empty() || opts_.multimodal_models.count(model_id) > 0;
}

} // namespace esgqa::llm
