#include "esgqa/llm_provider.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <openssl/evp.h>

#include "esgqa/errors.hpp"
#include "esgqa/json_schema.hpp"
#include "esgqa/util.hpp"

namespace esgqa::llm {

namespace {

std::string base64_encode(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.empty()) return {};
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

json part_to_json(const ContentPart& p)
{
    if (p.kind == ContentPart::Kind::Text) return {{"type", "text"}, {"text", p.text}};
    return {{"type", "image"}, {"media_type", p.media_type}, {"data", p.data_base64}};
}

ContentPart part_from_json(const json& j)
{
    ContentPart p;
    if (j.at("type") == "image") {
        p.kind = ContentPart::Kind::Image;
        p.media_type = j.at("media_type").get<std::string>();
        p.data_base64 = j.at("data").get<std::string>();
    } else {
        p.text = j.at("text").get<std::string>();
    }
    return p;
}

json canonical_request(const ProviderRequest& req)
{
    json j = req.to_json();
    j.erase("max_output");
    return j;
}

} // namespace

std::string_view to_string(Role role)
{
    switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s)
{
    if (s == "system") return Role::System;
    if (s == "assistant") return Role::Assistant;
    if (s == "user") return Role::User;
    throw PreconditionError("unknown role: " + std::string(s));
}

ContentPart ContentPart::from_text(std::string t)
{
    ContentPart p;
    p.text = std::move(t);
    return p;
}

ContentPart ContentPart::from_image(const std::vector<std::uint8_t>& bytes, std::string media_type)
{
    ContentPart p;
    p.kind = Kind::Image;
    p.media_type = std::move(media_type);
    p.data_base64 = base64_encode(bytes);
    return p;
}

Message Message::system(std::string text) { return {Role::System, {ContentPart::from_text(std::move(text))}}; }
Message Message::user(std::string text) { return {Role::User, {ContentPart::from_text(std::move(text))}}; }
Message Message::assistant(std::string text)
{
    return {Role::Assistant, {ContentPart::from_text(std::move(text))}};
}

std::string Message::text() const
{
    std::string out;
    for (const auto& p : parts) {
        if (p.kind == ContentPart::Kind::Text) out += p.text;
    }
    return out;
}

bool Message::has_image() const
{
    return std::any_of(parts.begin(), parts.end(),
                       [](const ContentPart& p) { return p.kind == ContentPart::Kind::Image; });
}

void ProviderRequest::validate(bool model_is_multimodal) const
{
    if (model_id.empty()) throw PreconditionError("request has no model id");
    if (messages.empty()) throw PreconditionError("request has no messages");
    if (!(temperature >= 0.0 && temperature <= 1.0))
        throw PreconditionError("temperature outside [0,1]");
    if (max_output <= 0) throw PreconditionError("max_output must be positive");
    for (const auto& m : messages) {
        if (m.has_image() && !model_is_multimodal)
            throw PreconditionError("image content sent to non-multimodal model " + model_id);
    }
}

json ProviderRequest::to_json() const
{
    json msgs = json::array();
    for (const auto& m : messages) {
        json parts = json::array();
        for (const auto& p : m.parts) parts.push_back(part_to_json(p));
        msgs.push_back({{"role", to_string(m.role)}, {"content", parts}});
    }
    json j = {{"model", model_id}, {"messages", msgs}, {"temperature", temperature}, {"max_output", max_output}};
    if (output_schema) {
        j["output_schema"] = {{"name", output_schema->name},
                              {"description", output_schema->description},
                              {"schema", output_schema->schema}};
    }
    return j;
}

ProviderRequest ProviderRequest::from_json(const json& j)
{
    ProviderRequest r;
    r.model_id = j.at("model").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.max_output = j.value("max_output", 4096);
    for (const auto& m : j.at("messages")) {
        Message msg;
        msg.role = role_from_string(m.at("role").get<std::string>());
        for (const auto& p : m.at("content")) msg.parts.push_back(part_from_json(p));
        r.messages.push_back(std::move(msg));
    }
    if (auto it = j.find("output_schema"); it != j.end()) {
        r.output_schema = OutputSchema{it->at("name").get<std::string>(), it->value("description", ""),
                                       it->at("schema")};
    }
    return r;
}

json ProviderResponse::to_json() const
{
    json j = {{"text", text}, {"usage", {{"input_units", usage.input_units}, {"output_units", usage.output_units}}}};
    if (structured) j["structured"] = *structured;
    return j;
}

ProviderResponse ProviderResponse::from_json(const json& j)
{
    ProviderResponse r;
    r.text = j.value("text", "");
    if (auto it = j.find("structured"); it != j.end()) r.structured = *it;
    if (auto it = j.find("usage"); it != j.end()) {
        r.usage.input_units = it->value("input_units", 0ULL);
        r.usage.output_units = it->value("output_units", 0ULL);
    }
    return r;
}

CacheKey CacheKey::of(const ProviderRequest& req)
{
    return {sha256_hex(canonical_request(req).dump())};
}

CacheKey CacheKey::of_embedding(std::string_view model, std::string_view text)
{
    const json j = {{"embed", std::string(text)}, {"model", std::string(model)}};
    return {sha256_hex(j.dump())};
}

Provider::Provider(std::shared_ptr<Backend> backend, RetryPolicy retry, Sleeper sleeper)
    : backend_(std::move(backend)), retry_(retry), sleeper_(std::move(sleeper))
{
    if (!backend_) throw PreconditionError("provider needs a backend");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ProviderResponse Provider::send_with_retry(const ProviderRequest& req) const
{
    auto backoff = retry_.initial_backoff;
    const int attempts = std::max(1, retry_.max_attempts);
    for (int attempt = 1;; ++attempt) {
        try {
            return backend_->send(req);
        } catch (const TransportError&) {
            if (attempt >= attempts) throw;
        } catch (const RateLimited&) {
            if (attempt >= attempts) throw;
        }
        sleeper_(backoff);
        const auto next = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * retry_.multiplier));
        backoff = std::min(next, retry_.max_backoff);
    }
}

ProviderResponse Provider::complete(const ProviderRequest& req) const
{
    req.validate(backend_->supports_images(req.model_id));
    ProviderResponse resp = send_with_retry(req);
    if (!req.output_schema) {
        resp.structured.reset();
        return resp;
    }

    auto problem = [&](const ProviderResponse& r) -> std::optional<std::string> {
        if (!r.structured) return std::string("no structured output returned");
        return validate_schema(req.output_schema->schema, *r.structured);
    };

    auto err = problem(resp);
    if (!err) return resp;

    // One repair re-prompt.
    ProviderRequest repair = req;
    repair.messages.push_back(Message::assistant(resp.structured ? resp.structured->dump() : resp.text));
    repair.messages.push_back(Message::user(
        "Your previous output did not match the required schema '" + req.output_schema->name +
        "' (" + *err + "). Return output that validates against the schema."));
    ProviderResponse fixed = send_with_retry(repair);
    if (auto err2 = problem(fixed)) {
        throw SchemaViolation("schema '" + req.output_schema->name + "' violated after repair: " + *err2);
    }
    fixed.usage.input_units += resp.usage.input_units;
    fixed.usage.output_units += resp.usage.output_units;
    return fixed;
}

json Provider::complete_structured(const ProviderRequest& req) const
{
    if (!req.output_schema) throw PreconditionError("complete_structured needs an output schema");
    return *complete(req).structured;
}

std::string Provider::complete_text(const ProviderRequest& req) const
{
    return complete(req).text;
}

std::vector<Embedding> Provider::embed(const std::vector<std::string>& texts) const
{
    if (texts.empty()) throw PreconditionError("embed needs at least one text");
    for (const auto& t : texts) {
        if (t.empty()) throw PreconditionError("embed received an empty text");
    }
    std::vector<Embedding> out;
    const int attempts = std::max(1, retry_.max_attempts);
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            out = backend_->embed(texts);
            break;
        } catch (const TransportError&) {
            if (attempt >= attempts) throw;
        }
        sleeper_(backoff);
        backoff = std::min(std::chrono::milliseconds(static_cast<long long>(
                               static_cast<double>(backoff.count()) * retry_.multiplier)),
                           retry_.max_backoff);
    }
    if (out.size() != texts.size())
        throw DimensionMismatch("embedding count does not match input count");
    for (const auto& v : out) {
        if (v.empty() || v.size() != out.front().size())
            throw DimensionMismatch("provider returned inconsistent embedding dimensions");
    }
    return out;
}

Embedding Provider::embed_one(const std::string& text) const
{
    return embed({text}).front();
}

double cosine(const Embedding& a, const Embedding& b)
{
    if (a.size() != b.size()) throw DimensionMismatch("cosine of vectors with different dimensions");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace esgqa::llm
