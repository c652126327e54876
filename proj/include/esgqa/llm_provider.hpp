#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace esgqa::llm {

using json = nlohmann::json;
using Embedding = std::vector<float>;

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct ContentPart {
    enum class Kind { Text, Image };

    Kind kind = Kind::Text;
    std::string text;        // Text parts
    std::string media_type;  // Image parts, e.g. "image/png"
    std::string data_base64; // Image parts

    static ContentPart from_text(std::string t);
    static ContentPart from_image(const std::vector<std::uint8_t>& bytes,
                                  std::string media_type = "image/png");
};

struct Message {
    Role role = Role::User;
    std::vector<ContentPart> parts;

    static Message system(std::string text);
    static Message user(std::string text);
    static Message assistant(std::string text);

    /// Concatenation of the text parts.
    std::string text() const;
    bool has_image() const;
};

/// A tool-style output contract: the model must return JSON that
/// validates against `schema`.
struct OutputSchema {
    std::string name;
    std::string description;
    json schema;
};

struct ProviderRequest {
    std::string model_id;
    std::vector<Message> messages;
    double temperature = 0.0;
    std::optional<OutputSchema> output_schema;
    int max_output = 4096;

    /// Throws PreconditionError when an invariant is broken.
    void validate(bool model_is_multimodal) const;
    json to_json() const;
    static ProviderRequest from_json(const json& j);
};

struct Usage {
    std::uint64_t input_units = 0;
    std::uint64_t output_units = 0;
};

struct ProviderResponse {
    std::string text;
    std::optional<json> structured;
    Usage usage;

    json to_json() const;
    static ProviderResponse from_json(const json& j);
};

/// Content address of a request: SHA-256 over the canonical JSON of
/// (model_id, messages, temperature, schema). Object keys serialize in
/// sorted order, so key order never affects the digest while message order
/// does.
struct CacheKey {
    std::string digest;

    static CacheKey of(const ProviderRequest& req);
    static CacheKey of_embedding(std::string_view model, std::string_view text);

    friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

/// A concrete model endpoint. Implementations report failures with
/// TransportError / RateLimited / ProviderError.
class Backend {
public:
    virtual ~Backend() = default;

    virtual ProviderResponse send(const ProviderRequest& req) = 0;
    virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
    virtual bool supports_images(const std::string& model_id) const = 0;
    virtual std::string embedding_model() const = 0;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{8000};
};

/// Front door for every model call. Adds request validation, retries with
/// exponential backoff on transport failures, schema validation of
/// structured output with one repair re-prompt, and embedding dimension
/// checks. Shareable across threads.
class Provider {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit Provider(std::shared_ptr<Backend> backend, RetryPolicy retry = {}, Sleeper sleeper = {});

    ProviderResponse complete(const ProviderRequest& req) const;

    /// complete() for requests carrying an output schema; returns the
    /// validated structured value.
    json complete_structured(const ProviderRequest& req) const;
    std::string complete_text(const ProviderRequest& req) const;

    std::vector<Embedding> embed(const std::vector<std::string>& texts) const;
    Embedding embed_one(const std::string& text) const;

    Backend& backend() const { return *backend_; }

private:
    ProviderResponse send_with_retry(const ProviderRequest& req) const;

    std::shared_ptr<Backend> backend_;
    RetryPolicy retry_;
    Sleeper sleeper_;
};

/// Cosine similarity of two equal-length vectors (0 when either is zero).
double cosine(const Embedding& a, const Embedding& b);

} // namespace esgqa::llm
