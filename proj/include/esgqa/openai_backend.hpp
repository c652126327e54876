#pragma once

#include <set>
#include <string>

#include "esgqa/llm_provider.hpp"

namespace esgqa::llm {

/// Chat-completions / embeddings client for OpenAI-compatible HTTP APIs.
/// Structured output is requested with `response_format: json_schema`.
class OpenAIBackend : public Backend {
public:
    struct Options {
        std::string base_url = "https://api.openai.com";
        std::string api_key;
        std::string embedding_model = "text-embedding-3-small";
        std::set<std::string> multimodal_models;
        int timeout_seconds = 120;
    };

    explicit OpenAIBackend(Options opts);

    ProviderResponse send(const ProviderRequest& req) override;
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
    bool supports_images(const std::string& model_id) const override;
    std::string embedding_model() const override { return opts_.embedding_model; }

    /// Request body sent for `req`; exposed for tests.
    static json chat_body(const ProviderRequest& req);

private:
    json post(const std::string& path, const json& body) const;

    Options opts_;
};

} // namespace esgqa::llm
