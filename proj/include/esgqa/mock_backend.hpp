#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "esgqa/llm_provider.hpp"

namespace esgqa::llm {

/// Deterministic in-process backend. Scripted rules answer matching
/// requests; anything unmatched gets a reproducible default derived from
/// the request's cache key (structured requests get a schema-valid
/// synthetic instance).
class MockBackend : public Backend {
public:
    using Matcher = std::function<bool(const ProviderRequest&)>;
    using Responder = std::function<ProviderResponse(const ProviderRequest&)>;
    using EmbedFn = std::function<Embedding(const std::string&)>;

    struct Options {
        std::size_t dimension = 64;
        std::uint64_t seed = 0;
        /// Models accepting image parts; empty means every model does.
        std::set<std::string> multimodal_models;
    };

    MockBackend();
    explicit MockBackend(Options opts);

    /// Adds a rule. `times` < 0 means unlimited; rules are tried in
    /// insertion order and exhausted rules are skipped.
    MockBackend& on(Matcher match, Responder respond, int times = -1);
    /// Text reply when any message contains `needle`.
    MockBackend& on_text(std::string needle, std::string reply, int times = -1);
    /// Structured reply for schema `schema_name` when any message contains
    /// `needle` (empty needle matches every request with that schema).
    MockBackend& on_structured(std::string schema_name, std::string needle, json value, int times = -1);

    void set_embedder(EmbedFn fn);
    /// The next `n` send() calls throw TransportError.
    void fail_next(int n);
    /// The next `n` send() calls throw RateLimited.
    void rate_limit_next(int n);

    ProviderResponse send(const ProviderRequest& req) override;
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
    bool supports_images(const std::string& model_id) const override;
    std::string embedding_model() const override { return "mock-embedding"; }

    std::size_t calls() const;
    std::size_t embed_calls() const;
    std::vector<ProviderRequest> history() const;

    /// Seeded standard-normal vector, normalized to unit length.
    static Embedding hash_embedding(std::string_view text, std::size_t dimension, std::uint64_t seed = 0);

private:
    struct Rule {
        Matcher match;
        Responder respond;
        int remaining;
    };

    Options opts_;
    mutable std::mutex mu_;
    std::vector<Rule> rules_;
    EmbedFn embedder_;
    int fail_transport_ = 0;
    int fail_rate_ = 0;
    std::size_t embed_calls_ = 0;
    std::vector<ProviderRequest> history_;
};

/// Concatenated text of every message in the request.
std::string request_text(const ProviderRequest& req);
/// Text of the final user message.
std::string last_user_text(const ProviderRequest& req);

} // namespace esgqa::llm
