#include "esgqa/mock_backend.hpp"

#include <cmath>
#include <random>

#include "esgqa/errors.hpp"
#include "esgqa/json_schema.hpp"
#include "esgqa/util.hpp"

namespace esgqa::llm {

std::string request_text(const ProviderRequest& req)
{
    std::string out;
    for (const auto& m : req.messages) {
        out += m.text();
        out += '\n';
    }
    return out;
}

std::string last_user_text(const ProviderRequest& req)
{
    for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
        if (it->role == Role::User) return it->text();
    }
    return {};
}

MockBackend::MockBackend() : MockBackend(Options{}) {}

MockBackend::MockBackend(Options opts) : opts_(std::move(opts)) {}

MockBackend& MockBackend::on(Matcher match, Responder respond, int times)
{
    std::lock_guard lock(mu_);
    rules_.push_back({std::move(match), std::move(respond), times});
    return *this;
}

MockBackend& MockBackend::on_text(std::string needle, std::string reply, int times)
{
    return on([needle](const ProviderRequest& r) {
                  return !r.output_schema && request_text(r).find(needle) != std::string::npos;
              },
              [reply](const ProviderRequest&) {
                  ProviderResponse resp;
                  resp.text = reply;
                  return resp;
              },
              times);
}

MockBackend& MockBackend::on_structured(std::string schema_name, std::string needle, json value, int times)
{
    return on(
        [schema_name, needle](const ProviderRequest& r) {
            return r.output_schema && r.output_schema->name == schema_name &&
                   (needle.empty() || request_text(r).find(needle) != std::string::npos);
        },
        [value](const ProviderRequest&) {
            ProviderResponse resp;
            resp.structured = value;
            resp.text = value.dump();
            return resp;
        },
        times);
}

void MockBackend::set_embedder(EmbedFn fn)
{
    std::lock_guard lock(mu_);
    embedder_ = std::move(fn);
}

void MockBackend::fail_next(int n)
{
    std::lock_guard lock(mu_);
    fail_transport_ = n;
}

void MockBackend::rate_limit_next(int n)
{
    std::lock_guard lock(mu_);
    fail_rate_ = n;
}

ProviderResponse MockBackend::send(const ProviderRequest& req)
{
    Responder chosen;
    {
        std::lock_guard lock(mu_);
        history_.push_back(req);
        if (fail_transport_ > 0) {
            --fail_transport_;
            throw TransportError("mock transport failure");
        }
        if (fail_rate_ > 0) {
            --fail_rate_;
            throw RateLimited("mock rate limit");
        }
        for (auto& rule : rules_) {
            if (rule.remaining == 0) continue;
            if (!rule.match(req)) continue;
            if (rule.remaining > 0) --rule.remaining;
            chosen = rule.respond;
            break;
        }
    }

    ProviderResponse resp;
    if (chosen) {
        resp = chosen(req);
    } else {
        const auto key = CacheKey::of(req);
        const std::uint64_t seed = fnv1a64(key.digest) ^ opts_.seed;
        if (req.output_schema) {
            resp.structured = synthesize_instance(req.output_schema->schema, seed);
            resp.text = resp.structured->dump();
        } else {
            resp.text = "mock response " + key.digest.substr(0, 16);
        }
    }
    resp.usage.input_units = request_text(req).size();
    resp.usage.output_units = resp.text.size();
    return resp;
}

std::vector<Embedding> MockBackend::embed(const std::vector<std::string>& texts)
{
    EmbedFn fn;
    {
        std::lock_guard lock(mu_);
        ++embed_calls_;
        fn = embedder_;
    }
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        out.push_back(fn ? fn(t) : hash_embedding(t, opts_.dimension, opts_.seed));
    }
    return out;
}

bool MockBackend::supports_images(const std::string& model_id) const
{
    return opts_.multimodal_models.empty() || opts_.multimodal_models.count(model_id) > 0;
}

std::size_t MockBackend::calls() const
{
    std::lock_guard lock(mu_);
    return history_.size();
}

std::size_t MockBackend::embed_calls() const
{
    std::lock_guard lock(mu_);
    return embed_calls_;
}

std::vector<ProviderRequest> MockBackend::history() const
{
    std::lock_guard lock(mu_);
    return history_;
}

Embedding MockBackend::hash_embedding(std::string_view text, std::size_t dimension, std::uint64_t seed)
{
    std::mt19937_64 rng(fnv1a64(text) ^ seed);
    std::vector<double> v(dimension);
    double norm = 0.0;
    for (auto& x : v) {
        x = standard_normal(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    Embedding out(dimension);
    for (std::size_t i = 0; i < dimension; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

} // namespace esgqa::llm
