#include "esgqa/replay_cache.hpp"

#include <mutex>

#include "esgqa/errors.hpp"
#include "esgqa/util.hpp"

namespace esgqa::llm {

CacheMode cache_mode_from_string(std::string_view s)
{
    if (s == "readwrite" || s == "record") return CacheMode::ReadWrite;
    if (s == "replay" || s == "replay-only") return CacheMode::ReplayOnly;
    throw PreconditionError("unknown cache mode: " + std::string(s));
}

ReplayCache::ReplayCache(std::shared_ptr<Backend> inner, std::filesystem::path dir, CacheMode mode,
                         std::string embedding_model)
    : inner_(std::move(inner)), dir_(std::move(dir)), mode_(mode), embedding_model_(std::move(embedding_model))
{
    if (!inner_ && mode_ == CacheMode::ReadWrite)
        throw PreconditionError("a recording cache needs an inner backend");
    if (embedding_model_.empty()) embedding_model_ = inner_ ? inner_->embedding_model() : "default";
    std::filesystem::create_directories(dir_);
}

std::optional<json> ReplayCache::lookup(const std::string& digest)
{
    {
        std::shared_lock lock(mu_);
        if (auto it = memory_.find(digest); it != memory_.end()) return it->second;
    }
    const auto path = dir_ / (digest + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    json record = json::parse(read_file(path));
    std::unique_lock lock(mu_);
    memory_.emplace(digest, record);
    return record;
}

void ReplayCache::store(const std::string& digest, const json& record)
{
    std::unique_lock lock(mu_);
    memory_[digest] = record;
    write_file(dir_ / (digest + ".json"), record.dump(2));
}

ProviderResponse ReplayCache::send(const ProviderRequest& req)
{
    const auto key = CacheKey::of(req);
    if (auto rec = lookup(key.digest)) {
        ++hits_;
        return ProviderResponse::from_json(rec->at("response"));
    }
    ++misses_;
    if (mode_ == CacheMode::ReplayOnly) throw CacheMiss("no recorded exchange for request " + key.digest);
    ++live_;
    ProviderResponse resp = inner_->send(req);
    store(key.digest, {{"request", req.to_json()}, {"response", resp.to_json()}});
    return resp;
}

std::vector<Embedding> ReplayCache::embed(const std::vector<std::string>& texts)
{
    std::vector<Embedding> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<std::string> keys(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        keys[i] = CacheKey::of_embedding(embedding_model_, texts[i]).digest;
        if (auto rec = lookup(keys[i])) {
            ++hits_;
            out[i] = rec->at("response").at("embedding").get<Embedding>();
        } else {
            ++misses_;
            missing.push_back(i);
        }
    }
    if (missing.empty()) return out;
    if (mode_ == CacheMode::ReplayOnly) throw CacheMiss("no recorded embedding for " + keys[missing.front()]);

    std::vector<std::string> batch;
    batch.reserve(missing.size());
    for (auto i : missing) batch.push_back(texts[i]);
    ++live_;
    auto fresh = inner_->embed(batch);
    if (fresh.size() != batch.size()) throw DimensionMismatch("embedding count mismatch from inner backend");
    for (std::size_t j = 0; j < missing.size(); ++j) {
        const auto i = missing[j];
        out[i] = fresh[j];
        store(keys[i], {{"request", {{"embed", texts[i]}, {"model", embedding_model_}}},
                        {"response", {{"embedding", fresh[j]}}}});
    }
    return out;
}

bool ReplayCache::supports_images(const std::string& model_id) const
{
    return inner_ ? inner_->supports_images(model_id) : true;
}

CacheStats ReplayCache::stats() const
{
    return {hits_.load(), misses_.load(), live_.load()};
}

} // namespace esgqa::llm
