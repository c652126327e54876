#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "esgqa/llm_provider.hpp"

namespace esgqa::llm {

enum class CacheMode {
    ReadWrite,  ///< replay hits, forward misses to the inner backend and record them
    ReplayOnly, ///< replay hits, misses raise CacheMiss
};

CacheMode cache_mode_from_string(std::string_view s);

struct CacheStats {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t live_calls = 0;
};

/// Content-addressed record/replay store wrapping another backend.
/// Layout: one `<digest>.json` file per CacheKey holding
/// {"request": ..., "response": ...}. Concurrent reads share a lock;
/// writes are serialized.
class ReplayCache : public Backend {
public:
    ReplayCache(std::shared_ptr<Backend> inner, std::filesystem::path dir, CacheMode mode,
                std::string embedding_model = {});

    ProviderResponse send(const ProviderRequest& req) override;
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
    bool supports_images(const std::string& model_id) const override;
    std::string embedding_model() const override { return embedding_model_; }

    CacheStats stats() const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::optional<json> lookup(const std::string& digest);
    void store(const std::string& digest, const json& record);

    std::shared_ptr<Backend> inner_;
    std::filesystem::path dir_;
    CacheMode mode_;
    std::string embedding_model_;

    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, json> memory_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> live_{0};
};

} // namespace esgqa::llm
