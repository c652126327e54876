#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "esgqa/errors.hpp"
#include "esgqa/json_schema.hpp"
#include "esgqa/mock_backend.hpp"
#include "esgqa/openai_backend.hpp"
#include "esgqa/replay_cache.hpp"
#include "test_support.hpp"

using namespace esgqa;
using namespace esgqa::llm;

namespace {

ProviderRequest simple_request(std::string text, double temperature = 0.0)
{
    ProviderRequest r;
    r.model_id = "mock-model";
    r.messages = {Message::system("sys"), Message::user(std::move(text))};
    r.temperature = temperature;
    return r;
}

const json kScoreSchema = json::parse(R"({
  "type": "object",
  "properties": {"score": {"type": "integer", "minimum": 1, "maximum": 10},
                 "label": {"type": "string"}},
  "required": ["score", "label"]
})");

Provider instant(std::shared_ptr<Backend> b, int attempts = 4)
{
    RetryPolicy p;
    p.max_attempts = attempts;
    return Provider(std::move(b), p, [](std::chrono::milliseconds) {});
}

} // namespace

TEST(ProviderRequest, RejectsInvalidRequests)
{
    auto mock = std::make_shared<MockBackend>(MockBackend::Options{64, 0, {"vision"}});
    auto provider = instant(mock);

    ProviderRequest empty;
    empty.model_id = "m";
    EXPECT_THROW(provider.complete(empty), PreconditionError);

    auto hot = simple_request("x", 1.5);
    EXPECT_THROW(provider.complete(hot), PreconditionError);

    ProviderRequest img = simple_request("look");
    img.messages.back().parts.push_back(ContentPart::from_image({0x89, 'P', 'N', 'G'}));
    EXPECT_THROW(provider.complete(img), PreconditionError);
    img.model_id = "vision";
    EXPECT_NO_THROW(provider.complete(img));
}

TEST(MockBackend, SameRequestTwiceIsByteIdentical)
{
    auto provider = instant(std::make_shared<MockBackend>());
    auto req = simple_request("hello");
    EXPECT_EQ(provider.complete(req).to_json().dump(), provider.complete(req).to_json().dump());

    req.output_schema = OutputSchema{"score", "", kScoreSchema};
    const auto a = provider.complete(req);
    const auto b = provider.complete(req);
    ASSERT_TRUE(a.structured);
    EXPECT_EQ(a.structured->dump(), b.structured->dump());
    EXPECT_FALSE(validate_schema(kScoreSchema, *a.structured).has_value());
}

TEST(MockBackend, ScriptedRulesMatchInOrderAndExhaust)
{
    auto mock = std::make_shared<MockBackend>();
    mock->on_text("ping", "pong-1", 1).on_text("ping", "pong-2");
    auto provider = instant(mock);
    EXPECT_EQ(provider.complete_text(simple_request("ping")), "pong-1");
    EXPECT_EQ(provider.complete_text(simple_request("ping")), "pong-2");
    EXPECT_EQ(provider.complete_text(simple_request("ping")), "pong-2");
}

TEST(CacheKey, CanonicalizationIsKeyOrderStableButMessageOrderSensitive)
{
    auto a = simple_request("q");
    a.output_schema = OutputSchema{"s", "d", json::parse(R"({"type":"object","properties":{"x":{"type":"string"},"y":{"type":"integer"}}})")};
    auto b = a;
    b.output_schema->schema = json::parse(R"({"properties":{"y":{"type":"integer"},"x":{"type":"string"}},"type":"object"})");
    EXPECT_EQ(CacheKey::of(a), CacheKey::of(b));

    auto swapped = a;
    std::swap(swapped.messages[0], swapped.messages[1]);
    EXPECT_NE(CacheKey::of(a), CacheKey::of(swapped));

    auto other_model = a;
    other_model.model_id = "other";
    auto other_temp = a;
    other_temp.temperature = 0.5;
    auto other_text = a;
    other_text.messages[1] = Message::user("q2");
    auto no_schema = a;
    no_schema.output_schema.reset();
    for (const auto& variant : {other_model, other_temp, other_text, no_schema}) {
        EXPECT_NE(CacheKey::of(a), CacheKey::of(variant));
    }
    EXPECT_EQ(CacheKey::of(a).digest.size(), 64U);
}

TEST(ProviderRetry, RetriesTransportFailuresWithExponentialBackoff)
{
    auto mock = std::make_shared<MockBackend>();
    mock->on_text("hi", "ok");
    std::vector<long long> waits;
    RetryPolicy policy;
    policy.max_attempts = 4;
    policy.initial_backoff = std::chrono::milliseconds(100);
    policy.max_backoff = std::chrono::milliseconds(250);
    Provider provider(mock, policy, [&](std::chrono::milliseconds d) { waits.push_back(d.count()); });

    mock->fail_next(3);
    EXPECT_EQ(provider.complete_text(simple_request("hi")), "ok");
    EXPECT_EQ(waits, (std::vector<long long>{100, 200, 250}));

    mock->fail_next(4);
    EXPECT_THROW(provider.complete(simple_request("hi")), TransportError);

    mock->fail_next(0);
    mock->rate_limit_next(10);
    EXPECT_THROW(provider.complete(simple_request("hi")), RateLimited);
}

TEST(ProviderSchema, OneRepairRepromptThenViolation)
{
    auto mock = std::make_shared<MockBackend>();
    mock->on_structured("score", "", json{{"score", "nine"}, {"label", "x"}}, 1);
    mock->on_structured("score", "", json{{"score", 9}, {"label", "x"}}, 1);
    auto provider = instant(mock);

    auto req = simple_request("rate it");
    req.output_schema = OutputSchema{"score", "", kScoreSchema};
    EXPECT_EQ(provider.complete_structured(req).at("score"), 9);
    EXPECT_EQ(mock->calls(), 2U);
    EXPECT_NE(request_text(mock->history().back()).find("did not match"), std::string::npos);

    mock->on_structured("score", "", json{{"score", 11}, {"label", "x"}});
    EXPECT_THROW(provider.complete(req), SchemaViolation);
    EXPECT_EQ(mock->calls(), 4U);
}

TEST(ProviderSchema, StructuredAbsentWithoutSchema)
{
    auto mock = std::make_shared<MockBackend>();
    mock->on([](const ProviderRequest&) { return true; },
             [](const ProviderRequest&) {
                 ProviderResponse r;
                 r.text = "{}";
                 r.structured = json::object();
                 return r;
             });
    auto provider = instant(mock);
    EXPECT_FALSE(provider.complete(simple_request("x")).structured.has_value());
}

TEST(Embeddings, UnitNormDeterministicAndDistinct)
{
    auto provider = instant(std::make_shared<MockBackend>());
    const auto one = provider.embed({"a"});
    ASSERT_EQ(one.size(), 1U);
    ASSERT_EQ(one[0].size(), 64U);
    double norm = 0;
    for (float x : one[0]) norm += static_cast<double>(x) * x;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
    EXPECT_EQ(provider.embed_one("same"), provider.embed_one("same"));

    std::mt19937_64 rng(7);
    std::vector<std::string> texts;
    for (int i = 0; i < 100; ++i) texts.push_back(testing_support::random_ascii(rng, 1, 20) + "#" + std::to_string(i));
    const auto vecs = provider.embed(texts);
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        for (std::size_t j = i + 1; j < vecs.size(); ++j) EXPECT_LT(cosine(vecs[i], vecs[j]), 1.0);
    }
}

TEST(Embeddings, RejectsEmptyInputAndInconsistentDimensions)
{
    auto mock = std::make_shared<MockBackend>();
    auto provider = instant(mock);
    EXPECT_THROW(provider.embed({}), PreconditionError);
    EXPECT_THROW(provider.embed({"ok", ""}), PreconditionError);
    mock->set_embedder([](const std::string& t) { return Embedding(t.size(), 1.0f); });
    EXPECT_THROW(provider.embed({"a", "bb"}), DimensionMismatch);
}

TEST(ReplayCache, PrimedExchangeReplaysOfflineWithZeroLiveCalls)
{
    testing_support::TempDir tmp;
    auto live = std::make_shared<MockBackend>();
    live->on_text("question", "recorded answer");
    {
        auto recorder = std::make_shared<ReplayCache>(live, tmp.path(), CacheMode::ReadWrite);
        EXPECT_EQ(instant(recorder).complete_text(simple_request("question")), "recorded answer");
        EXPECT_EQ(recorder->stats().live_calls, 1U);
    }
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(tmp.path()), {}), 1);

    auto offline = std::make_shared<ReplayCache>(nullptr, tmp.path(), CacheMode::ReplayOnly);
    auto provider = instant(offline);
    EXPECT_EQ(provider.complete_text(simple_request("question")), "recorded answer");
    EXPECT_EQ(offline->stats().hits, 1U);
    EXPECT_EQ(offline->stats().live_calls, 0U);
    EXPECT_EQ(live->calls(), 1U);
    EXPECT_THROW(provider.complete(simple_request("never recorded")), CacheMiss);
}

TEST(ReplayCache, RecordThenReplayRoundTripsRandomSequences)
{
    testing_support::TempDir tmp;
    auto live = std::make_shared<MockBackend>();
    auto recorder = std::make_shared<ReplayCache>(live, tmp.path(), CacheMode::ReadWrite);
    auto rec_provider = instant(recorder);

    std::mt19937_64 rng(11);
    std::vector<ProviderRequest> requests;
    std::vector<std::string> recorded;
    for (int i = 0; i < 40; ++i) {
        auto r = simple_request(testing_support::random_ascii(rng, 1, 30), (i % 3) * 0.5);
        if (i % 2) r.output_schema = OutputSchema{"score", "", kScoreSchema};
        requests.push_back(r);
        recorded.push_back(rec_provider.complete(r).to_json().dump());
    }
    std::vector<std::string> texts = {"alpha", "beta", "gamma"};
    const auto rec_vecs = rec_provider.embed(texts);

    auto replay = std::make_shared<ReplayCache>(nullptr, tmp.path(), CacheMode::ReplayOnly, "mock-embedding");
    auto rep_provider = instant(replay);
    for (std::size_t i = 0; i < requests.size(); ++i) {
        EXPECT_EQ(rep_provider.complete(requests[i]).to_json().dump(), recorded[i]);
    }
    EXPECT_EQ(rep_provider.embed(texts), rec_vecs);
    EXPECT_EQ(replay->stats().live_calls, 0U);
}

TEST(ReplayCache, ConcurrentReadersSeeConsistentRecords)
{
    testing_support::TempDir tmp;
    auto live = std::make_shared<MockBackend>();
    auto cache = std::make_shared<ReplayCache>(live, tmp.path(), CacheMode::ReadWrite);
    auto provider = instant(cache);
    std::vector<std::string> expected;
    for (int i = 0; i < 8; ++i) expected.push_back(provider.complete_text(simple_request("q" + std::to_string(i))));

    std::vector<std::thread> pool;
    std::atomic<int> mismatches{0};
    for (int t = 0; t < 4; ++t) {
        pool.emplace_back([&] {
            for (int rep = 0; rep < 25; ++rep) {
                for (int i = 0; i < 8; ++i) {
                    if (provider.complete_text(simple_request("q" + std::to_string(i))) != expected[i]) ++mismatches;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    EXPECT_EQ(mismatches.load(), 0);
    EXPECT_EQ(cache->stats().live_calls, 8U);
}

TEST(OpenAIBackend, ChatBodyCarriesSchemaAndImages)
{
    auto req = simple_request("describe");
    req.messages.back().parts.push_back(ContentPart::from_image({1, 2, 3}));
    req.output_schema = OutputSchema{"score", "a score", kScoreSchema};
    const json body = OpenAIBackend::chat_body(req);
    EXPECT_EQ(body.at("response_format").at("json_schema").at("name"), "score");
    const auto& content = body.at("messages").at(1).at("content");
    ASSERT_TRUE(content.is_array());
    EXPECT_EQ(content.at(1).at("image_url").at("url"), "data:image/png;base64,AQID");
    EXPECT_THROW(OpenAIBackend(OpenAIBackend::Options{}), PreconditionError);
}

TEST(JsonSchema, ValidatorCoversToolSubset)
{
    const json schema = json::parse(R"({
      "type":"object",
      "properties":{"xs":{"type":"array","items":{"type":"string","enum":["A","B"]},"minItems":1,"maxItems":2}},
      "required":["xs"]})");
    EXPECT_FALSE(validate_schema(schema, json::parse(R"({"xs":["A"]})")));
    EXPECT_TRUE(validate_schema(schema, json::parse(R"({"xs":[]})")));
    EXPECT_TRUE(validate_schema(schema, json::parse(R"({"xs":["A","B","A"]})")));
    EXPECT_TRUE(validate_schema(schema, json::parse(R"({"xs":["C"]})")));
    EXPECT_TRUE(validate_schema(schema, json::parse(R"({})")));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EXPECT_FALSE(validate_schema(schema, synthesize_instance(schema, seed)));
        EXPECT_FALSE(validate_schema(kScoreSchema, synthesize_instance(kScoreSchema, seed)));
    }
}
