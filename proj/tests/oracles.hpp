#pragma once

// Independent reference implementations used by the unit and acceptance
// suites.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "esgqa/retrieval.hpp"

namespace testing_support {

using esgqa::llm::Embedding;
using esgqa::retrieval::IndustryFilter;
using esgqa::retrieval::RetrievalResult;
using esgqa::retrieval::normalized;
using esgqa::chunking::Chunk;

// Independent BLEU: n-grams keyed by joined strings, geometric mean taken
// as a plain product.
struct OracleBleu {
    std::vector<double> p;
    double bp = 0;
    double score = 0;
    std::size_t r = 0;
};

inline std::unordered_map<std::string, int> gram_counts(const std::vector<std::string>& t, std::size_t n)
{
    std::unordered_map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        std::string key;
        for (std::size_t k = 0; k < n; ++k) key += t[i + k] + '\x1f';
        m[key]++;
    }
    return m;
}

inline OracleBleu oracle_bleu(const std::vector<std::string>& cand, const std::vector<std::vector<std::string>>& refs,
                       std::size_t N)
{
    OracleBleu o;
    const auto c = static_cast<long>(cand.size());
    long best = -1;
    for (const auto& r : refs) {
        const long len = static_cast<long>(r.size());
        if (best < 0 || std::labs(len - c) < std::labs(best - c) || (std::labs(len - c) == std::labs(best - c) && len < best))
            best = len;
    }
    o.r = static_cast<std::size_t>(best);
    double product = 1.0;
    for (std::size_t n = 1; n <= N; ++n) {
        auto cc = gram_counts(cand, n);
        int num = 0, den = 0;
        for (const auto& [g, k] : cc) {
            int mx = 0;
            for (const auto& r : refs) {
                auto rc = gram_counts(r, n);
                auto it = rc.find(g);
                if (it != rc.end()) mx = std::max(mx, it->second);
            }
            num += std::min(k, mx);
            den += k;
        }
        const double pn = den ? static_cast<double>(num) / den : 0.0;
        o.p.push_back(pn);
        product *= pn;
    }
    o.bp = c > best ? 1.0 : std::exp(1.0 - static_cast<double>(best) / static_cast<double>(c));
    o.score = o.bp * std::pow(product, 1.0 / static_cast<double>(N));
    return o;
}

// Exponential LCS: longest subsequence of `a` that is also a subsequence of `b`.
inline std::size_t brute_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b)
{
    std::size_t best = 0;
    for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
        std::size_t j = 0, len = 0;
        bool ok = true;
        for (std::size_t i = 0; i < a.size() && ok; ++i) {
            if (!(mask & (1u << i))) continue;
            while (j < b.size() && b[j] != a[i]) ++j;
            if (j == b.size()) ok = false;
            else {
                ++j;
                ++len;
            }
        }
        if (ok) best = std::max(best, len);
    }
    return best;
}

inline std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t lo, std::size_t hi, std::size_t vocab)
{
    static const std::vector<std::string> words = {"fuel", "fleet", "emissions", "water", "energy", "tons"};
    std::vector<std::string> t(lo + rng() % (hi - lo + 1));
    for (auto& w : t) w = words[rng() % vocab];
    return t;
}

// Brute-force oracle: full scan, sort by (score desc, id asc), take k.
inline std::vector<std::pair<std::string, double>> knn_oracle(const std::vector<Chunk>& chunks, const Embedding& q,
                                                       std::size_t k, const IndustryFilter& filter = std::nullopt)
{
    const auto uq = normalized(q);
    std::vector<std::pair<std::string, double>> all;
    for (const auto& c : chunks) {
        if (filter && !filter->count(c.metadata.industry)) continue;
        const auto v = normalized(*c.embedding);
        double s = 0;
        for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<double>(v[i]) * uq[i];
        all.emplace_back(c.chunk_id, s);
    }
    std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    if (all.size() > k) all.resize(k);
    return all;
}

// Independent RRF oracle over rank maps.
inline std::vector<std::pair<std::string, double>> rrf_oracle(const std::vector<std::vector<RetrievalResult>>& lists,
                                                       std::size_t k)
{
    std::map<std::string, double> s;
    for (const auto& l : lists)
        for (std::size_t i = 0; i < l.size(); ++i) s[l[i].chunk_id] += 1.0 / (60.0 + static_cast<double>(i + 1));
    std::vector<std::pair<std::string, double>> all(s.begin(), s.end());
    std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.second > b.second; });
    if (all.size() > k) all.resize(k);
    return all;
}

// Greedy MMR oracle written directly from the definition.
inline std::vector<std::string> mmr_oracle(const std::vector<Chunk>& chunks, const Embedding& q, std::size_t k,
                                    double lambda)
{
    auto sim = [](const Embedding& a, const Embedding& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
        return s;
    };
    std::vector<std::string> picked;
    std::vector<Embedding> picked_vecs;
    std::set<std::string> used;
    while (picked.size() < k && picked.size() < chunks.size()) {
        std::string best;
        double best_score = -1e300;
        for (const auto& c : chunks) {
            if (used.count(c.chunk_id)) continue;
            const auto v = normalized(*c.embedding);
            double red = 0.0;
            for (const auto& p : picked_vecs) red = std::max(red, sim(v, p));
            const double score = lambda * sim(normalized(q), v) - (1 - lambda) * red;
            if (score > best_score || (score == best_score && c.chunk_id < best)) {
                best = c.chunk_id;
                best_score = score;
            }
        }
        used.insert(best);
        picked.push_back(best);
        for (const auto& c : chunks)
            if (c.chunk_id == best) picked_vecs.push_back(normalized(*c.embedding));
    }
    return picked;
}

} // namespace testing_support
