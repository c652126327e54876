#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace esgqa {

using json = nlohmann::json;

// Strings
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool icontains(std::string_view haystack, std::string_view needle);
/// Case-insensitive find; npos when absent.
std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from = 0);

// Hashing
std::uint64_t fnv1a64(std::string_view data);
std::string sha256_hex(std::string_view data);

// Deterministic numerics that do not depend on the standard library's
// distribution implementations.
double unit_uniform(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);
/// Uniform index in [0, n).
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

// Files
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

} // namespace esgqa
