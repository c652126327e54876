#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

namespace esgqa {

using json = nlohmann::json;

/// Validates `instance` against the JSON-schema subset used by the tool
/// schemas: type (single or list), properties, required, items, enum,
/// minimum/maximum, minItems/maxItems, minLength. Returns the first
/// violation as a path-qualified message, or nullopt when valid.
std::optional<std::string> validate_schema(const json& schema, const json& instance);

/// Builds a deterministic instance satisfying `schema`. Used by the mock
/// backend when no scripted rule answers a structured request.
json synthesize_instance(const json& schema, std::uint64_t seed);

} // namespace esgqa
