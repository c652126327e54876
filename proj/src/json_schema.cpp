#include "esgqa/json_schema.hpp"

#include <cmath>
#include <random>

#include "esgqa/util.hpp"

namespace esgqa {

namespace {

bool matches_type(const std::string& type, const json& v)
{
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    if (type == "number") return v.is_number();
    if (type == "integer") {
        if (v.is_number_integer()) return true;
        if (v.is_number_float()) {
            const double d = v.get<double>();
            return std::isfinite(d) && std::floor(d) == d;
        }
        return false;
    }
    return true;
}

std::optional<std::string> check(const json& schema, const json& v, const std::string& path)
{
    if (!schema.is_object()) return std::nullopt;

    if (auto it = schema.find("type"); it != schema.end()) {
        bool ok = false;
        if (it->is_string()) {
            ok = matches_type(it->get<std::string>(), v);
        } else if (it->is_array()) {
            for (const auto& t : *it) ok = ok || matches_type(t.get<std::string>(), v);
        }
        if (!ok) return path + ": expected type " + it->dump() + ", got " + v.type_name();
    }

    if (auto it = schema.find("enum"); it != schema.end()) {
        bool found = false;
        for (const auto& e : *it) found = found || e == v;
        if (!found) return path + ": value " + v.dump() + " not in enum";
    }

    if (v.is_number()) {
        const double d = v.get<double>();
        if (auto it = schema.find("minimum"); it != schema.end() && d < it->get<double>())
            return path + ": below minimum " + it->dump();
        if (auto it = schema.find("maximum"); it != schema.end() && d > it->get<double>())
            return path + ": above maximum " + it->dump();
    }

    if (v.is_string()) {
        if (auto it = schema.find("minLength");
            it != schema.end() && v.get_ref<const std::string&>().size() < it->get<std::size_t>())
            return path + ": shorter than minLength";
    }

    if (v.is_array()) {
        if (auto it = schema.find("minItems"); it != schema.end() && v.size() < it->get<std::size_t>())
            return path + ": fewer than minItems";
        if (auto it = schema.find("maxItems"); it != schema.end() && v.size() > it->get<std::size_t>())
            return path + ": more than maxItems";
        if (auto it = schema.find("items"); it != schema.end()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (auto err = check(*it, v[i], path + "[" + std::to_string(i) + "]")) return err;
            }
        }
    }

    if (v.is_object()) {
        if (auto it = schema.find("required"); it != schema.end()) {
            for (const auto& key : *it) {
                if (!v.contains(key.get<std::string>()))
                    return path + ": missing required property '" + key.get<std::string>() + "'";
            }
        }
        if (auto it = schema.find("properties"); it != schema.end()) {
            for (const auto& [key, sub] : it->items()) {
                if (auto f = v.find(key); f != v.end()) {
                    if (auto err = check(sub, *f, path + "." + key)) return err;
                }
            }
        }
    }
    return std::nullopt;
}

json synthesize(const json& schema, std::mt19937_64& rng, int depth)
{
    if (!schema.is_object()) return nullptr;
    if (auto it = schema.find("enum"); it != schema.end() && !it->empty()) {
        return (*it)[uniform_index(rng, it->size())];
    }
    std::string type = "object";
    if (auto it = schema.find("type"); it != schema.end()) {
        type = it->is_array() ? (*it)[0].get<std::string>() : it->get<std::string>();
    }
    if (type == "object") {
        json out = json::object();
        if (auto it = schema.find("properties"); it != schema.end()) {
            for (const auto& [key, sub] : it->items()) out[key] = synthesize(sub, rng, depth + 1);
        }
        return out;
    }
    if (type == "array") {
        std::size_t n = 1;
        if (auto it = schema.find("minItems"); it != schema.end()) n = std::max(n, it->get<std::size_t>());
        if (auto it = schema.find("maxItems"); it != schema.end()) n = std::min(n, it->get<std::size_t>());
        json out = json::array();
        const json item_schema = schema.value("items", json::object());
        for (std::size_t i = 0; i < n; ++i) out.push_back(synthesize(item_schema, rng, depth + 1));
        return out;
    }
    if (type == "string") {
        char buf[24];
        std::snprintf(buf, sizeof buf, "mock-%08llx", static_cast<unsigned long long>(rng() & 0xffffffffULL));
        return std::string(buf);
    }
    if (type == "integer") {
        const auto lo = schema.value("minimum", 0.0);
        const auto hi = schema.value("maximum", lo + 10.0);
        return static_cast<long long>(std::ceil(lo)) +
               static_cast<long long>(uniform_index(rng, static_cast<std::size_t>(hi - lo) + 1));
    }
    if (type == "number") {
        const auto lo = schema.value("minimum", 0.0);
        const auto hi = schema.value("maximum", 1.0);
        return lo + (hi - lo) * unit_uniform(rng);
    }
    if (type == "boolean") return (rng() & 1U) != 0;
    return nullptr;
}

} // namespace

std::optional<std::string> validate_schema(const json& schema, const json& instance)
{
    return check(schema, instance, "$");
}

json synthesize_instance(const json& schema, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return synthesize(schema, rng, 0);
}

} // namespace esgqa
