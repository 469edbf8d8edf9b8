#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "deskavoid/common.hpp"

namespace deskavoid {

using nlohmann::json;

/// Where a resolved config value comes from: the paper states it, or we picked it.
enum class Source { paper, default_value };

/// A config leaf is either a bare value or {"value": v, "source": "..."} as emitted by the
/// resolved-config writer; both forms load.
inline const json& leaf_value(const json& v) {
  return v.is_object() && v.contains("value") ? v.at("value") : v;
}

template <class T>
void read_leaf(const json& obj, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    leaf_value(obj.at(key)).get_to(out);
  } catch (const json::exception& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

inline json annotated(const json& value, Source source) {
  return {{"value", value}, {"source", source == Source::paper ? "paper" : "default"}};
}

/// Rejects typos: every key in `obj` must be one of `known`.
inline void check_keys(const json& obj, std::initializer_list<const char*> known, const std::string& section) {
  if (!obj.is_object()) throw ValidationError(section + ": expected an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ValidationError(section + ": unknown key '" + key + "'");
  }
}

/// Drops {"value","source"} wrappers recursively, giving the plain form.
inline json strip_annotations(const json& j) {
  if (j.is_object() && j.contains("value") && j.contains("source") && j.size() == 2) return j.at("value");
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = strip_annotations(v);
    return out;
  }
  return j;
}

}  // namespace deskavoid
