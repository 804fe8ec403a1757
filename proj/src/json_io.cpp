#include "huntloop/json_io.hpp"

#include <string>

#include "huntloop/error.hpp"

namespace huntloop {

void to_json(Json& j, const Observable& o) {
  j = Json{{"type", std::string(to_string(o.type()))}, {"value", o.value()}};
}

void from_json(const Json& j, Observable& o) {
  if (!j.is_object() || !j.contains("type") || !j.contains("value") ||
      !j["type"].is_string() || !j["value"].is_string())
    throw Error("invalid-observable", "observable must be {\"type\":..., \"value\":...}");
  const auto type = parse_observable_type(j["type"].get<std::string>());
  if (!type)
    throw Error("invalid-observable", "unknown observable type: " + j["type"].get<std::string>());
  o = Observable(*type, j["value"].get<std::string>());
}

Json observables_to_json(const ObservableSet& set) {
  Json out = Json::array();
  for (const auto& o : set) out.push_back(o);
  return out;
}

ObservableSet observables_from_json(const Json& j) {
  ObservableSet out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw Error("invalid-observable", "expected an array of observables");
  for (const auto& e : j) out.insert(e.get<Observable>());
  return out;
}

const Json& require(const Json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key))
    throw Error("malformed-document", std::string(what) + ": missing field '" + key + "'");
  return j.at(key);
}

}  // namespace huntloop
