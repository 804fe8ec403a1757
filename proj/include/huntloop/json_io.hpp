#pragma once

#include <nlohmann/json.hpp>

#include "huntloop/observable.hpp"

namespace huntloop {

using Json = nlohmann::json;

void to_json(Json& j, const Observable& o);
void from_json(const Json& j, Observable& o);

Json observables_to_json(const ObservableSet& set);
ObservableSet observables_from_json(const Json& j);

// Throws Error("malformed-document") with `what` as context when `j` is
// missing `key` or has the wrong JSON type.
const Json& require(const Json& j, const char* key, const char* what);

}  // namespace huntloop
