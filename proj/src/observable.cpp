#include "huntloop/observable.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

#include "huntloop/error.hpp"

namespace huntloop {

namespace {

constexpr std::array<std::pair<ObservableType, std::string_view>, 10> kTypeNames{{
    {ObservableType::kFileHashSha256, "file-hash-sha256"},
    {ObservableType::kFileHashMd5, "file-hash-md5"},
    {ObservableType::kIp, "ip"},
    {ObservableType::kDomain, "domain"},
    {ObservableType::kUrl, "url"},
    {ObservableType::kFilePath, "file-path"},
    {ObservableType::kProcessName, "process-name"},
    {ObservableType::kRegistryKey, "registry-key"},
    {ObservableType::kMutex, "mutex"},
    {ObservableType::kEmail, "email"},
}};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Lowercases "scheme://host" and leaves path, query and fragment untouched.
std::string normalize_url(std::string_view s) {
  std::size_t host_begin = 0;
  if (auto p = s.find("://"); p != std::string_view::npos) host_begin = p + 3;
  std::size_t host_end = s.find_first_of("/?#", host_begin);
  if (host_end == std::string_view::npos) host_end = s.size();
  return lower(s.substr(0, host_end)) + std::string(s.substr(host_end));
}

}  // namespace

std::string_view to_string(ObservableType t) {
  for (const auto& [type, name] : kTypeNames)
    if (type == t) return name;
  return "unknown";
}

std::optional<ObservableType> parse_observable_type(std::string_view s) {
  for (const auto& [type, name] : kTypeNames)
    if (name == s) return type;
  return std::nullopt;
}

bool is_hash(ObservableType t) {
  return t == ObservableType::kFileHashSha256 || t == ObservableType::kFileHashMd5;
}

std::string normalize_value(ObservableType t, std::string_view raw) {
  const std::string_view v = trim(raw);
  if (v.empty()) throw Error("invalid-observable", "observable value is empty");
  switch (t) {
    case ObservableType::kUrl:
      return normalize_url(v);
    case ObservableType::kFilePath: {
      std::string out = lower(v);
      std::replace(out.begin(), out.end(), '\\', '/');
      return out;
    }
    case ObservableType::kDomain: {
      std::string out = lower(v);
      while (out.size() > 1 && out.back() == '.') out.pop_back();
      return out;
    }
    case ObservableType::kIp:
      // IPv4 is case-free; IPv6 hex digits are lowercased.
      return lower(v);
    default:
      return lower(v);
  }
}

Observable::Observable(ObservableType type, std::string_view raw)
    : type_(type), value_(normalize_value(type, raw)) {}

Observable Observable::from_pattern(std::string_view pattern) {
  const auto colon = pattern.find(':');
  if (colon == std::string_view::npos)
    throw Error("invalid-observable", "pattern lacks '<otype>:' prefix: " + std::string(pattern));
  const auto type = parse_observable_type(trim(pattern.substr(0, colon)));
  if (!type)
    throw Error("invalid-observable",
                "unknown observable type in pattern: " + std::string(pattern.substr(0, colon)));
  return Observable(*type, pattern.substr(colon + 1));
}

std::string Observable::pattern() const {
  return std::string(to_string(type_)) + ":" + value_;
}

WeightClass weight_class(ObservableType t) {
  switch (t) {
    case ObservableType::kFileHashSha256:
    case ObservableType::kFileHashMd5:
      return WeightClass::kFileHash;
    case ObservableType::kIp:
    case ObservableType::kDomain:
    case ObservableType::kUrl:
    case ObservableType::kEmail:
      return WeightClass::kNetwork;
    default:
      return WeightClass::kHostArtifact;
  }
}

std::string_view to_string(WeightClass c) {
  switch (c) {
    case WeightClass::kFileHash:
      return "file-hash";
    case WeightClass::kNetwork:
      return "network";
    case WeightClass::kHostArtifact:
      return "host-artifact";
  }
  return "unknown";
}

std::optional<WeightClass> parse_weight_class(std::string_view s) {
  for (auto c : {WeightClass::kFileHash, WeightClass::kNetwork, WeightClass::kHostArtifact})
    if (to_string(c) == s) return c;
  return std::nullopt;
}

}  // namespace huntloop
