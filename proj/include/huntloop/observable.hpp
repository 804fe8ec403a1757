#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace huntloop {

enum class ObservableType {
  kFileHashSha256,
  kFileHashMd5,
  kIp,
  kDomain,
  kUrl,
  kFilePath,
  kProcessName,
  kRegistryKey,
  kMutex,
  kEmail,
};

inline constexpr ObservableType kAllObservableTypes[] = {
    ObservableType::kFileHashSha256, ObservableType::kFileHashMd5,
    ObservableType::kIp,             ObservableType::kDomain,
    ObservableType::kUrl,            ObservableType::kFilePath,
    ObservableType::kProcessName,    ObservableType::kRegistryKey,
    ObservableType::kMutex,          ObservableType::kEmail,
};

std::string_view to_string(ObservableType t);
std::optional<ObservableType> parse_observable_type(std::string_view s);

bool is_hash(ObservableType t);

// Canonical form used for indexing and equality. Throws Error
// ("invalid-observable") when the value is empty after trimming.
std::string normalize_value(ObservableType t, std::string_view raw);

class Observable {
 public:
  Observable() = default;
  // Normalizes `raw`.
  Observable(ObservableType type, std::string_view raw);

  // Parses "<otype>:<value>" (the indicator pattern syntax).
  static Observable from_pattern(std::string_view pattern);

  ObservableType type() const { return type_; }
  const std::string& value() const { return value_; }
  std::string pattern() const;

  auto operator<=>(const Observable&) const = default;
  bool operator==(const Observable&) const = default;

 private:
  ObservableType type_ = ObservableType::kFileHashSha256;
  std::string value_;
};

// Ordered so that every set-valued result has a deterministic iteration
// order (reports must be byte-identical across runs).
using ObservableSet = std::set<Observable>;

// Pyramid-of-Pain weight classes used by support and coverage scoring.
enum class WeightClass { kFileHash, kNetwork, kHostArtifact };

WeightClass weight_class(ObservableType t);
std::string_view to_string(WeightClass c);
std::optional<WeightClass> parse_weight_class(std::string_view s);

struct ObservableHash {
  std::size_t operator()(const Observable& o) const {
    return std::hash<std::string>{}(o.value()) ^
           (static_cast<std::size_t>(o.type()) * 0x9e3779b97f4a7c15ULL);
  }
};

}  // namespace huntloop
