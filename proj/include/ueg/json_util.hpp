#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "ueg/errors.hpp"

namespace ueg {

/// Reads fields from a JSON object, keeping defaults for absent keys and
/// rejecting keys that were never read.
class StrictObject {
public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError("'" + path_ + "' must be a JSON object");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) {
      return;
    }
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid value for '" + qualified(key) + "': " + e.what());
    }
  }

  bool contains(const std::string& key) const { return j_.contains(key); }
  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Throws ConfigError quoting the first unknown key.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw ConfigError("unknown key '" + qualified(key) + "'");
      }
    }
  }

private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace ueg
