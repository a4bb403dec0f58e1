// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Strict reader for JSON config objects. Every absent key keeps its default,
// every wrong type or unknown key is collected, and the root reader raises a
// single config_schema error listing them all.

#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "fashionmt/error.hpp"

namespace fashionmt {

class SchemaReader {
 public:
  explicit SchemaReader(const nlohmann::json& j, std::string path = "")
      : j_(&j), path_(std::move(path)), problems_(std::make_shared<std::vector<std::string>>()) {
    if (!j.is_object()) problems_->push_back(label("") + ": expected object");
  }

  static bool non_negative(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  template <typename T>
  SchemaReader& field(const char* key, T& out) {
    seen_.insert(key);
    if (!j_->is_object() || !j_->contains(key)) return *this;
    const nlohmann::json& v = (*j_)[key];
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return problem(key, "expected boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!non_negative(v)) return problem(key, "expected non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return problem(key, "expected integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return problem(key, "expected number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return problem(key, "expected string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v.is_array()) return problem(key, "expected array of non-negative integers");
      std::vector<std::uint64_t> vals;
      for (const auto& e : v) {
        if (!non_negative(e)) return problem(key, "expected array of non-negative integers");
        vals.push_back(e.get<std::uint64_t>());
      }
      out = std::move(vals);
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
    return *this;
  }

  // Reads a string and converts it with `parse`, which may throw.
  template <typename T, typename F>
  SchemaReader& parsed(const char* key, T& out, F parse) {
    std::string s;
    const std::size_t before = problems_->size();
    field(key, s);
    if (problems_->size() != before || !j_->is_object() || !j_->contains(key)) return *this;
    try {
      out = parse(s);
    } catch (const Error& e) {
      problem(key, "invalid value '" + s + "'");
    }
    return *this;
  }

  bool has(const char* key) const { return j_->is_object() && j_->contains(key); }

  // Nested reader sharing this reader's problem list. Absent keys give a
  // reader over an empty object.
  SchemaReader child(const char* key) {
    seen_.insert(key);
    static const nlohmann::json kEmpty = nlohmann::json::object();
    const nlohmann::json& v = has(key) ? (*j_)[key] : kEmpty;
    SchemaReader r(v, label(key), problems_);
    return r;
  }

  void problem_at(const std::string& key, const std::string& what) {
    problems_->push_back(label(key) + ": " + what);
  }

  // Records unknown keys. The root reader throws when anything was recorded.
  void finish(bool root = true) {
    if (j_->is_object()) {
      for (const auto& [k, v] : j_->items()) {
        if (!seen_.count(k)) problems_->push_back(label(k) + ": unknown key");
      }
    }
    if (root && !problems_->empty()) {
      std::string msg;
      for (const auto& p : *problems_) msg += (msg.empty() ? "" : "; ") + p;
      fail(ErrorKind::kConfigSchema, msg);
    }
  }

 private:
  SchemaReader(const nlohmann::json& j, std::string path,
               std::shared_ptr<std::vector<std::string>> problems)
      : j_(&j), path_(std::move(path)), problems_(std::move(problems)) {
    if (!j.is_object()) problems_->push_back(label("") + ": expected object");
  }

  SchemaReader& problem(const char* key, const std::string& what) {
    problems_->push_back(label(key) + ": " + what);
    return *this;
  }

  std::string label(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const nlohmann::json* j_;
  std::string path_;
  std::shared_ptr<std::vector<std::string>> problems_;
  std::set<std::string> seen_;
};

}  // namespace fashionmt
