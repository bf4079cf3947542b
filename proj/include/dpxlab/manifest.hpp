// Copyright 2026 The DPXLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Workspace manifest: a JSON index of tensor files and what they hold.
//
//   {
//     "entries": [
//       {"name": "s0", "path": "attr/np/ig/0.dpxt", "role": "attribution",
//        "model_id": "np", "explainer_id": "integrated_gradients",
//        "input_id": "0"},
//       {"name": "pred_dp4", "path": "pred/dp4.dpxt", "role": "prediction",
//        "model_id": "dp4", "epsilon": 4.0}
//     ]
//   }
//
// Relative paths resolve against the manifest's directory.

#ifndef DPXLAB_MANIFEST_HPP
#define DPXLAB_MANIFEST_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab {

enum class Role { kInput, kActivation, kAttribution, kPrediction, kLabel };

inline std::string to_string(Role role) {
  switch (role) {
    case Role::kInput: return "input";
    case Role::kActivation: return "activation";
    case Role::kAttribution: return "attribution";
    case Role::kPrediction: return "prediction";
    case Role::kLabel: return "label";
  }
  return "?";
}

inline std::optional<Role> parse_role(const std::string& s) {
  if (s == "input") return Role::kInput;
  if (s == "activation") return Role::kActivation;
  if (s == "attribution") return Role::kAttribution;
  if (s == "prediction") return Role::kPrediction;
  if (s == "label") return Role::kLabel;
  return std::nullopt;
}

struct ManifestEntry {
  std::string name;
  std::filesystem::path path;  // as written in the manifest
  Role role = Role::kInput;
  std::string model_id;
  std::optional<std::string> layer_id;
  std::optional<std::string> explainer_id;
  std::optional<double> epsilon;
  // Identifies which dataset row an attribution explains.
  std::optional<std::string> input_id;
};

class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::filesystem::path root) : root_(std::move(root)) {}

  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  const std::filesystem::path& root() const noexcept { return root_; }
  void set_root(std::filesystem::path root) { root_ = std::move(root); }
  bool empty() const noexcept { return entries_.empty(); }

  std::filesystem::path resolve(const ManifestEntry& e) const {
    return e.path.is_absolute() ? e.path : root_ / e.path;
  }

  /// Appends an entry; rejects duplicate names.
  void add(ManifestEntry entry) {
    for (const auto& e : entries_) {
      if (e.name == entry.name) {
        throw ManifestError("duplicate entry name '" + entry.name + "'");
      }
    }
    entries_.push_back(std::move(entry));
  }

  const ManifestEntry* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  std::vector<const ManifestEntry*> with_role(Role role) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries_) {
      if (e.role == role) out.push_back(&e);
    }
    return out;
  }

  Tensor load(const ManifestEntry& e) const { return read_tensor(resolve(e)); }

 private:
  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json j{{"name", e.name},
                   {"path", e.path.generic_string()},
                   {"role", to_string(e.role)},
                   {"model_id", e.model_id}};
  if (e.layer_id) j["layer_id"] = *e.layer_id;
  if (e.explainer_id) j["explainer_id"] = *e.explainer_id;
  if (e.epsilon) j["epsilon"] = *e.epsilon;
  if (e.input_id) j["input_id"] = *e.input_id;
  return j;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries()) entries.push_back(to_json(e));
  return nlohmann::json{{"entries", std::move(entries)}};
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(m).dump(2) + "\n");
}

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& j,
                                                  const char* key,
                                                  const std::string& who) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) {
    throw ManifestError("entry '" + who + "': field '" + key + "' must be a string");
  }
  return j[key].get<std::string>();
}

}  // namespace detail

/// Parses and validates a manifest from JSON text. With `check_files`,
/// every referenced tensor must exist and parse.
inline Manifest parse_manifest(const std::string& text,
                               const std::filesystem::path& root,
                               bool check_files = true) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw ManifestError("manifest must be an object with an 'entries' array");
  }
  Manifest m(root);
  std::map<std::string, bool> model_private;
  std::size_t index = 0;
  for (const auto& j : doc["entries"]) {
    const std::string where = "#" + std::to_string(index++);
    if (!j.is_object()) throw ManifestError("entry " + where + " is not an object");
    if (!j.contains("name") || !j["name"].is_string() || j["name"].get<std::string>().empty()) {
      throw ManifestError("entry " + where + ": missing 'name'");
    }
    ManifestEntry e;
    e.name = j["name"].get<std::string>();
    if (!j.contains("path") || !j["path"].is_string()) {
      throw ManifestError("entry '" + e.name + "': missing 'path'");
    }
    e.path = j["path"].get<std::string>();
    if (!j.contains("role") || !j["role"].is_string()) {
      throw ManifestError("entry '" + e.name + "': missing 'role'");
    }
    auto role = parse_role(j["role"].get<std::string>());
    if (!role) {
      throw ManifestError("entry '" + e.name + "': unknown role '" +
                          j["role"].get<std::string>() + "'");
    }
    e.role = *role;
    if (!j.contains("model_id") || !j["model_id"].is_string()) {
      throw ManifestError("entry '" + e.name + "': missing 'model_id'");
    }
    e.model_id = j["model_id"].get<std::string>();
    e.layer_id = detail::optional_string(j, "layer_id", e.name);
    e.explainer_id = detail::optional_string(j, "explainer_id", e.name);
    e.input_id = detail::optional_string(j, "input_id", e.name);
    if (j.contains("epsilon") && !j["epsilon"].is_null()) {
      if (!j["epsilon"].is_number() || j["epsilon"].get<double>() <= 0) {
        throw ManifestError("entry '" + e.name + "': epsilon must be a positive number");
      }
      e.epsilon = j["epsilon"].get<double>();
    }
    // A model id is either private everywhere it appears or nowhere.
    auto [it, fresh] = model_private.emplace(e.model_id, e.epsilon.has_value());
    if (!fresh && it->second != e.epsilon.has_value()) {
      throw ManifestError("entry '" + e.name + "': epsilon presence for model '" +
                          e.model_id + "' is inconsistent across entries");
    }
    if (check_files) {
      const auto file = e.path.is_absolute() ? e.path : root / e.path;
      if (!std::filesystem::exists(file)) {
        throw ManifestError("entry '" + e.name + "': file not found: " + file.string());
      }
      try {
        (void)read_tensor(file);
      } catch (const Error& err) {
        throw ManifestError("entry '" + e.name + "': " + err.what());
      }
    }
    try {
      m.add(std::move(e));
    } catch (const ManifestError&) {
      throw ManifestError("entry '" + j["name"].get<std::string>() +
                          "': duplicate entry name");
    }
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::string text;
  try {
    text = read_file_bytes(path);
  } catch (const IoError& e) {
    throw ManifestError(e.what());
  }
  return parse_manifest(text, path.parent_path(), check_files);
}

}  // namespace dpxlab

#endif  // DPXLAB_MANIFEST_HPP
