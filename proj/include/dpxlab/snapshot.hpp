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

// Model snapshots on disk:
//   <dir>/spec.json         architecture
//   <dir>/provenance.json   training metadata
//   <dir>/weights/NNN.dpxt  weight tensors in order

#ifndef DPXLAB_SNAPSHOT_HPP
#define DPXLAB_SNAPSHOT_HPP

#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/network.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::nn {

using nlohmann::json;

inline json spec_to_json(const NetworkSpec& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::kDense:
        j["in"] = l.in;
        j["out"] = l.out;
        break;
      case LayerKind::kConv2d:
        j["channels"] = l.channels;
        j["kernel"] = kConvKernel;
        break;
      case LayerKind::kGroupNorm:
        j["groups"] = l.groups;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input_shape", s.input_shape}, {"layers", layers}, {"output_classes", s.output_classes}};
}

inline NetworkSpec spec_from_json(const json& j) {
  try {
    NetworkSpec s;
    s.input_shape = j.at("input_shape").get<Shape>();
    s.output_classes = j.at("output_classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      LayerSpec ls;
      ls.kind = parse_layer_kind(l.at("kind").get<std::string>());
      if (ls.kind == LayerKind::kDense) {
        ls.in = l.at("in").get<std::size_t>();
        ls.out = l.at("out").get<std::size_t>();
      } else if (ls.kind == LayerKind::kConv2d) {
        ls.channels = l.at("channels").get<std::size_t>();
        if (l.value("kernel", kConvKernel) != kConvKernel) {
          throw ConfigError("only 3x3 convolutions are supported");
        }
      } else if (ls.kind == LayerKind::kGroupNorm) {
        ls.groups = l.at("groups").get<std::size_t>();
      }
      s.layers.push_back(ls);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid network spec: ") + e.what());
  }
}

namespace detail {
template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}
template <typename T>
std::optional<T> get_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}
}  // namespace detail

inline json provenance_to_json(const Provenance& p) {
  json j{{"mode", to_string(p.mode)},
         {"epochs", p.epochs},
         {"batch_size", p.batch_size},
         {"learning_rate", p.learning_rate},
         {"seed", p.seed},
         {"objective", p.objective}};
  detail::put_optional(j, "epsilon", p.epsilon);
  detail::put_optional(j, "delta", p.delta);
  detail::put_optional(j, "noise_multiplier", p.noise_multiplier);
  detail::put_optional(j, "clip_norm", p.clip_norm);
  detail::put_optional(j, "sample_rate", p.sample_rate);
  detail::put_optional(j, "steps", p.steps);
  return j;
}

/// Throws ConfigError when a dp provenance lacks its privacy parameters.
inline void validate_provenance(const Provenance& p) {
  if (p.mode != TrainingMode::kDp) return;
  if (!p.noise_multiplier || !(*p.noise_multiplier > 0.0)) {
    throw ConfigError("dp snapshot needs noise_multiplier > 0");
  }
  if (!p.clip_norm || !(*p.clip_norm > 0.0)) throw ConfigError("dp snapshot needs clip_norm > 0");
  if (!p.epsilon || !p.delta) throw ConfigError("dp snapshot needs epsilon and delta");
}

inline Provenance provenance_from_json(const json& j) {
  try {
    Provenance p;
    p.mode = parse_mode(j.at("mode").get<std::string>());
    p.epochs = j.value("epochs", std::size_t{0});
    p.batch_size = j.value("batch_size", std::size_t{0});
    p.learning_rate = j.value("learning_rate", 0.0);
    p.seed = j.value("seed", std::uint64_t{0});
    p.objective = j.value("objective", std::string("classifier"));
    p.epsilon = detail::get_optional<double>(j, "epsilon");
    p.delta = detail::get_optional<double>(j, "delta");
    p.noise_multiplier = detail::get_optional<double>(j, "noise_multiplier");
    p.clip_norm = detail::get_optional<double>(j, "clip_norm");
    p.sample_rate = detail::get_optional<double>(j, "sample_rate");
    p.steps = detail::get_optional<std::size_t>(j, "steps");
    validate_provenance(p);
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid provenance: ") + e.what());
  }
}

inline std::string weight_file_name(std::size_t i) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << i << ".dpxt";
  return s.str();
}

inline void save_model(const Model& m, const std::filesystem::path& dir) {
  validate_provenance(m.provenance());
  std::filesystem::create_directories(dir / "weights");
  write_file_atomic(dir / "spec.json", spec_to_json(m.spec()).dump(2) + "\n");
  write_file_atomic(dir / "provenance.json", provenance_to_json(m.provenance()).dump(2) + "\n");
  for (std::size_t i = 0; i < m.weights().size(); ++i) {
    write_tensor(m.weights()[i], dir / "weights" / weight_file_name(i));
  }
}

inline json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline Model load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw NotFoundError("model snapshot not found: " + dir.string());
  }
  NetworkSpec spec = spec_from_json(read_json_file(dir / "spec.json"));
  Provenance prov = provenance_from_json(read_json_file(dir / "provenance.json"));
  std::vector<Tensor> weights;
  for (std::size_t i = 0;; ++i) {
    const auto p = dir / "weights" / weight_file_name(i);
    if (!std::filesystem::exists(p)) break;
    weights.push_back(read_tensor(p));
  }
  return Model(std::move(spec), std::move(weights), std::move(prov));
}

}  // namespace dpxlab::nn

#endif  // DPXLAB_SNAPSHOT_HPP
