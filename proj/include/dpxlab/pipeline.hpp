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

// Serving flow: anomaly gate, label-only prediction, LDP explanations
// ranked by SSIM, a persistent review queue and release on approval.
//
// Store layout under the root directory:
//   cases.jsonl                  one CaseRecord per line, replaced atomically
//   cases/<case_id>/input.dpxt   the submitted input
//   cases/<case_id>/<explainer>.dpxt   LDP explanation tensors

#ifndef DPXLAB_PIPELINE_HPP
#define DPXLAB_PIPELINE_HPP

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/explainers.hpp"
#include "dpxlab/ldp.hpp"
#include "dpxlab/network.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::pipeline {

using nlohmann::json;

enum class ReviewState { kPending, kApproved, kRejected };

inline std::string to_string(ReviewState s) {
  switch (s) {
    case ReviewState::kPending: return "PENDING";
    case ReviewState::kApproved: return "APPROVED";
    case ReviewState::kRejected: return "REJECTED";
  }
  return "?";
}

inline ReviewState parse_review_state(const std::string& s) {
  if (s == "PENDING") return ReviewState::kPending;
  if (s == "APPROVED") return ReviewState::kApproved;
  if (s == "REJECTED") return ReviewState::kRejected;
  throw ConfigError("unknown review state '" + s + "'");
}

inline constexpr const char* kDispositionGateRejected = "gate_rejected";
inline constexpr const char* kDispositionAwaitingReview = "awaiting_review";
inline constexpr const char* kFlagNoReleasable = "no releasable explanation";

struct GateResult {
  double mse = 0.0;
  double kappa = 0.0;
  bool passed = false;
};

struct Candidate {
  std::string explainer_id;
  std::string explanation_ref;  // path relative to the store root
  double ssim = 0.0;
  bool kept = false;
  std::string reason;
};

struct CaseRecord {
  std::string case_id;
  std::string input_ref;
  GateResult gate;
  std::optional<std::size_t> label;
  std::vector<Candidate> candidates;
  std::vector<std::string> selected_top_k;  // explainer ids, best first
  ReviewState review_state = ReviewState::kPending;
  std::string disposition;
  std::vector<std::string> flags;
  std::string reviewer_note;
  std::string created_at;
  std::string updated_at;
  json ldp_params = json::object();
  std::uint64_t ldp_seed = 0;
};

inline json to_json(const CaseRecord& r) {
  json cands = json::array();
  for (const auto& c : r.candidates) {
    cands.push_back({{"explainer_id", c.explainer_id},
                     {"explanation_ref", c.explanation_ref},
                     {"ssim", c.ssim},
                     {"kept", c.kept},
                     {"reason", c.reason}});
  }
  return {{"case_id", r.case_id},
          {"input_ref", r.input_ref},
          {"gate", {{"mse", r.gate.mse}, {"kappa", r.gate.kappa}, {"passed", r.gate.passed}}},
          {"label", r.label ? json(*r.label) : json(nullptr)},
          {"candidates", cands},
          {"selected_top_k", r.selected_top_k},
          {"review_state", to_string(r.review_state)},
          {"disposition", r.disposition},
          {"flags", r.flags},
          {"reviewer_note", r.reviewer_note},
          {"created_at", r.created_at},
          {"updated_at", r.updated_at},
          {"ldp_params", r.ldp_params},
          {"ldp_seed", r.ldp_seed}};
}

inline CaseRecord record_from_json(const json& j) {
  CaseRecord r;
  r.case_id = j.at("case_id").get<std::string>();
  r.input_ref = j.at("input_ref").get<std::string>();
  const json& g = j.at("gate");
  r.gate = {g.at("mse").get<double>(), g.at("kappa").get<double>(), g.at("passed").get<bool>()};
  if (!j.at("label").is_null()) r.label = j.at("label").get<std::size_t>();
  for (const auto& c : j.at("candidates")) {
    r.candidates.push_back({c.at("explainer_id").get<std::string>(),
                            c.at("explanation_ref").get<std::string>(), c.at("ssim").get<double>(),
                            c.at("kept").get<bool>(), c.value("reason", std::string())});
  }
  r.selected_top_k = j.at("selected_top_k").get<std::vector<std::string>>();
  r.review_state = parse_review_state(j.at("review_state").get<std::string>());
  r.disposition = j.value("disposition", std::string());
  r.flags = j.value("flags", std::vector<std::string>{});
  r.reviewer_note = j.value("reviewer_note", std::string());
  r.created_at = j.value("created_at", std::string());
  r.updated_at = j.value("updated_at", std::string());
  r.ldp_params = j.value("ldp_params", json::object());
  r.ldp_seed = j.value("ldp_seed", std::uint64_t{0});
  return r;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// Random (version 4) UUID string.
inline std::string new_uuid() {
  static thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  std::uint64_t hi = rng(), lo = rng();
  hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  std::ostringstream s;
  s << std::hex << std::setfill('0') << std::setw(8) << (hi >> 32) << '-' << std::setw(4)
    << ((hi >> 16) & 0xffff) << '-' << std::setw(4) << (hi & 0xffff) << '-' << std::setw(4)
    << (lo >> 48) << '-' << std::setw(12) << (lo & 0xffffffffffffULL);
  return s.str();
}

/// Crash-consistent case store. Single writer per process; every mutation
/// rewrites cases.jsonl through a temp file and a rename.
class CaseStore {
 public:
  explicit CaseStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "cases");
    load();
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path index_path() const { return root_ / "cases.jsonl"; }

  /// Writes a tensor under the case directory; returns its store-relative ref.
  std::string put_tensor(const std::string& case_id, const std::string& name, const Tensor& t) {
    const std::string ref = "cases/" + case_id + "/" + name + ".dpxt";
    write_tensor(t, root_ / ref);
    return ref;
  }

  Tensor get_tensor(const std::string& ref) const { return read_tensor(root_ / ref); }

  void put(const CaseRecord& r) {
    std::lock_guard lock(mu_);
    if (!records_.count(r.case_id)) order_.push_back(r.case_id);
    records_[r.case_id] = r;
    flush_locked();
  }

  CaseRecord get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFoundError("unknown case id '" + id + "'");
    return it->second;
  }

  bool contains(const std::string& id) const {
    std::lock_guard lock(mu_);
    return records_.count(id) > 0;
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(mu_);
    return order_;
  }

  /// Applies `fn` to the stored record under the store lock and persists
  /// the result; `fn` may throw to abort without writing.
  template <typename Fn>
  CaseRecord update(const std::string& id, Fn&& fn) {
    std::lock_guard lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFoundError("unknown case id '" + id + "'");
    CaseRecord next = it->second;
    fn(next);
    it->second = next;
    flush_locked();
    return next;
  }

 private:
  void load() {
    const auto path = index_path();
    if (!std::filesystem::exists(path)) return;
    std::istringstream in(read_file_bytes(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      CaseRecord r;
      try {
        r = record_from_json(json::parse(line));
      } catch (const json::exception& e) {
        throw CorruptError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (!records_.count(r.case_id)) order_.push_back(r.case_id);
      records_[r.case_id] = std::move(r);
    }
  }

  void flush_locked() {
    std::string out;
    for (const auto& id : order_) {
      out += to_json(records_.at(id)).dump();
      out += '\n';
    }
    write_file_atomic(index_path(), out);
  }

  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, CaseRecord> records_;
  std::vector<std::string> order_;
};

struct PipelineConfig {
  double kappa = 0.07;
  std::size_t top_k = 2;
  double tau_ssim = ldp::kDefaultSsimTau;
  ldp::LdpParams ldp;
  std::vector<explain::Explainer> explainers{explain::Explainer::kIntegratedGradients,
                                             explain::Explainer::kGradShap};
  explain::ExplainerParams explainer_params;

  void validate() const {
    if (top_k < 1) throw ConfigError("pipeline K must be >= 1");
    if (!(kappa > 0.0)) throw ConfigError("pipeline kappa must be > 0");
    if (explainers.empty()) throw ConfigError("pipeline needs at least one explainer");
    for (auto e : explainers) {
      if (e == explain::Explainer::kGradCam) {
        throw ConfigError("grad_cam maps are too coarse for LDP release; pick another explainer");
      }
    }
    ldp.validate();
    explainer_params.validate();
  }

  json to_json() const {
    json ex = json::array();
    for (auto e : explainers) ex.push_back(explain::to_string(e));
    return {{"kappa", kappa}, {"K", top_k}, {"tau_ssim", tau_ssim}, {"ldp", ldp.to_json()},
            {"explainers", ex}};
  }
};

/// Models a pipeline run needs. `reference` feeds grad_shap baselines.
struct PipelineModels {
  const nn::Model* model = nullptr;
  const nn::Model* ae = nullptr;
  const Tensor* reference = nullptr;
  std::string model_id = "M";
};

/// passed iff the autoencoder's reconstruction mse is below kappa. Inputs
/// are reshaped to the autoencoder's (flat) input layout when sizes agree.
inline GateResult gate_anomaly(const nn::Model& ae, const Tensor& x, double kappa) {
  const Shape& want = ae.spec().input_shape;
  const double mse = nn::ae_reconstruction_error(
      ae, x.shape() != want && x.size() == element_count(want) ? x.reshaped(want) : x);
  return {mse, kappa, mse < kappa};
}

/// Survivors of the elimination test, best SSIM first (ties keep input
/// order), truncated to k. Returns explainer ids.
inline std::vector<std::string> select_top_k(const std::vector<Candidate>& candidates,
                                             std::size_t k) {
  std::vector<const Candidate*> kept;
  for (const auto& c : candidates) {
    if (c.kept) kept.push_back(&c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate* a, const Candidate* b) { return a->ssim > b->ssim; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kept.size() && i < k; ++i) out.push_back(kept[i]->explainer_id);
  return out;
}

/// Runs one input through the pipeline and persists the record.
inline CaseRecord run_case(const Tensor& x, const PipelineModels& models,
                           const PipelineConfig& cfg, CaseStore& store, std::mt19937_64& rng) {
  cfg.validate();
  if (!models.model || !models.ae) throw ConfigError("pipeline needs a model and an autoencoder");
  CaseRecord r;
  r.case_id = new_uuid();
  r.created_at = r.updated_at = utc_now();
  r.input_ref = store.put_tensor(r.case_id, "input", x);
  r.gate = gate_anomaly(*models.ae, x, cfg.kappa);
  if (!r.gate.passed) {
    r.review_state = ReviewState::kRejected;
    r.disposition = kDispositionGateRejected;
    store.put(r);
    return r;
  }
  const std::size_t label = nn::predict(*models.model, x);
  r.label = label;
  r.ldp_params = cfg.ldp.to_json();
  r.ldp_seed = rng();
  std::mt19937_64 noise_rng(r.ldp_seed);
  for (auto e : cfg.explainers) {
    const auto map = explain::explain(*models.model, e, x, label, cfg.explainer_params, rng,
                                      {models.reference, models.model_id});
    const Tensor plain = ldp::quantize_heatmap(map.values);
    ldp::LdpExplanation priv = ldp::ldp_apply(plain, cfg.ldp, noise_rng);
    priv.ssim_vs_nonprivate = ldp::ssim(plain, priv.values);
    const auto decision = ldp::elimination_test(priv, cfg.tau_ssim);
    Candidate c;
    c.explainer_id = map.explainer_id;
    c.explanation_ref = store.put_tensor(r.case_id, map.explainer_id, priv.values);
    c.ssim = *priv.ssim_vs_nonprivate;
    c.kept = decision.keep;
    c.reason = decision.reason;
    r.candidates.push_back(std::move(c));
  }
  r.selected_top_k = select_top_k(r.candidates, cfg.top_k);
  r.review_state = ReviewState::kPending;
  r.disposition = kDispositionAwaitingReview;
  if (r.selected_top_k.empty()) r.flags.push_back(kFlagNoReleasable);
  store.put(r);
  return r;
}

/// PENDING -> APPROVED or PENDING -> REJECTED, persisted.
inline CaseRecord review_decide(CaseStore& store, const std::string& case_id,
                                ReviewState decision, const std::string& note) {
  if (decision == ReviewState::kPending) {
    throw ConfigError("a review decision must be APPROVED or REJECTED");
  }
  return store.update(case_id, [&](CaseRecord& r) {
    if (r.review_state != ReviewState::kPending) {
      throw StateError("case " + case_id + " is " + to_string(r.review_state) +
                       "; only PENDING cases can be decided");
    }
    r.review_state = decision;
    r.reviewer_note = note;
    r.updated_at = utc_now();
  });
}

struct ReleasedExplanation {
  std::string explainer_id;
  Tensor values;
};

struct ReleaseBundle {
  std::string case_id;
  std::size_t label = 0;
  std::vector<ReleasedExplanation> explanations;
};

/// The label and the approved top-K LDP explanations of an APPROVED case.
inline ReleaseBundle release_artifact(const CaseStore& store, const std::string& case_id) {
  const CaseRecord r = store.get(case_id);
  if (r.review_state != ReviewState::kApproved) {
    throw StateError("case " + case_id + " is " + to_string(r.review_state) +
                     "; only APPROVED cases can be released");
  }
  if (!r.label) throw StateError("case " + case_id + " has no label");
  ReleaseBundle b{r.case_id, *r.label, {}};
  for (const auto& id : r.selected_top_k) {
    const auto it = std::find_if(r.candidates.begin(), r.candidates.end(),
                                 [&](const Candidate& c) { return c.explainer_id == id; });
    b.explanations.push_back({id, store.get_tensor(it->explanation_ref)});
  }
  return b;
}

/// Writes bundle.json plus one tensor file per explanation into `dir`.
inline void write_bundle(const ReleaseBundle& b, const std::filesystem::path& dir) {
  json files = json::array();
  for (const auto& e : b.explanations) {
    const std::string name = e.explainer_id + ".dpxt";
    write_tensor(e.values, dir / name);
    files.push_back({{"explainer_id", e.explainer_id}, {"file", name}});
  }
  const json header{{"case_id", b.case_id}, {"label", b.label}, {"explanations", files}};
  write_file_atomic(dir / "bundle.json", header.dump(2) + "\n");
}

}  // namespace dpxlab::pipeline

#endif  // DPXLAB_PIPELINE_HPP
