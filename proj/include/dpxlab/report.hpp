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

// Report generation over a workspace manifest: per-class explanation
// similarity, representation similarity per layer and the LDP SSIM table.
//
// Manifest conventions the report relies on:
//   input        one entry, (N, ...) inputs
//   label        one entry, (N) ground-truth class indices
//   prediction   one per model, (N) predicted class indices
//   attribution  per (model, explainer), (N, ...) stacked maps
//   activation   per (model, layer), (N, ...); explainer_id
//                "layer_sensitivity" marks a sensitivity tensor
// Private models carry epsilon. Each private model is paired with the
// non-private model whose id is its longest prefix, or with the only
// non-private model when there is just one.

#ifndef DPXLAB_REPORT_HPP
#define DPXLAB_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpxlab/errors.hpp"
#include "dpxlab/explainers.hpp"
#include "dpxlab/ldp.hpp"
#include "dpxlab/manifest.hpp"
#include "dpxlab/metrics.hpp"
#include "dpxlab/parallel.hpp"
#include "dpxlab/repsim.hpp"
#include "dpxlab/tensor.hpp"

namespace dpxlab::report {

using json = nlohmann::json;

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kReportDir = "report";
inline constexpr const char* kMetricsCsv = "pis_by_class.csv";
inline constexpr const char* kSummaryJson = "summary.json";
inline constexpr const char* kRepsimCsv = "repsim_layers.csv";
inline constexpr const char* kClustersJson = "repsim_clusters.json";
inline constexpr const char* kSsimCsv = "ssim_table.csv";
inline constexpr const char* kSensitivityId = "layer_sensitivity";

struct ReportConfig {
  metrics::MetricConfig metrics;
  ldp::LdpParams ldp{4.0, 4, 4};
  std::size_t n_clusters = 0;  // 0 = one cluster per layer
  std::uint64_t seed = 0;

  void validate() const {
    metrics.validate();
    ldp.validate();
  }

  json to_json() const {
    return {{"ds_threshold", metrics.ds_threshold},
            {"la_theta", metrics.la_theta},
            {"ldp", ldp.to_json()},
            {"n_clusters", n_clusters},
            {"seed", seed}};
  }
};

struct ReportFiles {
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;
  std::size_t metric_rows = 0;
  std::size_t repsim_rows = 0;
};

/// Fixed-format number for CSV cells; empty when undefined.
inline std::string cell(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

inline std::string cell(double v) { return cell(std::optional<double>(v)); }

namespace detail {

struct ModelEntries {
  std::string model_id;
  std::optional<double> epsilon;
  const ManifestEntry* prediction = nullptr;
  std::map<std::string, const ManifestEntry*> attributions;
  std::vector<const ManifestEntry*> activations;  // manifest order = depth order
  std::vector<const ManifestEntry*> sensitivities;
};

struct Inventory {
  const ManifestEntry* input = nullptr;
  const ManifestEntry* labels = nullptr;
  std::map<std::string, ModelEntries> models;
  std::vector<std::pair<std::string, std::string>> pairs;  // (non-private, private)
  std::vector<std::string> missing;
};

inline std::string describe(const std::string& role, const std::string& model,
                            const std::string& key = {}, const std::string& value = {}) {
  std::string s = role;
  if (!model.empty()) s += " (model_id=" + model;
  if (!key.empty()) s += (model.empty() ? " (" : ", ") + key + "=" + value;
  if (!model.empty() || !key.empty()) s += ")";
  return s;
}

inline Inventory take_inventory(const Manifest& m) {
  Inventory inv;
  for (const auto& e : m.entries()) {
    if (e.role == Role::kInput) {
      if (inv.input) throw ManifestError("more than one input entry");
      inv.input = &e;
      continue;
    }
    if (e.role == Role::kLabel) {
      if (inv.labels) throw ManifestError("more than one label entry");
      inv.labels = &e;
      continue;
    }
    auto& me = inv.models[e.model_id];
    me.model_id = e.model_id;
    me.epsilon = e.epsilon;
    switch (e.role) {
      case Role::kPrediction:
        if (me.prediction) throw ManifestError("model '" + e.model_id + "' has two predictions");
        me.prediction = &e;
        break;
      case Role::kAttribution: {
        if (!e.explainer_id) {
          throw ManifestError("attribution '" + e.name + "' has no explainer_id");
        }
        if (!me.attributions.emplace(*e.explainer_id, &e).second) {
          throw ManifestError("model '" + e.model_id + "' has two '" + *e.explainer_id +
                              "' attributions");
        }
        break;
      }
      case Role::kActivation:
        if (!e.layer_id) throw ManifestError("activation '" + e.name + "' has no layer_id");
        (e.explainer_id == kSensitivityId ? me.sensitivities : me.activations).push_back(&e);
        break;
      default:
        break;
    }
  }

  if (!inv.input) inv.missing.push_back(describe("input", ""));
  if (!inv.labels) inv.missing.push_back(describe("label", ""));
  std::vector<std::string> base, priv;
  for (const auto& [id, me] : inv.models) {
    if (!me.prediction) inv.missing.push_back(describe("prediction", id));
    (me.epsilon ? priv : base).push_back(id);
  }
  if (base.empty()) inv.missing.push_back("prediction (non-private model)");
  if (priv.empty()) inv.missing.push_back("prediction (private model with epsilon)");

  for (const auto& p : priv) {
    std::string best;
    for (const auto& b : base) {
      if (p.rfind(b, 0) == 0 && b.size() > best.size()) best = b;
    }
    if (best.empty() && base.size() == 1) best = base.front();
    if (best.empty()) {
      if (!base.empty()) inv.missing.push_back("non-private counterpart (model_id=" + p + ")");
      continue;
    }
    inv.pairs.emplace_back(best, p);
  }
  std::sort(inv.pairs.begin(), inv.pairs.end(), [&](const auto& x, const auto& y) {
    const auto& ex = *inv.models.at(x.second).epsilon;
    const auto& ey = *inv.models.at(y.second).epsilon;
    return std::tie(x.first, ex, x.second) < std::tie(y.first, ey, y.second);
  });

  bool any_attribution = false;
  std::set<std::string> missing_seen;
  auto need = [&](const std::string& what) {
    if (missing_seen.insert(what).second) inv.missing.push_back(what);
  };
  for (const auto& [b, p] : inv.pairs) {
    const auto& mb = inv.models.at(b);
    const auto& mp = inv.models.at(p);
    std::set<std::string> explainers;
    for (const auto& [k, _] : mb.attributions) explainers.insert(k);
    for (const auto& [k, _] : mp.attributions) explainers.insert(k);
    any_attribution = any_attribution || !explainers.empty();
    for (const auto& ex : explainers) {
      if (!mb.attributions.count(ex)) need(describe("attribution", b, "explainer_id", ex));
      if (!mp.attributions.count(ex)) need(describe("attribution", p, "explainer_id", ex));
    }
    auto layers = [](const std::vector<const ManifestEntry*>& v) {
      std::set<std::string> s;
      for (const auto* e : v) s.insert(*e->layer_id);
      return s;
    };
    for (const auto& [kind, a, c] :
         {std::tuple{std::string("activation"), layers(mb.activations), layers(mp.activations)},
          std::tuple{std::string("sensitivity"), layers(mb.sensitivities),
                     layers(mp.sensitivities)}}) {
      for (const auto& l : a) {
        if (!c.count(l)) need(describe(kind, p, "layer_id", l));
      }
      for (const auto& l : c) {
        if (!a.count(l)) need(describe(kind, b, "layer_id", l));
      }
    }
  }
  if (!inv.pairs.empty() && !any_attribution) inv.missing.push_back("attribution (any explainer)");
  return inv;
}

inline std::vector<std::size_t> as_labels(const Tensor& t, std::size_t n, const std::string& what) {
  if (t.rank() != 1 || t.dim(0) != n) {
    throw ShapeError(what + ": expected shape (" + std::to_string(n) + "), got " +
                     shape_string(t.shape()));
  }
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = t[i];
    if (!(v >= 0.0) || v != std::floor(v)) {
      throw FormatError(what + ": entry " + std::to_string(i) + " is not a class index");
    }
    out[i] = static_cast<std::size_t>(v);
  }
  return out;
}

inline void require_rows(const Tensor& t, std::size_t n, const std::string& what) {
  if (t.rank() < 2 || t.dim(0) != n) {
    throw ShapeError(what + ": expected " + std::to_string(n) + " stacked rows, got " +
                     shape_string(t.shape()));
  }
}

inline double class_accuracy(const std::vector<std::size_t>& pred,
                             const std::vector<std::size_t>& labels,
                             const std::vector<std::size_t>& idx) {
  std::size_t right = 0;
  for (auto i : idx) right += pred[i] == labels[i];
  return idx.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(idx.size());
}

inline json la_json(const metrics::LaOutcome& o) {
  return {{"pis_avg", o.pis_avg ? json(*o.pis_avg) : json(nullptr)},
          {"ds_pass_fraction", o.ds_pass_fraction},
          {"n_pairs", o.n_pairs},
          {"n_defined", o.n_defined},
          {"eliminated", o.eliminated},
          {"la_satisfied", o.la_satisfied}};
}

// evaluate_la rejects an empty pair list; an empty class slice counts as
// eliminated instead.
inline metrics::LaOutcome aggregate(const std::vector<metrics::PairEvaluation>& all,
                                    const std::vector<std::size_t>& which,
                                    const metrics::MetricConfig& cfg) {
  std::vector<metrics::PairEvaluation> picked;
  for (auto i : which) picked.push_back(all[i]);
  if (picked.empty()) {
    metrics::LaOutcome o;
    o.eliminated = true;
    return o;
  }
  return metrics::evaluate_la(picked, cfg);
}

inline std::string bool_cell(bool b) { return b ? "true" : "false"; }

}  // namespace detail

/// Descriptions of the manifest entries a report needs but cannot find.
/// An empty list means the workspace is complete.
inline std::vector<std::string> missing_inputs(const std::filesystem::path& workspace) {
  const auto path = workspace / kManifestFile;
  if (!std::filesystem::exists(path)) {
    auto rest = detail::take_inventory(Manifest{}).missing;
    rest.insert(rest.begin(), kManifestFile);
    return rest;
  }
  return detail::take_inventory(load_manifest(path)).missing;
}

/// Reads `workspace/manifest.json` and writes the report files under
/// `workspace/report/`. Output bytes depend only on the inputs and `cfg`.
inline ReportFiles generate_report(const std::filesystem::path& workspace,
                                   const ReportConfig& cfg = {}) {
  cfg.validate();
  const auto missing = missing_inputs(workspace);
  if (!missing.empty()) {
    std::string msg = "missing manifest entries:";
    for (const auto& m : missing) msg += "\n  - " + m;
    throw MissingInputError(msg);
  }
  const Manifest manifest = load_manifest(workspace / kManifestFile);
  const auto inv = detail::take_inventory(manifest);

  std::map<std::string, Tensor> cache;
  auto load = [&](const ManifestEntry* e) -> const Tensor& {
    auto it = cache.find(e->name);
    if (it == cache.end()) it = cache.emplace(e->name, manifest.load(*e)).first;
    return it->second;
  };

  const Tensor& inputs = load(inv.input);
  const std::size_t n = inputs.rank() == 0 ? 0 : inputs.dim(0);
  if (n == 0) throw ShapeError("input entry holds no examples");
  const auto labels = detail::as_labels(load(inv.labels), n, "labels");
  std::map<std::string, std::vector<std::size_t>> preds;
  for (const auto& [id, me] : inv.models) {
    preds[id] = detail::as_labels(load(me.prediction), n, "prediction of " + id);
  }
  std::set<std::size_t> class_set(labels.begin(), labels.end());
  const std::vector<std::size_t> classes(class_set.begin(), class_set.end());
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> everyone(n);
  for (std::size_t i = 0; i < n; ++i) everyone[i] = i;

  ReportFiles out;
  out.dir = workspace / kReportDir;
  std::filesystem::create_directories(out.dir);

  // Accuracy per model.
  json models_json = json::array();
  for (const auto& [id, me] : inv.models) {
    json per_class = json::object();
    for (auto c : classes) {
      per_class[std::to_string(c)] = detail::class_accuracy(preds[id], labels, by_class[c]);
    }
    models_json.push_back({{"model_id", id},
                           {"epsilon", me.epsilon ? json(*me.epsilon) : json(nullptr)},
                           {"accuracy", detail::class_accuracy(preds[id], labels, everyone)},
                           {"per_class_accuracy", per_class}});
  }

  // Explanation similarity per (pair, explainer, class).
  struct Row {
    std::string base, priv, explainer;
    std::size_t cls;
    double epsilon;
    std::size_t n_examples;
    metrics::LaOutcome la;
    std::optional<double> acc_ratio;
    double agreement;
  };
  std::vector<Row> rows;
  json pairs_json = json::array();
  for (const auto& [b, p] : inv.pairs) {
    const auto& mb = inv.models.at(b);
    const auto& mp = inv.models.at(p);
    const double eps = *mp.epsilon;
    const auto& pb = preds.at(b);
    const auto& pp = preds.at(p);

    auto ratio_for = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
      const double ab = detail::class_accuracy(pb, labels, idx);
      if (ab == 0.0) return std::nullopt;
      return metrics::acc_ratio(detail::class_accuracy(pp, labels, idx), ab);
    };
    auto agreement_for = [&](const std::vector<std::size_t>& idx) {
      std::vector<std::size_t> x, y;
      for (auto i : idx) {
        x.push_back(pb[i]);
        y.push_back(pp[i]);
      }
      return metrics::agreement(x, y);
    };

    json pair_json{{"nonprivate_model", b},
                   {"private_model", p},
                   {"epsilon", eps},
                   {"agreement", agreement_for(everyone)},
                   {"acc_ratio", ratio_for(everyone) ? json(*ratio_for(everyone)) : json(nullptr)},
                   {"explainers", json::array()}};

    for (const auto& [ex, entry_b] : mb.attributions) {
      const Tensor& sb = load(entry_b);
      const Tensor& sp = load(mp.attributions.at(ex));
      detail::require_rows(sb, n, entry_b->name);
      detail::require_rows(sp, n, mp.attributions.at(ex)->name);
      metrics::require_same_shape(sb, sp);

      // Only examples with matching predictions form a pair.
      std::vector<metrics::PairEvaluation> evals(n);
      std::vector<char> matched(n, 0);
      for (std::size_t i = 0; i < n; ++i) matched[i] = pb[i] == pp[i];
      parallel_for(n, [&](std::size_t i) {
        if (matched[i]) evals[i] = metrics::evaluate_pair(sb.row(i), sp.row(i), cfg.metrics);
      });
      auto matched_in = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::size_t> v;
        for (auto i : idx) {
          if (matched[i]) v.push_back(i);
        }
        return v;
      };
      for (auto c : classes) {
        const auto& idx = by_class[c];
        rows.push_back({b, p, ex, c, eps, idx.size(),
                        detail::aggregate(evals, matched_in(idx), cfg.metrics), ratio_for(idx),
                        agreement_for(idx)});
      }
      json e = detail::la_json(detail::aggregate(evals, matched_in(everyone), cfg.metrics));
      e["explainer_id"] = ex;
      pair_json["explainers"].push_back(e);
    }
    pairs_json.push_back(pair_json);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
    return std::tie(x.base, x.explainer, x.cls, x.epsilon, x.priv) <
           std::tie(y.base, y.explainer, y.cls, y.epsilon, y.priv);
  });
  {
    std::ostringstream csv;
    csv << "nonprivate_model,private_model,explainer,class,epsilon,n_examples,n_pairs,"
           "n_defined,pis_avg,ds_pass_fraction,acc_ratio,agreement,eliminated,la_satisfied\n";
    for (const auto& r : rows) {
      csv << r.base << ',' << r.priv << ',' << r.explainer << ',' << r.cls << ','
          << cell(r.epsilon) << ',' << r.n_examples << ',' << r.la.n_pairs << ','
          << r.la.n_defined << ',' << cell(r.la.pis_avg) << ',' << cell(r.la.ds_pass_fraction)
          << ',' << cell(r.acc_ratio) << ',' << cell(r.agreement) << ','
          << detail::bool_cell(r.la.eliminated) << ',' << detail::bool_cell(r.la.la_satisfied)
          << '\n';
    }
    write_file_atomic(out.dir / kMetricsCsv, csv.str());
    out.files.push_back(out.dir / kMetricsCsv);
    out.metric_rows = rows.size();
  }

  // Direction check: at each base model's smallest epsilon, the private
  // model should not beat the non-private one.
  json direction = json::array();
  {
    std::map<std::string, std::string> lowest;
    for (const auto& [b, p] : inv.pairs) {
      if (!lowest.count(b)) lowest[b] = p;  // pairs are sorted by epsilon
    }
    for (const auto& [b, p] : lowest) {
      const double ab = detail::class_accuracy(preds.at(b), labels, everyone);
      const double ap = detail::class_accuracy(preds.at(p), labels, everyone);
      direction.push_back({{"nonprivate_model", b},
                           {"private_model", p},
                           {"epsilon", *inv.models.at(p).epsilon},
                           {"nonprivate_accuracy", ab},
                           {"private_accuracy", ap},
                           {"private_not_better", ap <= ab}});
    }
  }

  // Representation similarity per layer.
  struct LayerJob {
    std::string base, priv, kind, layer_id;
    std::size_t layer_index;
    const ManifestEntry *eb, *ep;
  };
  std::vector<LayerJob> jobs;
  for (const auto& [b, p] : inv.pairs) {
    const auto& mb = inv.models.at(b);
    const auto& mp = inv.models.at(p);
    for (const auto& [kind, lb, lp] :
         {std::tuple{"activation", &mb.activations, &mp.activations},
          std::tuple{"sensitivity", &mb.sensitivities, &mp.sensitivities}}) {
      for (std::size_t k = 0; k < lb->size(); ++k) {
        const auto* eb = (*lb)[k];
        const auto it = std::find_if(lp->begin(), lp->end(), [&](const ManifestEntry* e) {
          return *e->layer_id == *eb->layer_id;
        });
        jobs.push_back({b, p, kind, *eb->layer_id, k, eb, *it});
      }
    }
  }
  for (const auto& j : jobs) {
    detail::require_rows(load(j.eb), n, j.eb->name);
    detail::require_rows(load(j.ep), n, j.ep->name);
  }
  const repsim::ActivationBatch confounder = repsim::batch_of(inputs, "input");
  struct LayerResult {
    std::optional<double> cka_linear, cka_rbf, dcka_linear;
    repsim::IndependenceResult hsic;
  };
  std::vector<LayerResult> layer_results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t k) {
    const auto& j = jobs[k];
    const auto a = repsim::batch_of(cache.at(j.eb->name), j.layer_id, j.base);
    const auto c = repsim::batch_of(cache.at(j.ep->name), j.layer_id, j.priv);
    auto& r = layer_results[k];
    try {
      r.cka_linear = repsim::cka(a, c, repsim::Kernel::kLinear);
    } catch (const Error&) {
    }
    try {
      r.cka_rbf = repsim::cka(a, c, repsim::Kernel::kRbf);
    } catch (const Error&) {
    }
    try {
      r.dcka_linear = repsim::dcka(a, c, confounder, repsim::Kernel::kLinear);
    } catch (const Error&) {
    }
    repsim::TestOptions opt;
    opt.seed = explain::detail::derive_seed(cfg.seed, k);
    r.hsic = repsim::hsic_gamma_test(a, c, repsim::Kernel::kLinear, opt);
  });
  json clusters_json = json::array();
  {
    std::ostringstream csv;
    csv << "nonprivate_model,private_model,epsilon,kind,layer_index,layer_id,cka_linear,"
           "cka_rbf,dcka_linear,hsic,hsic_p_value,hsic_reject,hsic_null\n";
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      const auto& j = jobs[k];
      const auto& r = layer_results[k];
      csv << j.base << ',' << j.priv << ',' << cell(*inv.models.at(j.priv).epsilon) << ','
          << j.kind << ',' << j.layer_index << ',' << j.layer_id << ',' << cell(r.cka_linear)
          << ',' << cell(r.cka_rbf) << ',' << cell(r.dcka_linear) << ',' << cell(r.hsic.hsic)
          << ',' << cell(r.hsic.p_value) << ',' << detail::bool_cell(r.hsic.reject_h0) << ','
          << (r.hsic.method == repsim::NullMethod::kGamma ? "gamma" : "permutation") << '\n';
    }
    write_file_atomic(out.dir / kRepsimCsv, csv.str());
    out.files.push_back(out.dir / kRepsimCsv);
    out.repsim_rows = jobs.size();

    // One cluster series per (pair, kind) over the defined linear CKA values.
    std::map<std::tuple<std::string, std::string, std::string>,
             std::vector<std::pair<std::size_t, double>>>
        series;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      auto& s = series[{jobs[k].base, jobs[k].priv, jobs[k].kind}];
      if (layer_results[k].cka_linear) s.emplace_back(jobs[k].layer_index, *layer_results[k].cka_linear);
    }
    for (const auto& [key, values] : series) {
      const auto& [b, p, kind] = key;
      json entry{{"nonprivate_model", b},
                 {"private_model", p},
                 {"epsilon", *inv.models.at(p).epsilon},
                 {"kind", kind},
                 {"metric", "cka_linear"},
                 {"clusters", json::array()}};
      if (!values.empty()) {
        const std::size_t nc =
            cfg.n_clusters == 0 ? values.size() : std::min(cfg.n_clusters, values.size());
        for (const auto& c : repsim::aggregate_layer_similarity(values, nc)) {
          entry["clusters"].push_back({{"cluster_index", c.cluster_index},
                                       {"first_layer", c.first_layer},
                                       {"size", c.size},
                                       {"median", c.median}});
        }
      }
      clusters_json.push_back(entry);
    }
    write_file_atomic(out.dir / kClustersJson, json{{"series", clusters_json}}.dump(2) + "\n");
    out.files.push_back(out.dir / kClustersJson);
  }

  // SSIM between each non-private explanation and its LDP release.
  {
    std::set<std::string> bases;
    for (const auto& [b, _] : inv.pairs) bases.insert(b);
    std::ostringstream csv;
    std::set<std::string> explainer_set;
    for (const auto& b : bases) {
      for (const auto& [ex, _] : inv.models.at(b).attributions) explainer_set.insert(ex);
    }
    const std::vector<std::string> explainers(explainer_set.begin(), explainer_set.end());
    csv << "model,class";
    for (const auto& ex : explainers) csv << ',' << ex;
    csv << '\n';
    std::uint64_t stream = 0;
    for (const auto& b : bases) {
      std::map<std::string, std::vector<double>> ssim_of;
      for (const auto& ex : explainers) {
        auto it = inv.models.at(b).attributions.find(ex);
        const std::uint64_t base_seed = explain::detail::derive_seed(cfg.seed, ++stream);
        if (it == inv.models.at(b).attributions.end()) continue;
        const Tensor& s = load(it->second);
        std::vector<double> v(n);
        parallel_for(n, [&](std::size_t i) {
          const Tensor q = ldp::quantize_heatmap(ldp::to_heatmap(s.row(i)));
          const auto noisy = ldp::ldp_apply(q, cfg.ldp, explain::detail::derive_seed(base_seed, i));
          v[i] = ldp::ssim(q, noisy.values);
        });
        ssim_of[ex] = std::move(v);
      }
      for (auto c : classes) {
        csv << b << ',' << c;
        for (const auto& ex : explainers) {
          std::optional<double> mean;
          if (auto it = ssim_of.find(ex); it != ssim_of.end()) {
            double sum = 0.0;
            for (auto i : by_class[c]) sum += it->second[i];
            mean = sum / static_cast<double>(by_class[c].size());
          }
          csv << ',' << cell(mean);
        }
        csv << '\n';
      }
    }
    write_file_atomic(out.dir / kSsimCsv, csv.str());
    out.files.push_back(out.dir / kSsimCsv);
  }

  json summary{{"config", cfg.to_json()},
               {"examples", n},
               {"classes", classes},
               {"models", models_json},
               {"pairs", pairs_json},
               {"direction_check", direction}};
  write_file_atomic(out.dir / kSummaryJson, summary.dump(2) + "\n");
  out.files.push_back(out.dir / kSummaryJson);
  return out;
}

}  // namespace dpxlab::report

#endif  // DPXLAB_REPORT_HPP
