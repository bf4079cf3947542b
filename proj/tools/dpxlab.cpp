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

// dpxlab command-line tool. Every subcommand is a thin shell over the
// library; results go to stdout as JSON, errors to stderr as JSON.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpxlab/data.hpp"
#include "dpxlab/experiment.hpp"
#include "dpxlab/explainers.hpp"
#include "dpxlab/ldp.hpp"
#include "dpxlab/manifest.hpp"
#include "dpxlab/metrics.hpp"
#include "dpxlab/parallel.hpp"
#include "dpxlab/pipeline.hpp"
#include "dpxlab/report.hpp"
#include "dpxlab/repsim.hpp"
#include "dpxlab/snapshot.hpp"
#include "dpxlab/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dpxlab::cli {
namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct Global {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string workspace = ".";
};

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

// SHA-256 over every file below `dir`, in sorted relative-path order, with
// each path hashed ahead of its bytes.
std::string digest_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& f : files) {
    const std::string name = f.generic_string();
    EVP_DigestUpdate(ctx, name.data(), name.size() + 1);
    const std::string bytes = read_file_bytes(dir / f);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::size_t> labels_of(const Tensor& t) {
  std::vector<std::size_t> out;
  for (double v : t.values()) {
    if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("label tensor holds a non-index value");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Tensor labels_tensor(const std::vector<std::size_t>& v) {
  return Tensor::vector(std::vector<double>(v.begin(), v.end()));
}

// Tensor source: a manifest entry name when a manifest is given, else a file.
Tensor load_input(const std::string& manifest, const std::string& ref) {
  if (manifest.empty()) return read_tensor(ref);
  const Manifest m = load_manifest(manifest);
  const ManifestEntry* e = m.find(ref);
  if (!e) throw NotFoundError("manifest has no entry '" + ref + "'");
  return m.load(*e);
}

// ---------------------------------------------------------------- dataset

struct DatasetOpts {
  std::string kind = "moons";
  std::size_t n = 300, classes = 3, side = 16, dim = 8;
  double noise = 0.1, separation = 3.0;
  std::string out;
};

nn::Dataset make_dataset(const DatasetOpts& o, std::uint64_t seed) {
  if (o.kind == "moons") return data::moon_images(o.n, o.classes, o.side, o.noise, seed);
  if (o.kind == "blobs") return data::gaussian_blobs(o.n, o.classes, o.dim, o.separation, o.noise, seed);
  throw ConfigError("unknown dataset kind '" + o.kind + "' (moons, blobs)");
}

int cmd_dataset(const DatasetOpts& o, const Global& g) {
  const auto d = make_dataset(o, g.seed);
  fs::create_directories(o.out);
  write_tensor(d.inputs, fs::path(o.out) / "inputs.dpxt");
  write_tensor(labels_tensor(d.labels), fs::path(o.out) / "labels.dpxt");
  emit({{"inputs", (fs::path(o.out) / "inputs.dpxt").string()},
        {"labels", (fs::path(o.out) / "labels.dpxt").string()},
        {"examples", d.size()},
        {"shape", d.inputs.shape()}});
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainOpts {
  std::string inputs, labels, out;
  std::string arch = "mlp";
  std::string mode = "non_private";
  std::string objective = "classifier";
  std::vector<std::size_t> hidden{32, 32};
  std::size_t conv_channels = 8, classes = 0;
  nn::TrainConfig cfg;
  TrainOpts() {
    cfg.epochs = 30;
    cfg.batch_size = 32;
  }
};

nn::NetworkSpec build_spec(const TrainOpts& o, const Shape& example, std::size_t classes) {
  const std::size_t dim = element_count(example);
  if (o.objective == "autoencoder") {
    if (o.hidden.empty()) throw ConfigError("autoencoder needs one hidden width");
    return nn::NetworkSpec::autoencoder(dim, o.hidden.front());
  }
  if (o.arch == "mlp") {
    nn::NetworkSpec s = nn::NetworkSpec::mlp(dim, o.hidden, classes);
    if (example.size() > 1) {
      s.input_shape = example;
      s.layers.insert(s.layers.begin(), nn::LayerSpec::flatten());
    }
    return s;
  }
  if (o.arch == "tiny_cnn") {
    if (example.size() != 3) throw ConfigError("tiny_cnn needs (C, H, W) examples");
    return nn::NetworkSpec::tiny_cnn(example[0], example[1], example[2], classes, o.conv_channels);
  }
  throw ConfigError("unknown architecture '" + o.arch + "' (mlp, tiny_cnn)");
}

int cmd_train(TrainOpts o, const Global& g) {
  nn::Dataset d;
  if (o.inputs.empty() != o.labels.empty()) {
    throw ConfigError("--inputs and --labels go together");
  }
  if (o.inputs.empty()) {
    d = data::moon_images(300, 3, 16, 0.1, g.seed);
  } else {
    d.inputs = read_tensor(o.inputs);
    d.labels = labels_of(read_tensor(o.labels));
    d.classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  }
  if (o.classes) d.classes = o.classes;
  d.validate();
  const Shape example(d.inputs.shape().begin() + 1, d.inputs.shape().end());
  const auto spec = build_spec(o, example, d.classes);
  o.cfg.seed = g.seed;
  const auto mode = nn::parse_mode(o.mode);
  nn::Model m;
  if (o.objective == "autoencoder") {
    if (mode != nn::TrainingMode::kNonPrivate) throw ConfigError("the autoencoder trains non-privately");
    m = nn::train_autoencoder(d.inputs.reshaped({d.size(), element_count(example)}), spec, o.cfg);
  } else if (o.objective == "classifier") {
    m = nn::train(d, spec, o.cfg, mode);
  } else {
    throw ConfigError("unknown objective '" + o.objective + "'");
  }
  if (o.out.empty()) {
    std::string name = o.objective == "autoencoder" ? "ae" : o.mode;
    if (mode == nn::TrainingMode::kDp) name += "-eps" + report::cell(o.cfg.epsilon_target);
    o.out = (fs::path(g.workspace) / "models" / (name + "-seed" + std::to_string(g.seed))).string();
  }
  nn::save_model(m, o.out);
  json out{{"snapshot", o.out},
           {"digest", digest_dir(o.out)},
           {"provenance", nn::provenance_to_json(m.provenance())}};
  if (o.objective == "classifier") out["train_accuracy"] = nn::accuracy(m, d);
  emit(out);
  return 0;
}

// ---------------------------------------------------------------- explain

struct ExplainerFlags {
  explain::ExplainerParams p;
  std::string target_layer;

  explain::ExplainerParams params() const {
    explain::ExplainerParams out = p;
    if (!target_layer.empty()) out.gradcam.target_layer = target_layer;
    return out;
  }
};

void add_explainer_flags(CLI::App* app, ExplainerFlags& f) {
  app->add_option("--sg-samples", f.p.smoothgrad.n_samples, "SmoothGrad sample count");
  app->add_option("--sg-noise", f.p.smoothgrad.noise_sigma_fraction, "SmoothGrad noise fraction");
  app->add_option("--ig-steps", f.p.ig.steps, "Integrated Gradients steps");
  app->add_option("--gs-baselines", f.p.gradshap.n_baselines, "Grad-SHAP baselines");
  app->add_option("--gs-alpha", f.p.gradshap.n_alpha, "Grad-SHAP interpolation points");
  app->add_option("--target-layer", f.target_layer, "Grad-CAM layer id");
}

struct ExplainOpts {
  std::string model, inputs, reference, out, explainer = "saliency";
  std::optional<std::size_t> index;
  long long class_index = -1;
  ExplainerFlags flags;
};

int cmd_explain(const ExplainOpts& o, const Global& g) {
  const nn::Model m = nn::load_model(o.model);
  const Tensor all = read_tensor(o.inputs);
  const Tensor reference = o.reference.empty() ? all : read_tensor(o.reference);
  const auto e = explain::parse_explainer(o.explainer);
  const auto params = o.flags.params();
  std::vector<std::size_t> rows;
  if (o.index) {
    rows.push_back(*o.index);
  } else {
    for (std::size_t i = 0; i < all.dim(0); ++i) rows.push_back(i);
  }
  std::vector<Tensor> maps(rows.size());
  std::vector<std::size_t> classes(rows.size());
  parallel_for(rows.size(), [&](std::size_t k) {
    const Tensor x = all.row(rows[k]);
    classes[k] = o.class_index < 0 ? nn::predict(m, x) : static_cast<std::size_t>(o.class_index);
    std::mt19937_64 rng(explain::detail::derive_seed(g.seed, rows[k]));
    maps[k] = explain::explain(m, e, x, classes[k], params, rng, {&reference, o.model}).values;
  });
  const Tensor result = o.index ? maps.front() : stack(maps);
  write_tensor(result, o.out);
  emit({{"out", o.out},
        {"explainer", explain::to_string(e)},
        {"params", params.used_by(e)},
        {"shape", result.shape()},
        {"classes", classes}});
  return 0;
}

// ---------------------------------------------------------------- metrics

struct PairOpts {
  std::string manifest, a, b, pred_a, pred_b;
  bool per_row = false;
  metrics::MetricConfig cfg;
};

json evaluation_json(const metrics::PairEvaluation& e) {
  return {{"ds", e.ds}, {"pis", opt_json(e.pis)}, {"n_pos_common", e.n_pos_common},
          {"passed_ds", e.passed_ds}};
}

int cmd_ds_pis(const PairOpts& o, bool want_pis) {
  o.cfg.validate();
  const Tensor a = load_input(o.manifest, o.a);
  const Tensor b = load_input(o.manifest, o.b);
  if (!o.per_row) {
    if (!want_pis) {
      emit({{"ds", metrics::disagreement_score(a, b)}});
    } else {
      emit({{"pis", metrics::pis(a, b)}});
    }
    return 0;
  }
  metrics::require_same_shape(a, b);
  std::vector<char> matched(a.dim(0), 1);
  if (!o.pred_a.empty() || !o.pred_b.empty()) {
    const auto pa = labels_of(load_input(o.manifest, o.pred_a));
    const auto pb = labels_of(load_input(o.manifest, o.pred_b));
    if (pa.size() != a.dim(0) || pb.size() != a.dim(0)) {
      throw ShapeError("prediction vectors must have one entry per row");
    }
    for (std::size_t i = 0; i < pa.size(); ++i) matched[i] = pa[i] == pb[i];
  }
  std::vector<metrics::PairEvaluation> evals;
  json rows = json::array();
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    if (!matched[i]) {
      rows.push_back(nullptr);
      continue;
    }
    evals.push_back(metrics::evaluate_pair(a.row(i), b.row(i), o.cfg));
    rows.push_back(evaluation_json(evals.back()));
  }
  json out{{"rows", rows}};
  if (want_pis && !evals.empty()) {
    const auto la = metrics::evaluate_la(evals, o.cfg);
    out["la"] = {{"pis_avg", opt_json(la.pis_avg)},
                 {"ds_pass_fraction", la.ds_pass_fraction},
                 {"n_pairs", la.n_pairs},
                 {"n_defined", la.n_defined},
                 {"eliminated", la.eliminated},
                 {"la_satisfied", la.la_satisfied}};
  }
  emit(out);
  return 0;
}

int cmd_agreement(const PairOpts& o) {
  const auto a = labels_of(load_input(o.manifest, o.a));
  const auto b = labels_of(load_input(o.manifest, o.b));
  emit({{"agreement", metrics::agreement(a, b)}});
  return 0;
}

// ----------------------------------------------------------------- report

struct ReportOpts {
  report::ReportConfig cfg;
};

void add_report_flags(CLI::App* app, report::ReportConfig& c) {
  app->add_option("--ds-threshold", c.metrics.ds_threshold, "DS pass threshold (fraction)");
  app->add_option("--theta", c.metrics.la_theta, "localization threshold");
  app->add_option("--ldp-epsilon", c.ldp.epsilon, "LDP epsilon for the SSIM table");
  app->add_option("--ldp-n", c.ldp.n, "LDP differing-pixel bound");
  app->add_option("--ldp-b", c.ldp.b, "LDP cell side");
  app->add_option("--n-clusters", c.n_clusters, "layer clusters (0 = one per layer)");
}

json files_json(const report::ReportFiles& f) {
  json files = json::array();
  for (const auto& p : f.files) files.push_back(p.string());
  return {{"dir", f.dir.string()}, {"files", files}, {"metric_rows", f.metric_rows},
          {"repsim_rows", f.repsim_rows}};
}

int cmd_report(report::ReportConfig cfg, const Global& g) {
  cfg.seed = g.seed;
  emit(files_json(report::generate_report(g.workspace, cfg)));
  return 0;
}

// ----------------------------------------------------------------- repsim

struct RepsimOpts {
  std::string a, b, confounder, kernel = "linear";
  double alpha = 0.05;
  std::vector<double> values;
  std::size_t clusters = 1;
};

int cmd_repsim(const std::string& which, const RepsimOpts& o, const Global& g) {
  if (which == "clusters") {
    std::vector<std::pair<std::size_t, double>> per_layer;
    for (std::size_t i = 0; i < o.values.size(); ++i) per_layer.emplace_back(i, o.values[i]);
    json out = json::array();
    for (const auto& c : repsim::aggregate_layer_similarity(per_layer, o.clusters)) {
      out.push_back({{"cluster_index", c.cluster_index}, {"first_layer", c.first_layer},
                     {"size", c.size}, {"median", c.median}});
    }
    emit({{"clusters", out}});
    return 0;
  }
  const auto kernel = repsim::parse_kernel(o.kernel);
  const auto a = repsim::batch_of(read_tensor(o.a));
  const auto b = repsim::batch_of(read_tensor(o.b));
  if (which == "cka") {
    emit({{"cka", repsim::cka(a, b, kernel)}, {"kernel", o.kernel}});
  } else if (which == "dcka") {
    const auto c = repsim::batch_of(read_tensor(o.confounder));
    const auto r = repsim::dcka_detailed(a, b, c, kernel);
    emit({{"dcka", r.value}, {"kernel", o.kernel}, {"slope_a", r.slope_a}, {"slope_b", r.slope_b},
          {"confounder_constant", r.confounder_constant}});
  } else {
    repsim::TestOptions opt;
    opt.alpha = o.alpha;
    opt.seed = g.seed;
    const auto r = repsim::hsic_gamma_test(a, b, kernel, opt);
    emit({{"hsic", r.hsic}, {"statistic", r.statistic}, {"p_value", r.p_value},
          {"reject_h0", r.reject_h0}, {"kernel", repsim::to_string(r.kernel)}, {"alpha", r.alpha},
          {"null", r.method == repsim::NullMethod::kGamma ? "gamma" : "permutation"},
          {"gamma_shape", r.gamma_shape}, {"gamma_scale", r.gamma_scale},
          {"permutations", r.permutations}});
  }
  return 0;
}

// -------------------------------------------------------------------- ldp

struct LdpOpts {
  std::string in, out, a, b;
  ldp::LdpParams params;
  bool quantize = false;
  double range = 255.0;
};

int cmd_ldp_apply(const LdpOpts& o, const Global& g) {
  Tensor img = read_tensor(o.in);
  if (o.quantize) img = ldp::quantize_heatmap(ldp::to_heatmap(img));
  auto r = ldp::ldp_apply(img, o.params, g.seed);
  r.ssim_vs_nonprivate = ldp::ssim(img, r.values);
  write_tensor(r.values, o.out);
  json out = r.to_json();
  out["out"] = o.out;
  emit(out);
  return 0;
}

int cmd_ldp_ssim(const LdpOpts& o) {
  const auto r = ldp::ssim_detailed(read_tensor(o.a), read_tensor(o.b), o.range);
  emit({{"ssim", r.value}, {"global_window", r.global_window}});
  return 0;
}

// --------------------------------------------------------------- pipeline

struct PipelineOpts {
  std::string store, model, ae, input, reference, case_id, decision, note, out;
  std::optional<std::size_t> index;
  std::vector<std::string> explainers;
  pipeline::PipelineConfig cfg;
  ExplainerFlags flags;
};

int cmd_pipeline_run(PipelineOpts o, const Global& g) {
  const nn::Model m = nn::load_model(o.model);
  const nn::Model ae = nn::load_model(o.ae);
  Tensor x = read_tensor(o.input);
  if (o.index) x = x.row(*o.index);
  std::optional<Tensor> reference;
  if (!o.reference.empty()) reference = read_tensor(o.reference);
  if (!o.explainers.empty()) {
    o.cfg.explainers.clear();
    for (const auto& e : o.explainers) o.cfg.explainers.push_back(explain::parse_explainer(e));
  }
  o.cfg.explainer_params = o.flags.params();
  pipeline::CaseStore store(o.store);
  std::mt19937_64 rng(g.seed);
  const auto r = pipeline::run_case(x, {&m, &ae, reference ? &*reference : nullptr, o.model},
                                    o.cfg, store, rng);
  emit(pipeline::to_json(r));
  return 0;
}

int cmd_pipeline_review(const PipelineOpts& o) {
  pipeline::CaseStore store(o.store);
  emit(pipeline::to_json(
      pipeline::review_decide(store, o.case_id, pipeline::parse_review_state(o.decision), o.note)));
  return 0;
}

int cmd_pipeline_release(const PipelineOpts& o) {
  pipeline::CaseStore store(o.store);
  const auto bundle = pipeline::release_artifact(store, o.case_id);
  fs::create_directories(o.out);
  pipeline::write_bundle(bundle, o.out);
  emit(nn::read_json_file(fs::path(o.out) / "bundle.json"));
  return 0;
}

// ------------------------------------------------------------- experiment

int cmd_experiment(experiment::ExperimentConfig cfg, const Global& g) {
  cfg.seed = g.seed;
  cfg.report.seed = g.seed;
  const auto r = experiment::run(g.workspace, cfg);
  json models = json::array();
  for (const auto& s : r.models) {
    models.push_back({{"model_id", s.model_id}, {"epsilon", opt_json(s.epsilon)},
                      {"noise_multiplier", opt_json(s.noise_multiplier)},
                      {"test_accuracy", s.test_accuracy}});
  }
  emit({{"models", models}, {"report", files_json(r.report)}});
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"dpxlab: private explanations toolkit"};
  app.set_config("--config", "", "TOML config file; flags override it");
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "seed for every random choice");
  app.add_option("--threads", g.threads, "worker thread cap (0 = all cores)");
  app.add_option("--workspace", g.workspace, "workspace root")->envname("DPXLAB_WORKSPACE");

  DatasetOpts dso;
  auto* dataset = app.add_subcommand("dataset", "write a seeded synthetic dataset");
  dataset->add_option("--kind", dso.kind, "moons or blobs");
  dataset->add_option("--n", dso.n, "examples");
  dataset->add_option("--classes", dso.classes, "classes");
  dataset->add_option("--side", dso.side, "image side (moons)");
  dataset->add_option("--dim", dso.dim, "features (blobs)");
  dataset->add_option("--noise", dso.noise, "pixel noise or blob spread");
  dataset->add_option("--separation", dso.separation, "blob centre distance");
  dataset->add_option("--out", dso.out, "output directory")->required();

  TrainOpts to;
  auto* train = app.add_subcommand("train", "train a classifier or autoencoder");
  train->add_option("--inputs", to.inputs, "(N, ...) input tensor");
  train->add_option("--labels", to.labels, "(N) label tensor");
  train->add_option("--out", to.out, "snapshot directory");
  train->add_option("--arch", to.arch, "mlp or tiny_cnn");
  train->add_option("--mode", to.mode, "non_private or dp");
  train->add_option("--objective", to.objective, "classifier or autoencoder");
  train->add_option("--hidden", to.hidden, "hidden widths")->delimiter(',');
  train->add_option("--conv-channels", to.conv_channels, "tiny_cnn channels");
  train->add_option("--classes", to.classes, "class count (default: max label + 1)");
  train->add_option("--epsilon", to.cfg.epsilon_target, "target epsilon (dp)");
  train->add_option("--delta", to.cfg.delta, "delta (dp)");
  train->add_option("--clip", to.cfg.clip_norm, "per-example clip norm (dp)");
  train->add_option("--batch", to.cfg.batch_size, "batch size");
  train->add_option("--lr", to.cfg.learning_rate, "learning rate");
  train->add_option("--epochs", to.cfg.epochs, "epochs");

  ExplainOpts eo;
  auto* expl = app.add_subcommand("explain", "attribution maps for inputs");
  expl->add_option("--model", eo.model, "snapshot directory")->required();
  expl->add_option("--inputs", eo.inputs, "(N, ...) input tensor")->required();
  expl->add_option("--index", eo.index, "explain one row only");
  expl->add_option("--explainer", eo.explainer, "saliency, smoothgrad, ig, grad_shap, grad_cam");
  expl->add_option("--class", eo.class_index, "class to explain (default: prediction)");
  expl->add_option("--reference", eo.reference, "grad_shap baselines (default: the inputs)");
  expl->add_option("--out", eo.out, "output tensor")->required();
  add_explainer_flags(expl, eo.flags);

  PairOpts po;
  auto* met = app.add_subcommand("metrics", "explanation comparison");
  met->require_subcommand(1);
  auto add_pair = [&](CLI::App* s) {
    s->add_option("--manifest", po.manifest, "read --a/--b as manifest entry names");
    s->add_option("--a", po.a, "first tensor")->required();
    s->add_option("--b", po.b, "second tensor")->required();
  };
  auto* m_ds = met->add_subcommand("ds", "disagreement score");
  auto* m_pis = met->add_subcommand("pis", "privacy invariance score");
  for (auto* s : {m_ds, m_pis}) {
    add_pair(s);
    s->add_flag("--per-row", po.per_row, "treat axis 0 as examples");
    s->add_option("--pred-a", po.pred_a, "predictions for --a (pairs need equal labels)");
    s->add_option("--pred-b", po.pred_b, "predictions for --b");
    s->add_option("--ds-threshold", po.cfg.ds_threshold, "DS pass threshold (fraction)");
    s->add_option("--theta", po.cfg.la_theta, "localization threshold");
  }
  auto* m_agree = met->add_subcommand("agreement", "prediction agreement");
  add_pair(m_agree);
  report::ReportConfig mrc;
  auto* m_report = met->add_subcommand("report", "similarity report over the workspace");
  add_report_flags(m_report, mrc);

  RepsimOpts ro;
  auto* rep = app.add_subcommand("repsim", "representation similarity");
  rep->require_subcommand(1);
  std::map<std::string, CLI::App*> rep_cmds;
  for (const char* name : {"hsic", "cka", "dcka"}) {
    auto* s = rep->add_subcommand(name, std::string(name) + " between two (N, ...) batches");
    s->add_option("--a", ro.a, "first batch")->required();
    s->add_option("--b", ro.b, "second batch")->required();
    s->add_option("--kernel", ro.kernel, "linear or rbf");
    rep_cmds[name] = s;
  }
  rep_cmds["hsic"]->add_option("--alpha", ro.alpha, "significance level");
  rep_cmds["dcka"]->add_option("--confounder", ro.confounder, "confounder batch")->required();
  auto* r_cl = rep->add_subcommand("clusters", "median per contiguous layer cluster");
  r_cl->add_option("--values", ro.values, "per-layer values in depth order")
      ->delimiter(',')
      ->required();
  r_cl->add_option("--clusters", ro.clusters, "cluster count");
  rep_cmds["clusters"] = r_cl;

  LdpOpts lo;
  lo.params.epsilon = 4.0;
  auto* ldpc = app.add_subcommand("ldp", "local DP for explanation images");
  ldpc->require_subcommand(1);
  auto* l_apply = ldpc->add_subcommand("apply", "pixelize and add Laplace noise");
  l_apply->add_option("--in", lo.in, "(H, W) image in 0..255")->required();
  l_apply->add_option("--out", lo.out, "output tensor")->required();
  l_apply->add_option("--epsilon", lo.params.epsilon, "LDP epsilon");
  l_apply->add_option("--n", lo.params.n, "differing-pixel bound");
  l_apply->add_option("--b", lo.params.b, "cell side");
  l_apply->add_flag("--quantize", lo.quantize, "map an attribution to 0..255 first");
  auto* l_ssim = ldpc->add_subcommand("ssim", "structural similarity");
  l_ssim->add_option("--a", lo.a, "first image")->required();
  l_ssim->add_option("--b", lo.b, "second image")->required();
  l_ssim->add_option("--range", lo.range, "dynamic range");

  PipelineOpts pio;
  auto* pipe = app.add_subcommand("pipeline", "label-only explanation service");
  pipe->require_subcommand(1);
  auto* p_run = pipe->add_subcommand("run", "gate, predict, explain and store one input");
  auto* p_review = pipe->add_subcommand("review", "decide a pending case");
  auto* p_release = pipe->add_subcommand("release", "export an approved case");
  for (auto* s : {p_run, p_review, p_release}) {
    s->add_option("--store", pio.store, "case store directory")->required();
  }
  p_run->add_option("--model", pio.model, "classifier snapshot")->required();
  p_run->add_option("--ae", pio.ae, "autoencoder snapshot")->required();
  p_run->add_option("--input", pio.input, "input tensor")->required();
  p_run->add_option("--index", pio.index, "row of --input to use");
  p_run->add_option("--reference", pio.reference, "grad_shap baselines");
  p_run->add_option("--explainers", pio.explainers, "candidate explainers")->delimiter(',');
  p_run->add_option("--kappa", pio.cfg.kappa, "gate threshold");
  p_run->add_option("--top-k", pio.cfg.top_k, "explanations to keep");
  p_run->add_option("--tau", pio.cfg.tau_ssim, "SSIM elimination threshold");
  p_run->add_option("--ldp-epsilon", pio.cfg.ldp.epsilon, "LDP epsilon");
  p_run->add_option("--ldp-n", pio.cfg.ldp.n, "LDP differing-pixel bound");
  p_run->add_option("--ldp-b", pio.cfg.ldp.b, "LDP cell side");
  add_explainer_flags(p_run, pio.flags);
  p_review->add_option("--case", pio.case_id, "case id")->required();
  p_review->add_option("--decision", pio.decision, "APPROVED or REJECTED")->required();
  p_review->add_option("--note", pio.note, "reviewer note");
  p_release->add_option("--case", pio.case_id, "case id")->required();
  p_release->add_option("--out", pio.out, "bundle directory")->required();

  report::ReportConfig rc;
  auto* rep_all = app.add_subcommand("report", "all report files for the workspace");
  add_report_flags(rep_all, rc);

  experiment::ExperimentConfig xc;
  auto* exp = app.add_subcommand("experiment", "desk-scale study into the workspace");
  exp->add_option("--n-train", xc.n_train, "training examples");
  exp->add_option("--n-test", xc.n_test, "test examples");
  exp->add_option("--epsilons", xc.epsilons, "private model budgets")->delimiter(',');
  exp->add_option("--epochs", xc.train.epochs, "epochs");
  exp->add_option("--hidden", xc.hidden, "hidden widths")->delimiter(',');
  add_report_flags(exp, xc.report);
  ExplainerFlags xflags;
  add_explainer_flags(exp, xflags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), kExitUsage);
  }

  set_max_threads(g.threads);
  try {
    if (*dataset) return cmd_dataset(dso, g);
    if (*train) return cmd_train(to, g);
    if (*expl) return cmd_explain(eo, g);
    if (*m_ds) return cmd_ds_pis(po, false);
    if (*m_pis) return cmd_ds_pis(po, true);
    if (*m_agree) return cmd_agreement(po);
    if (*m_report) return cmd_report(mrc, g);
    for (const auto& [name, s] : rep_cmds) {
      if (*s) return cmd_repsim(name, ro, g);
    }
    if (*l_apply) return cmd_ldp_apply(lo, g);
    if (*l_ssim) return cmd_ldp_ssim(lo);
    if (*p_run) return cmd_pipeline_run(pio, g);
    if (*p_review) return cmd_pipeline_review(pio);
    if (*p_release) return cmd_pipeline_release(pio);
    if (*rep_all) return cmd_report(rc, g);
    if (*exp) {
      xc.explainer_params = xflags.params();
      return cmd_experiment(xc, g);
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), kExitError);
  } catch (const json::exception& e) {
    return fail("FormatError", e.what(), kExitError);
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), kExitError);
  }
  return fail("UsageError", "no subcommand", kExitUsage);
}

}  // namespace
}  // namespace dpxlab::cli

int main(int argc, char** argv) { return dpxlab::cli::run(argc, argv); }
