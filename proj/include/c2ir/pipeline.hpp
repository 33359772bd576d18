#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "c2ir/calibration.hpp"
#include "c2ir/checkpoint.hpp"
#include "c2ir/config.hpp"
#include "c2ir/datagen.hpp"
#include "c2ir/detector.hpp"
#include "c2ir/inversion.hpp"
#include "c2ir/metrics.hpp"
#include "c2ir/net.hpp"
#include "c2ir/train.hpp"

namespace c2ir {

// ---- run directory layout; one directory per configuration hash ----

struct RunPaths {
  fs::path root;

  fs::path id_train() const { return root / "data" / "id_train"; }
  fs::path id_test() const { return root / "data" / "id_test"; }
  fs::path checkpoint() const { return root / "checkpoint"; }
  fs::path synthesis() const { return root / "synthesis"; }
  fs::path artifact() const { return root / "calibration"; }
  fs::path reports() const { return root / "reports"; }
};

inline RunPaths run_paths(const fs::path& out_dir, const RunConfig& cfg) {
  return RunPaths{out_dir / config_hash(cfg)};
}

// ---- CSV helpers ----

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot open for writing: " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i)
    f << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      f << row[i] << (i + 1 < row.size() ? "," : "\n");
}

// ---- metrics report ----

struct MetricCell {
  std::string method, ood_set;
  double tnr_at_tpr95 = 0.0, auroc = 0.0, detection_acc = 0.0, aupr_in = 0.0;
};

struct MetricsReport {
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
  json config_echo;
  std::vector<MetricCell> cells;

  const MetricCell& cell(const std::string& method, const std::string& ood_set) const {
    for (const auto& c : cells)
      if (c.method == method && c.ood_set == ood_set) return c;
    throw InputError("no report cell for " + method + "/" + ood_set);
  }
};

inline json report_to_json(const MetricsReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back(json{{"method", c.method},
                         {"ood_set", c.ood_set},
                         {"tnr_at_tpr95", c.tnr_at_tpr95},
                         {"auroc", c.auroc},
                         {"detection_acc", c.detection_acc},
                         {"aupr_in", c.aupr_in}});
  return json{{"version", 1},
              {"kind", "metrics_report"},
              {"seeds", r.seeds},
              {"config_hash", r.config_hash},
              {"config", r.config_echo},
              {"cells", cells}};
}

inline MetricsReport report_from_json(const json& j) {
  if (j.value("kind", "") != "metrics_report")
    throw MissingArtifactError("not a metrics report");
  MetricsReport r;
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.config_echo = j.at("config");
  for (const auto& c : j.at("cells"))
    r.cells.push_back(MetricCell{c.at("method").get<std::string>(),
                                 c.at("ood_set").get<std::string>(),
                                 c.at("tnr_at_tpr95").get<double>(),
                                 c.at("auroc").get<double>(),
                                 c.at("detection_acc").get<double>(),
                                 c.at("aupr_in").get<double>()});
  return r;
}

inline void write_report(const fs::path& json_path, const fs::path& csv_path,
                         const MetricsReport& r) {
  write_json(json_path, report_to_json(r));
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : r.cells)
    rows.push_back({c.method, c.ood_set, format_double(c.tnr_at_tpr95),
                    format_double(c.auroc), format_double(c.detection_acc),
                    format_double(c.aupr_in)});
  write_csv(csv_path,
            {"method", "ood_set", "tnr_at_tpr95", "auroc", "detection_acc", "aupr_in"},
            rows);
}

// Cell-wise mean across runs with the same (method, ood_set) structure.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InputError("aggregate_reports: no reports");
  MetricsReport out = reports.front();
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.cells.size() != out.cells.size())
      throw InputError("aggregate_reports: cell structure mismatch");
    for (std::size_t k = 0; k < out.cells.size(); ++k) {
      if (r.cells[k].method != out.cells[k].method ||
          r.cells[k].ood_set != out.cells[k].ood_set)
        throw InputError("aggregate_reports: cell structure mismatch");
      out.cells[k].tnr_at_tpr95 += r.cells[k].tnr_at_tpr95;
      out.cells[k].auroc += r.cells[k].auroc;
      out.cells[k].detection_acc += r.cells[k].detection_acc;
      out.cells[k].aupr_in += r.cells[k].aupr_in;
    }
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  const auto n = static_cast<double>(reports.size());
  for (auto& c : out.cells) {
    c.tnr_at_tpr95 /= n;
    c.auroc /= n;
    c.detection_acc /= n;
    c.aupr_in /= n;
  }
  return out;
}

// ---- stage inputs ----

namespace detail {

inline DatasetSpec id_spec(const RunConfig& cfg) {
  DatasetSpec s;
  s.num_classes = cfg.data.num_classes;
  s.image_size = cfg.data.image_size;
  s.channels = cfg.data.channels;
  s.samples_per_class = cfg.data.samples_per_class;
  s.noise_sigma = cfg.data.noise_sigma;
  s.seed = derive_seed(cfg.seed, {0xDAu});
  return s;
}

inline DatasetSpec ood_spec(const RunConfig& cfg, const std::string& name) {
  DatasetSpec s;
  s.num_classes = cfg.data.num_classes;
  s.image_size = cfg.data.image_size;
  s.channels = cfg.data.channels;
  s.noise_sigma = cfg.data.noise_sigma;
  s.ood_kind = ood_kind_from_string(name);
  if (cfg.eval.ood_count % cfg.data.num_classes != 0)
    throw ConfigError("eval.ood_count must be divisible by the class count");
  s.samples_per_class = cfg.eval.ood_count / cfg.data.num_classes;
  s.seed = derive_seed(cfg.seed, {0x0Du, static_cast<std::uint64_t>(s.ood_kind)});
  return s;
}

template <typename Loader>
auto require_stage(Loader&& loader, const std::string& what, const std::string& stage) {
  try {
    return loader();
  } catch (const MissingArtifactError& e) {
    throw MissingArtifactError(what + " not found (" + e.what() + "); run `c2ir " +
                               stage + "` first");
  }
}

}  // namespace detail

// ---- pipeline stages ----

struct TrainSummary {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string fingerprint;
};

inline TrainSummary stage_train(const RunConfig& cfg, const RunPaths& paths) {
  const DatasetSpec spec = detail::id_spec(cfg);
  const ImageBatch full = generate_id_dataset(spec);
  auto [train_set, test_set] =
      split(full, cfg.data.train_fraction, 1.0 - cfg.data.train_fraction,
            derive_seed(cfg.seed, {0x5Fu}));
  save_dataset(paths.id_train(), train_set, spec);
  save_dataset(paths.id_test(), test_set, spec);

  Network net = Network::build(cfg.arch, derive_seed(cfg.seed, {0xA0u}));
  const TrainResult res =
      train_classifier(net, train_set, test_set, cfg.train, derive_seed(cfg.seed, {0x7Au}));

  Checkpoint ckpt;
  ckpt.net = std::move(net);
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.epochs = cfg.train.epochs;
  ckpt.meta.train_accuracy = res.train_accuracy;
  ckpt.meta.test_accuracy = res.test_accuracy;
  save_checkpoint(paths.checkpoint(), ckpt);
  return TrainSummary{res.train_accuracy, res.test_accuracy, model_fingerprint(ckpt.net)};
}

inline Checkpoint require_checkpoint(const RunPaths& paths) {
  return detail::require_stage([&] { return load_checkpoint(paths.checkpoint()); },
                               "checkpoint", "train");
}

inline SynthesisDataset require_synthesis(const RunPaths& paths) {
  return detail::require_stage([&] { return load_synthesis(paths.synthesis()); },
                               "synthesis dataset", "invert");
}

inline CalibrationArtifact require_artifact(const RunPaths& paths) {
  return detail::require_stage([&] { return load_artifact(paths.artifact()); },
                               "calibration artifact", "calibrate");
}

inline void stage_invert(const RunConfig& cfg, const RunPaths& paths) {
  const Checkpoint ckpt = require_checkpoint(paths);
  const SynthesisDataset ds = synthesize_all(ckpt.net, cfg.inversion);
  save_synthesis(paths.synthesis(), ds);
}

inline void stage_calibrate(const RunConfig& cfg, const RunPaths& paths) {
  (void)cfg;
  const Checkpoint ckpt = require_checkpoint(paths);
  const SynthesisDataset ds = require_synthesis(paths);
  const CalibrationArtifact art = build_artifact(ckpt.net, ds);
  save_artifact(paths.artifact(), art);
}

// ---- scoring ----

inline Vec scores_of_results(const std::vector<ScoreResult>& rs) {
  Vec v(rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) v[i] = rs[i].score;
  return v;
}

inline std::vector<ScoreResult> c2ir_scores_chunked(const Network& net,
                                                    const CalibrationArtifact& art,
                                                    const Tensor& pixels,
                                                    int chunk = 128) {
  std::vector<ScoreResult> out;
  const std::size_t n = pixels.dim(0);
  const std::size_t stride = n == 0 ? 0 : pixels.size() / n;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(n, start + static_cast<std::size_t>(chunk));
    auto shape = pixels.shape;
    shape[0] = stop - start;
    Tensor part(shape);
    std::copy_n(pixels.v.begin() + static_cast<std::ptrdiff_t>(start * stride),
                part.size(), part.v.begin());
    auto rs = score_batch(net, art, part);
    out.insert(out.end(), rs.begin(), rs.end());
  }
  return out;
}

inline Vec baseline_scores_chunked(const std::string& method, const Network& net,
                                   const Tensor& pixels, const DetectorSettings& det,
                                   int chunk = 128) {
  Vec out;
  const std::size_t n = pixels.dim(0);
  const std::size_t stride = n == 0 ? 0 : pixels.size() / n;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(n, start + static_cast<std::size_t>(chunk));
    auto shape = pixels.shape;
    shape[0] = stop - start;
    Tensor part(shape);
    std::copy_n(pixels.v.begin() + static_cast<std::ptrdiff_t>(start * stride),
                part.size(), part.v.begin());
    if (method == "odin") {
      Vec s = baseline_odin(net, part, det.odin_temperature, det.odin_epsilon);
      out.insert(out.end(), s.begin(), s.end());
    } else {
      const Tensor logits = logits_of(net, part);
      for (std::size_t b = 0; b < logits.dim(0); ++b) {
        std::span<const double> row(logits.data() + b * logits.dim(1), logits.dim(1));
        if (method == "msp")
          out.push_back(baseline_msp(row));
        else if (method == "energy")
          out.push_back(baseline_energy(row, det.energy_temperature));
        else
          throw ConfigError("unknown method: " + method);
      }
    }
  }
  return out;
}

inline Vec method_scores(const std::string& method, const Network& net,
                         const CalibrationArtifact* art, const Tensor& pixels,
                         const DetectorSettings& det) {
  if (method == "c2ir") {
    if (art == nullptr) throw MissingArtifactError("c2ir scoring needs a calibration artifact");
    return scores_of_results(c2ir_scores_chunked(net, *art, pixels));
  }
  return baseline_scores_chunked(method, net, pixels, det);
}

// Scores of all impressions under the artifact; pseudo-ID sample for the
// automatic threshold.
inline Vec impression_scores(const Network& net, const CalibrationArtifact& art,
                             const SynthesisDataset& synthesis) {
  Vec all;
  for (const auto& cls : synthesis.classes) {
    Vec s = scores_of_results(c2ir_scores_chunked(net, art, cls.images));
    all.insert(all.end(), s.begin(), s.end());
  }
  return all;
}

inline double resolve_threshold(const RunConfig& cfg, const Network& net,
                                const CalibrationArtifact& art,
                                const SynthesisDataset& synthesis) {
  if (cfg.detector.threshold == "auto")
    return auto_threshold(impression_scores(net, art, synthesis));
  try {
    return std::stod(cfg.detector.threshold);
  } catch (...) {
    throw ConfigError("detector.threshold must be \"auto\" or a number, got " +
                      cfg.detector.threshold);
  }
}

struct EvalData {
  ImageBatch id_eval;
  std::vector<std::pair<std::string, ImageBatch>> ood_sets;
};

inline EvalData build_eval_data(const RunConfig& cfg, const RunPaths& paths) {
  EvalData d;
  const ImageBatch test_set = detail::require_stage(
      [&] { return load_dataset(paths.id_test()); }, "ID test split", "train");
  if (cfg.eval.id_test_count % cfg.data.num_classes != 0)
    throw ConfigError("eval.id_test_count must be divisible by the class count");
  d.id_eval = stratified_subset(test_set, cfg.eval.id_test_count / cfg.data.num_classes,
                                cfg.data.num_classes);
  for (const auto& name : cfg.eval.ood_sets)
    d.ood_sets.emplace_back(name, generate_ood_dataset(detail::ood_spec(cfg, name)));
  return d;
}

// ---- score dumps ----

inline void write_c2ir_csv(const fs::path& path, int num_layers,
                           const std::vector<std::pair<std::string, std::vector<ScoreResult>>>& by_set,
                           double gamma) {
  std::vector<std::string> header{"sample_id", "source_set", "msp_class"};
  for (int l = 1; l <= num_layers; ++l) header.push_back("delta_" + std::to_string(l));
  header.push_back("score");
  header.push_back("decision");
  std::vector<std::vector<std::string>> rows;
  for (const auto& [set, results] : by_set)
    for (std::size_t i = 0; i < results.size(); ++i) {
      std::vector<std::string> row{std::to_string(i), set,
                                   std::to_string(results[i].msp_class)};
      for (double dlt : results[i].deltas) row.push_back(format_double(dlt));
      row.push_back(format_double(results[i].score));
      row.push_back(decide_out(results[i].score, gamma) ? "out" : "in");
      rows.push_back(std::move(row));
    }
  write_csv(path, header, rows);
}

inline void write_baseline_csv(const fs::path& path,
                               const std::vector<std::pair<std::string, Vec>>& by_set) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [set, scores] : by_set)
    for (std::size_t i = 0; i < scores.size(); ++i)
      rows.push_back({std::to_string(i), set, format_double(scores[i])});
  write_csv(path, {"sample_id", "source_set", "score"}, rows);
}

inline void stage_score(const RunConfig& cfg, const RunPaths& paths) {
  const Checkpoint ckpt = require_checkpoint(paths);
  const CalibrationArtifact art = require_artifact(paths);
  const SynthesisDataset synthesis = require_synthesis(paths);
  const EvalData data = build_eval_data(cfg, paths);
  ensure_dir(paths.reports());

  const double gamma = resolve_threshold(cfg, ckpt.net, art, synthesis);
  write_json(paths.reports() / "threshold.json",
             json{{"gamma", gamma}, {"source", cfg.detector.threshold}});

  for (const auto& method : cfg.eval.methods) {
    if (method == "c2ir") {
      std::vector<std::pair<std::string, std::vector<ScoreResult>>> by_set;
      by_set.emplace_back("id", c2ir_scores_chunked(ckpt.net, art, data.id_eval.pixels));
      for (const auto& [name, batch] : data.ood_sets)
        by_set.emplace_back(name, c2ir_scores_chunked(ckpt.net, art, batch.pixels));
      write_c2ir_csv(paths.reports() / "scores_c2ir.csv", art.num_layers(), by_set, gamma);
    } else {
      std::vector<std::pair<std::string, Vec>> by_set;
      by_set.emplace_back("id", baseline_scores_chunked(method, ckpt.net,
                                                        data.id_eval.pixels, cfg.detector));
      for (const auto& [name, batch] : data.ood_sets)
        by_set.emplace_back(name, baseline_scores_chunked(method, ckpt.net, batch.pixels,
                                                          cfg.detector));
      write_baseline_csv(paths.reports() / ("scores_" + method + ".csv"), by_set);
    }
  }
}

// ---- benchmark and ablation ----

inline MetricCell metrics_cell(const std::string& method, const std::string& set,
                               const Vec& id_scores, const Vec& ood_scores) {
  MetricCell c;
  c.method = method;
  c.ood_set = set;
  c.tnr_at_tpr95 = tnr_at_tpr(id_scores, ood_scores, 0.95);
  c.auroc = auroc(id_scores, ood_scores);
  c.detection_acc = detection_accuracy(id_scores, ood_scores);
  c.aupr_in = aupr_in(id_scores, ood_scores);
  return c;
}

inline MetricsReport stage_eval(const RunConfig& cfg, const RunPaths& paths) {
  const Checkpoint ckpt = require_checkpoint(paths);
  const bool wants_c2ir =
      std::find(cfg.eval.methods.begin(), cfg.eval.methods.end(), "c2ir") !=
      cfg.eval.methods.end();
  CalibrationArtifact art;
  if (wants_c2ir) art = require_artifact(paths);
  const EvalData data = build_eval_data(cfg, paths);

  MetricsReport report;
  report.seeds = {cfg.seed};
  report.config_hash = config_hash(cfg);
  report.config_echo = config_to_json(cfg);
  for (const auto& method : cfg.eval.methods) {
    const Vec id_scores = method_scores(method, ckpt.net, wants_c2ir ? &art : nullptr,
                                        data.id_eval.pixels, cfg.detector);
    for (const auto& [name, batch] : data.ood_sets) {
      const Vec ood_scores = method_scores(method, ckpt.net, wants_c2ir ? &art : nullptr,
                                           batch.pixels, cfg.detector);
      report.cells.push_back(metrics_cell(method, name, id_scores, ood_scores));
    }
  }
  ensure_dir(paths.reports());
  write_report(paths.reports() / "benchmark.json", paths.reports() / "benchmark.csv",
               report);
  return report;
}

// Builds the artifact variant evaluated under one ablation mode. Reference
// means are kept consistent with the mode's channel weights.
inline CalibrationArtifact apply_ablation_mode(const CalibrationArtifact& art,
                                               const std::string& mode,
                                               const Network& net,
                                               const SynthesisDataset& synthesis,
                                               std::uint64_t seed) {
  CalibrationArtifact out = art;
  const auto L = static_cast<std::size_t>(art.num_layers());
  if (mode == "mgi") return out;
  if (mode == "penultimate_only") {
    for (auto& alpha : out.alpha) {
      std::fill(alpha.begin(), alpha.end(), 0.0);
      alpha.back() = 1.0;
    }
    return out;
  }
  if (mode == "uniform_mean") {
    for (int c = 0; c < art.num_classes; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      out.alpha[ci].assign(L, 1.0 / static_cast<double>(L));
      for (std::size_t l = 0; l < L; ++l)
        out.beta[ci][l].assign(out.beta[ci][l].size(),
                               1.0 / static_cast<double>(out.beta[ci][l].size()));
      out.cavg[ci] = empirical_cavg(net, synthesis.classes[ci].images, out.beta[ci]);
    }
    return out;
  }
  if (mode == "random_weights") {
    for (int c = 0; c < art.num_classes; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      Rng rng(derive_seed(seed, {0xABu, static_cast<std::uint64_t>(c)}));
      out.alpha[ci] = rng.simplex(L);
      for (std::size_t l = 0; l < L; ++l)
        out.beta[ci][l] = rng.simplex(out.beta[ci][l].size());
      out.cavg[ci] = empirical_cavg(net, synthesis.classes[ci].images, out.beta[ci]);
    }
    return out;
  }
  if (mode == "bn_stats_reference") {
    // Class-agnostic reference: channel-weighted BN running means.
    for (int c = 0; c < art.num_classes; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      for (std::size_t l = 0; l < L; ++l) {
        double ref = 0.0;
        for (std::size_t k = 0; k < out.beta[ci][l].size(); ++k)
          ref += out.beta[ci][l][k] * net.bns[l].running_mean[k];
        out.cavg[ci][l] = ref;
      }
    }
    return out;
  }
  throw ConfigError("unknown ablation mode: " + mode);
}

inline MetricsReport stage_ablate(const RunConfig& cfg, const RunPaths& paths) {
  const Checkpoint ckpt = require_checkpoint(paths);
  const CalibrationArtifact art = require_artifact(paths);
  const SynthesisDataset synthesis = require_synthesis(paths);
  const EvalData data = build_eval_data(cfg, paths);

  MetricsReport report;
  report.seeds = {cfg.seed};
  report.config_hash = config_hash(cfg);
  report.config_echo = config_to_json(cfg);
  for (const auto& mode : cfg.ablation.modes) {
    const CalibrationArtifact variant =
        apply_ablation_mode(art, mode, ckpt.net, synthesis,
                            derive_seed(cfg.seed, {0xADu}));
    const Vec id_scores =
        scores_of_results(c2ir_scores_chunked(ckpt.net, variant, data.id_eval.pixels));
    for (const auto& [name, batch] : data.ood_sets) {
      const Vec ood_scores =
          scores_of_results(c2ir_scores_chunked(ckpt.net, variant, batch.pixels));
      report.cells.push_back(metrics_cell(mode, name, id_scores, ood_scores));
    }
  }
  ensure_dir(paths.reports());
  write_report(paths.reports() / "ablation.json", paths.reports() / "ablation.csv",
               report);
  return report;
}

// ---- layer comparison table ----

struct LayerComparisonRow {
  int layer = 0;
  std::string source;
  double value = 0.0;
};

// Per-layer channel-averaged activation means for the class row c:
// ID samples of that class, one OOD set, the stored impression means, and
// the channel-weighted BN running means.
inline std::vector<LayerComparisonRow> layer_comparison(
    const Network& net, const CalibrationArtifact& art, const ImageBatch& id_batch,
    const ImageBatch& ood_batch, int c) {
  if (c < 0 || c >= art.num_classes) throw InputError("invalid comparison class");
  const auto ci = static_cast<std::size_t>(c);
  const auto L = static_cast<std::size_t>(art.num_layers());

  std::vector<std::size_t> cls_idx;
  for (std::size_t i = 0; i < id_batch.count(); ++i)
    if (id_batch.labels[i] == c) cls_idx.push_back(i);
  if (cls_idx.empty()) throw InputError("no ID samples of the comparison class");
  const Tensor id_pixels = gather_batch(id_batch, cls_idx);

  auto mean_cavg = [&](const Tensor& pixels) {
    Vec out(L, 0.0);
    const std::size_t n = pixels.dim(0);
    const std::size_t stride = pixels.size() / n;
    constexpr std::size_t chunk = 128;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t stop = std::min(n, start + chunk);
      auto shape = pixels.shape;
      shape[0] = stop - start;
      Tensor part(shape);
      std::copy_n(pixels.v.begin() + static_cast<std::ptrdiff_t>(start * stride),
                  part.size(), part.v.begin());
      auto fwd = forward_with_taps(net, part);
      for (std::size_t l = 0; l < L; ++l) {
        const Vec vals = channel_avg_batch(fwd.taps[l], art.beta[ci][l]);
        for (double v : vals) out[l] += v;
      }
    }
    for (auto& v : out) v /= static_cast<double>(n);
    return out;
  };

  const Vec id_means = mean_cavg(id_pixels);
  const Vec ood_means = mean_cavg(ood_batch.pixels);

  std::vector<LayerComparisonRow> rows;
  for (std::size_t l = 0; l < L; ++l) {
    double bn_ref = 0.0;
    for (std::size_t k = 0; k < art.beta[ci][l].size(); ++k)
      bn_ref += art.beta[ci][l][k] * net.bns[l].running_mean[k];
    rows.push_back({static_cast<int>(l), "id", id_means[l]});
    rows.push_back({static_cast<int>(l), "ood", ood_means[l]});
    rows.push_back({static_cast<int>(l), "impressions", art.cavg[ci][l]});
    rows.push_back({static_cast<int>(l), "bn_running", bn_ref});
  }
  return rows;
}

inline std::vector<LayerComparisonRow> stage_compare_layers(const RunConfig& cfg,
                                                            const RunPaths& paths) {
  const Checkpoint ckpt = require_checkpoint(paths);
  const CalibrationArtifact art = require_artifact(paths);
  const EvalData data = build_eval_data(cfg, paths);
  if (data.ood_sets.empty()) throw ConfigError("layer comparison needs one OOD set");
  const auto rows = layer_comparison(ckpt.net, art, data.id_eval,
                                     data.ood_sets.front().second, cfg.compare_class);
  ensure_dir(paths.reports());
  std::vector<std::vector<std::string>> csv;
  for (const auto& r : rows)
    csv.push_back({std::to_string(r.layer), r.source, format_double(r.value)});
  write_csv(paths.reports() / "layer_comparison.csv", {"layer", "source", "value"}, csv);
  return rows;
}

}  // namespace c2ir
