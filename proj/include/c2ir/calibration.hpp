#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "c2ir/checkpoint.hpp"
#include "c2ir/inversion.hpp"
#include "c2ir/io.hpp"
#include "c2ir/net.hpp"

namespace c2ir {

// Everything the detector needs, computed once from a synthesis dataset:
// per class, softmax-normalized channel weights, layer weights, and the
// empirical channel-averaged activation means of the impressions.
struct CalibrationArtifact {
  int num_classes = 0;
  std::vector<int> layer_channels;

  // indexed [class][layer]
  std::vector<std::vector<Vec>> beta;  // [C][L][h_l]
  std::vector<Vec> alpha;              // [C][L]
  std::vector<Vec> cavg;               // [C][L]
  std::vector<Vec> delta_bar;          // [C][L], pre-softmax sensitivities

  std::string checkpoint_fingerprint;

  int num_layers() const { return static_cast<int>(layer_channels.size()); }
};

// Channel-wise linear weighted average of one activation map [h, d, d].
inline double channel_avg(const Tensor& tap, const Vec& beta) {
  if (tap.shape.size() != 3 || tap.dim(0) != beta.size())
    throw InputError("channel_avg: weight length does not match channel count");
  const std::size_t plane = tap.dim(1) * tap.dim(2);
  double out = 0.0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    const double* p = tap.data() + k * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out += beta[k] * s / static_cast<double>(plane);
  }
  return out;
}

// Batched variant over taps [n, h, d, d] -> one value per sample.
inline Vec channel_avg_batch(const Tensor& taps, const Vec& beta) {
  if (taps.shape.size() != 4 || taps.dim(1) != beta.size())
    throw InputError("channel_avg_batch: weight length does not match channel count");
  const std::size_t n = taps.dim(0), h = taps.dim(1), plane = taps.dim(2) * taps.dim(3);
  Vec out(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      const double* p = taps.data() + (b * h + k) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      acc += beta[k] * s / static_cast<double>(plane);
    }
    out[b] = acc;
  }
  return out;
}

// Stable softmax; the normalization used for both channel and layer weights.
inline Vec normalize_weights(const Vec& v) {
  if (v.empty()) throw InputError("normalize_weights: empty vector");
  if (!all_finite(v)) throw NumericError("normalize_weights: non-finite input");
  return softmax(v);
}

// Spatial-and-dataset-mean gradients of the class-c score per channel,
// evaluated at the given images: result[l][k].
inline std::vector<Vec> channel_gradient_avg(const Network& net, const Tensor& images,
                                             int c, int chunk = 64) {
  if (images.dim(0) == 0) throw InputError("channel_gradient_avg: empty dataset");
  const int L = net.num_blocks();
  std::vector<Vec> wbar(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    wbar[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(net.tap_channels(l)), 0.0);

  const std::size_t n = images.dim(0);
  const std::size_t stride = images.size() / n;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(n, start + static_cast<std::size_t>(chunk));
    auto shape = images.shape;
    shape[0] = stop - start;
    Tensor part(shape);
    std::copy_n(images.v.begin() + static_cast<std::ptrdiff_t>(start * stride),
                part.size(), part.v.begin());
    auto grads = activation_gradients(net, part, c);
    for (int l = 0; l < L; ++l) {
      const auto& g = grads[static_cast<std::size_t>(l)];
      const std::size_t h = g.dim(1), plane = g.dim(2) * g.dim(3);
      for (std::size_t b = 0; b < g.dim(0); ++b)
        for (std::size_t k = 0; k < h; ++k) {
          const double* p = g.data() + (b * h + k) * plane;
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          wbar[static_cast<std::size_t>(l)][k] += s / static_cast<double>(plane);
        }
    }
  }
  for (auto& v : wbar)
    for (auto& x : v) x /= static_cast<double>(n);
  return wbar;
}

// Per-layer mean of the impressions' channel-averaged activations.
inline Vec empirical_cavg(const Network& net, const Tensor& images,
                          const std::vector<Vec>& beta, int chunk = 64) {
  if (images.dim(0) == 0) throw InputError("empirical_cavg: empty dataset");
  const int L = net.num_blocks();
  Vec out(static_cast<std::size_t>(L), 0.0);
  const std::size_t n = images.dim(0);
  const std::size_t stride = images.size() / n;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(n, start + static_cast<std::size_t>(chunk));
    auto shape = images.shape;
    shape[0] = stop - start;
    Tensor part(shape);
    std::copy_n(images.v.begin() + static_cast<std::ptrdiff_t>(start * stride),
                part.size(), part.v.begin());
    auto fwd = forward_with_taps(net, part);
    for (int l = 0; l < L; ++l) {
      const Vec vals = channel_avg_batch(fwd.taps[static_cast<std::size_t>(l)],
                                         beta[static_cast<std::size_t>(l)]);
      for (double v : vals) out[static_cast<std::size_t>(l)] += v;
    }
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

inline constexpr double kScoreDeltaGuard = 1e-6;

// Relative activation-mean sensitivity per layer, averaged along a stored
// trajectory. Iterations whose class-score increment falls under the guard
// are skipped; throws if none survive.
inline Vec layer_sensitivity(const TrajectoryRecord& traj, const std::vector<Vec>& beta,
                             int* kept_iterations = nullptr) {
  const int T = traj.iterations();
  const auto L = beta.size();
  if (traj.g.size() != L) throw InputError("layer_sensitivity: layer count mismatch");
  Vec delta(L, 0.0);
  int kept = 0;
  double prev = traj.y0;
  for (int t = 0; t < T; ++t) {
    const double dy = traj.y[static_cast<std::size_t>(t)] - prev;
    prev = traj.y[static_cast<std::size_t>(t)];
    if (std::abs(dy) < kScoreDeltaGuard) continue;
    ++kept;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& g = traj.g[l];
      double acc = 0.0;
      for (std::size_t k = 0; k < beta[l].size(); ++k)
        acc += beta[l][k] * g.at2(k, static_cast<std::size_t>(t));
      delta[l] += acc / dy;
    }
  }
  if (kept == 0)
    throw NumericError("layer_sensitivity: every iteration fell under the |dy| guard");
  for (auto& d : delta) d /= static_cast<double>(kept);
  if (kept_iterations != nullptr) *kept_iterations = kept;
  return delta;
}

// Weight construction from precomputed gradient statistics: channel weights
// from the per-channel gradient averages, layer weights from the trajectory
// sensitivities. Kept as a free function so it can be checked against a
// straight-line oracle on hand-built inputs.
inline void weights_from_stats(const std::vector<Vec>& wbar,
                               const std::vector<TrajectoryRecord>& trajectories,
                               std::vector<Vec>& beta_out, Vec& alpha_out,
                               Vec& delta_bar_out) {
  const auto L = wbar.size();
  beta_out.clear();
  beta_out.reserve(L);
  for (const auto& w : wbar) beta_out.push_back(normalize_weights(w));

  if (trajectories.empty()) throw InputError("weights_from_stats: no trajectories");
  delta_bar_out.assign(L, 0.0);
  for (const auto& traj : trajectories) {
    const Vec d = layer_sensitivity(traj, beta_out);
    for (std::size_t l = 0; l < L; ++l) delta_bar_out[l] += d[l];
  }
  for (auto& d : delta_bar_out) d /= static_cast<double>(trajectories.size());
  alpha_out = normalize_weights(delta_bar_out);
}

inline CalibrationArtifact build_artifact(const Network& net,
                                          const SynthesisDataset& synthesis) {
  const std::string fp = model_fingerprint(net);
  if (synthesis.checkpoint_fingerprint != fp)
    throw MissingArtifactError(
        "synthesis dataset was produced from a different checkpoint "
        "(fingerprint " + synthesis.checkpoint_fingerprint + " != " + fp + ")");
  if (synthesis.classes.size() != static_cast<std::size_t>(net.arch.num_classes))
    throw InputError("synthesis class count does not match the model");

  CalibrationArtifact art;
  art.num_classes = net.arch.num_classes;
  art.checkpoint_fingerprint = fp;
  for (int l = 0; l < net.num_blocks(); ++l)
    art.layer_channels.push_back(net.tap_channels(l));

  for (int c = 0; c < art.num_classes; ++c) {
    const auto& cls = synthesis.classes[static_cast<std::size_t>(c)];
    if (cls.images.dim(0) == 0)
      throw InputError("class " + std::to_string(c) + " has no impressions");
    const auto wbar = channel_gradient_avg(net, cls.images, c);
    std::vector<Vec> beta;
    Vec alpha, delta_bar;
    weights_from_stats(wbar, cls.trajectories, beta, alpha, delta_bar);
    art.cavg.push_back(empirical_cavg(net, cls.images, beta));
    art.beta.push_back(std::move(beta));
    art.alpha.push_back(std::move(alpha));
    art.delta_bar.push_back(std::move(delta_bar));
  }
  return art;
}

// ---- persistence ----

inline void save_artifact(const fs::path& dir, const CalibrationArtifact& art) {
  ensure_dir(dir);
  const auto L = static_cast<std::size_t>(art.num_layers());
  Vec alpha_blob, cavg_blob, delta_blob, beta_blob;
  for (int c = 0; c < art.num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    alpha_blob.insert(alpha_blob.end(), art.alpha[ci].begin(), art.alpha[ci].end());
    cavg_blob.insert(cavg_blob.end(), art.cavg[ci].begin(), art.cavg[ci].end());
    delta_blob.insert(delta_blob.end(), art.delta_bar[ci].begin(), art.delta_bar[ci].end());
    for (std::size_t l = 0; l < L; ++l)
      beta_blob.insert(beta_blob.end(), art.beta[ci][l].begin(), art.beta[ci][l].end());
  }
  write_doubles(dir / "alpha.bin", alpha_blob);
  write_doubles(dir / "cavg.bin", cavg_blob);
  write_doubles(dir / "delta.bin", delta_blob);
  write_doubles(dir / "beta.bin", beta_blob);
  json manifest{{"version", 1},
                {"kind", "calibration"},
                {"checkpoint_fingerprint", art.checkpoint_fingerprint},
                {"num_classes", art.num_classes},
                {"layer_channels", art.layer_channels}};
  write_json(dir / "manifest.json", manifest);
}

inline CalibrationArtifact load_artifact(const fs::path& dir) {
  json m = read_json(dir / "manifest.json");
  if (m.value("kind", "") != "calibration")
    throw MissingArtifactError("not a calibration artifact: " + dir.string());
  CalibrationArtifact art;
  art.checkpoint_fingerprint = m.at("checkpoint_fingerprint").get<std::string>();
  art.num_classes = m.at("num_classes").get<int>();
  art.layer_channels = m.at("layer_channels").get<std::vector<int>>();
  const auto L = art.layer_channels.size();
  const auto C = static_cast<std::size_t>(art.num_classes);
  std::size_t hsum = 0;
  for (int h : art.layer_channels) hsum += static_cast<std::size_t>(h);

  const Vec alpha_blob = read_doubles(dir / "alpha.bin", C * L);
  const Vec cavg_blob = read_doubles(dir / "cavg.bin", C * L);
  const Vec delta_blob = read_doubles(dir / "delta.bin", C * L);
  const Vec beta_blob = read_doubles(dir / "beta.bin", C * hsum);
  std::size_t boff = 0;
  for (std::size_t c = 0; c < C; ++c) {
    art.alpha.emplace_back(alpha_blob.begin() + static_cast<std::ptrdiff_t>(c * L),
                           alpha_blob.begin() + static_cast<std::ptrdiff_t>((c + 1) * L));
    art.cavg.emplace_back(cavg_blob.begin() + static_cast<std::ptrdiff_t>(c * L),
                          cavg_blob.begin() + static_cast<std::ptrdiff_t>((c + 1) * L));
    art.delta_bar.emplace_back(delta_blob.begin() + static_cast<std::ptrdiff_t>(c * L),
                               delta_blob.begin() + static_cast<std::ptrdiff_t>((c + 1) * L));
    std::vector<Vec> beta;
    for (int h : art.layer_channels) {
      beta.emplace_back(beta_blob.begin() + static_cast<std::ptrdiff_t>(boff),
                        beta_blob.begin() + static_cast<std::ptrdiff_t>(boff + static_cast<std::size_t>(h)));
      boff += static_cast<std::size_t>(h);
    }
    art.beta.push_back(std::move(beta));
  }
  return art;
}

}  // namespace c2ir
