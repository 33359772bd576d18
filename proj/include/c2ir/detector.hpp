#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "c2ir/calibration.hpp"
#include "c2ir/net.hpp"

namespace c2ir {

// Every scorer in this module uses one sign convention: higher = more OOD.

struct ScoreResult {
  int msp_class = 0;
  Vec deltas;          // per-layer deviations, all >= 0
  double score = 0.0;  // weighted sum, >= 0
};

// Argmax of the logits; ties break toward the lowest index.
inline int msp_class(std::span<const double> logits) {
  if (logits.size() < 2) throw InputError("msp_class needs at least 2 logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Absolute deviation of the channel-averaged activation mean from the
// stored class-conditional reference at layer l.
inline double layer_deviation(const Tensor& tap, const CalibrationArtifact& art, int c,
                              int l) {
  if (c < 0 || c >= art.num_classes || l < 0 || l >= art.num_layers())
    throw InputError("layer_deviation: class or layer out of range");
  const auto& beta = art.beta[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)];
  return std::abs(channel_avg(tap, beta) -
                  art.cavg[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)]);
}

// Scores one sample from its taps and the class row picked by MSP.
inline ScoreResult score_taps(const std::vector<Tensor>& taps, int cls,
                              const CalibrationArtifact& art) {
  ScoreResult r;
  r.msp_class = cls;
  const auto ci = static_cast<std::size_t>(cls);
  r.deltas.resize(taps.size());
  for (std::size_t l = 0; l < taps.size(); ++l) {
    r.deltas[l] = std::abs(channel_avg(taps[l], art.beta[ci][l]) - art.cavg[ci][l]);
    r.score += art.alpha[ci][l] * r.deltas[l];
  }
  return r;
}

// Weighted layer-wise deviation score for a batch.
inline std::vector<ScoreResult> score_batch(const Network& net,
                                            const CalibrationArtifact& art,
                                            const Tensor& pixels) {
  if (art.checkpoint_fingerprint != model_fingerprint(net))
    throw MissingArtifactError("calibration artifact belongs to a different checkpoint");
  auto fwd = forward_with_taps(net, pixels);
  const std::size_t n = fwd.logits.dim(0), C = fwd.logits.dim(1);
  std::vector<ScoreResult> out;
  out.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::span<const double> row(fwd.logits.data() + b * C, C);
    std::vector<Tensor> taps;
    taps.reserve(fwd.taps.size());
    for (const auto& t : fwd.taps) taps.push_back(t.slice(b));
    out.push_back(score_taps(taps, msp_class(row), art));
  }
  return out;
}

// Decision rule: out iff the score exceeds the threshold.
inline bool decide_out(double score, double gamma) { return score > gamma; }

// Threshold from impression scores used as pseudo-ID data.
inline double auto_threshold(const Vec& impression_scores, double q = 0.95) {
  if (impression_scores.size() < 20)
    throw InputError("auto_threshold needs at least 20 impression scores");
  return quantile(impression_scores, q);
}

// ---- baselines, same higher-is-OOD convention ----

inline double baseline_msp(std::span<const double> logits) {
  const Vec p = softmax(logits);
  return 1.0 - vec_max(p);
}

inline double baseline_energy(std::span<const double> logits, double temperature = 1.0) {
  if (temperature <= 0.0) throw ConfigError("energy temperature must be positive");
  Vec scaled(logits.begin(), logits.end());
  for (auto& z : scaled) z /= temperature;
  return -temperature * log_sum_exp(scaled);
}

// Input perturbation toward higher temperature-scaled max softmax, then the
// MSP-style score of the perturbed input under the same temperature.
inline Vec baseline_odin(const Network& net, const Tensor& pixels, double temperature,
                         double epsilon) {
  if (temperature <= 0.0) throw ConfigError("odin temperature must be positive");
  if (epsilon < 0.0) throw ConfigError("odin epsilon must be non-negative");

  ForwardState st;
  net.forward(pixels, st, /*train_mode=*/false);
  const std::size_t n = st.logits.dim(0), C = st.logits.dim(1);

  Tensor dlogits(st.logits.shape);
  for (std::size_t b = 0; b < n; ++b) {
    std::span<const double> row(st.logits.data() + b * C, C);
    Vec scaled(row.begin(), row.end());
    for (auto& z : scaled) z /= temperature;
    const Vec p = softmax(scaled);
    const auto top = static_cast<std::size_t>(msp_class(row));
    for (std::size_t j = 0; j < C; ++j)
      dlogits.at2(b, j) = ((j == top ? 1.0 : 0.0) - p[j]) / temperature;
  }
  EvalBackwardRequest req;
  req.dlogits = &dlogits;
  req.want_input_grad = true;
  Tensor grad = net.backward_eval(st, req).input_grad;

  Tensor perturbed = pixels;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    const double s = grad.v[i] > 0.0 ? 1.0 : (grad.v[i] < 0.0 ? -1.0 : 0.0);
    perturbed.v[i] += epsilon * s;
  }
  const Tensor logits = logits_of(net, perturbed);
  Vec scores(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::span<const double> row(logits.data() + b * C, C);
    Vec scaled(row.begin(), row.end());
    for (auto& z : scaled) z /= temperature;
    scores[b] = 1.0 - vec_max(softmax(scaled));
  }
  return scores;
}

}  // namespace c2ir
