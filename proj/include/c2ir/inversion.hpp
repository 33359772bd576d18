#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "c2ir/checkpoint.hpp"
#include "c2ir/io.hpp"
#include "c2ir/net.hpp"
#include "c2ir/rng.hpp"
#include "c2ir/train.hpp"

namespace c2ir {

struct InversionSettings {
  int iterations = 500;
  int batch_size = 32;
  int samples_per_class = 64;
  double step_size = 0.05;
  double bn_loss_weight = 1.0;
  // optional image priors, disabled by default
  double tv_weight = 0.0;
  double l2_weight = 0.0;
  double min_msp_consistency = 0.8;
  std::uint64_t seed = 1;
};

inline void validate_settings(const InversionSettings& s) {
  if (s.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (s.batch_size < 2) throw ConfigError("inversion batch_size must be >= 2");
  if (s.samples_per_class < 2) throw ConfigError("samples_per_class must be >= 2");
  if (s.step_size <= 0.0) throw ConfigError("step_size must be positive");
}

inline json settings_to_json(const InversionSettings& s) {
  return json{{"iterations", s.iterations},
              {"batch_size", s.batch_size},
              {"samples_per_class", s.samples_per_class},
              {"step_size", s.step_size},
              {"bn_loss_weight", s.bn_loss_weight},
              {"tv_weight", s.tv_weight},
              {"l2_weight", s.l2_weight},
              {"min_msp_consistency", s.min_msp_consistency},
              {"seed", s.seed}};
}

inline InversionSettings settings_from_json(const json& j) {
  InversionSettings s;
  s.iterations = j.at("iterations").get<int>();
  s.batch_size = j.at("batch_size").get<int>();
  s.samples_per_class = j.at("samples_per_class").get<int>();
  s.step_size = j.at("step_size").get<double>();
  s.bn_loss_weight = j.at("bn_loss_weight").get<double>();
  s.tv_weight = j.value("tv_weight", 0.0);
  s.l2_weight = j.value("l2_weight", 0.0);
  s.min_msp_consistency = j.value("min_msp_consistency", 0.8);
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

struct LossComponents {
  double total = 0.0;
  double ce = 0.0;
  double mean_match = 0.0;
  double var_match = 0.0;
};

// Per-batch optimization trace. g[l] holds the spatial-and-batch-mean
// gradients of the class score w.r.t. the layer-l activation map, one
// column per iteration: g[l].at2(k, t-1).
struct TrajectoryRecord {
  double y0 = 0.0;
  LossComponents initial;
  Vec y;                            // [T], batch-mean class logit after step t
  Vec ce, mean_match, var_match;    // [T]
  std::vector<Tensor> g;            // per layer, [h_l, T]

  int iterations() const { return static_cast<int>(y.size()); }
};

struct ClassSynthesis {
  Tensor images;  // [samples_per_class, c, s, s]
  std::vector<TrajectoryRecord> trajectories;  // one per optimization batch
  double msp_consistency = 0.0;
};

struct SynthesisDataset {
  std::vector<ClassSynthesis> classes;
  InversionSettings config;
  std::string checkpoint_fingerprint;
};

namespace detail {

struct BnResiduals {
  std::vector<Vec> mean, var;        // per block batch stats of the BN inputs
  std::vector<double> mean_norm, var_norm;  // per block residual norms
};

inline BnResiduals bn_residuals(const Network& net, const ForwardState& st) {
  BnResiduals r;
  const auto blocks = static_cast<std::size_t>(net.num_blocks());
  r.mean.resize(blocks);
  r.var.resize(blocks);
  r.mean_norm.resize(blocks);
  r.var_norm.resize(blocks);
  for (std::size_t l = 0; l < blocks; ++l) {
    nn::batch_stats(st.blocks[l].conv_out, r.mean[l], r.var[l]);
    const auto& bn = net.bns[l];
    Vec dm(r.mean[l].size()), dv(r.var[l].size());
    for (std::size_t k = 0; k < dm.size(); ++k) {
      dm[k] = r.mean[l][k] - bn.running_mean[k];
      dv[k] = r.var[l][k] - bn.running_var[k];
    }
    r.mean_norm[l] = l2_norm(dm);
    r.var_norm[l] = l2_norm(dv);
  }
  return r;
}

inline double total_variation(const Tensor& x, Tensor* grad) {
  const std::size_t n = x.dim(0), ch = x.dim(1), s = x.dim(2);
  double tv = 0.0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t xx = 0; xx < s; ++xx) {
          if (y + 1 < s) {
            const double d = x.at4(b, c, y + 1, xx) - x.at4(b, c, y, xx);
            tv += d * d;
            if (grad != nullptr) {
              grad->at4(b, c, y + 1, xx) += 2.0 * d / static_cast<double>(n);
              grad->at4(b, c, y, xx) -= 2.0 * d / static_cast<double>(n);
            }
          }
          if (xx + 1 < s) {
            const double d = x.at4(b, c, y, xx + 1) - x.at4(b, c, y, xx);
            tv += d * d;
            if (grad != nullptr) {
              grad->at4(b, c, y, xx + 1) += 2.0 * d / static_cast<double>(n);
              grad->at4(b, c, y, xx) -= 2.0 * d / static_cast<double>(n);
            }
          }
        }
  return tv / static_cast<double>(n);
}

}  // namespace detail

// Class prior loss plus the layer-wise statistic divergences between the
// batch statistics of x at the BN inputs and the stored running averages.
inline LossComponents loss_from_state(const Network& net, const ForwardState& st, int c,
                                      const InversionSettings& s,
                                      detail::BnResiduals* out_res = nullptr) {
  const std::size_t n = st.batch_size();
  std::vector<int> labels(n, c);
  LossComponents comps;
  comps.ce = cross_entropy(st.logits, labels);
  auto res = detail::bn_residuals(net, st);
  for (std::size_t l = 0; l < res.mean_norm.size(); ++l) {
    comps.mean_match += res.mean_norm[l];
    comps.var_match += res.var_norm[l];
  }
  comps.total = comps.ce + s.bn_loss_weight * (comps.mean_match + comps.var_match);
  if (s.tv_weight > 0.0) comps.total += s.tv_weight * detail::total_variation(st.input, nullptr);
  if (s.l2_weight > 0.0) {
    double l2 = 0.0;
    for (double v : st.input.v) l2 += v * v;
    comps.total += s.l2_weight * l2 / static_cast<double>(n);
  }
  if (out_res != nullptr) *out_res = std::move(res);
  return comps;
}

inline LossComponents inversion_loss(const Network& net, const Tensor& batch, int c,
                                     const InversionSettings& s = {}) {
  if (c < 0 || c >= net.arch.num_classes) throw InputError("invalid class id");
  if (batch.dim(0) < 2) throw InputError("inversion loss needs a batch of size >= 2");
  ForwardState st;
  net.forward(batch, st, /*train_mode=*/false);
  return loss_from_state(net, st, c, s);
}

// Gradient of the total loss w.r.t. the input batch, reusing a forward state.
inline Tensor loss_gradient(const Network& net, const ForwardState& st, int c,
                            const InversionSettings& s,
                            LossComponents* out_comps = nullptr) {
  const std::size_t n = st.batch_size();
  detail::BnResiduals res;
  LossComponents comps = loss_from_state(net, st, c, s, &res);
  if (out_comps != nullptr) *out_comps = comps;

  std::vector<int> labels(n, c);
  Tensor dlogits;
  cross_entropy(st.logits, labels, &dlogits);

  const auto blocks = static_cast<std::size_t>(net.num_blocks());
  std::vector<Vec> d_mean(blocks), d_var(blocks);
  for (std::size_t l = 0; l < blocks; ++l) {
    const auto& bn = net.bns[l];
    d_mean[l].assign(res.mean[l].size(), 0.0);
    d_var[l].assign(res.var[l].size(), 0.0);
    for (std::size_t k = 0; k < d_mean[l].size(); ++k) {
      if (res.mean_norm[l] > 0.0)
        d_mean[l][k] = s.bn_loss_weight * (res.mean[l][k] - bn.running_mean[k]) / res.mean_norm[l];
      if (res.var_norm[l] > 0.0)
        d_var[l][k] = s.bn_loss_weight * (res.var[l][k] - bn.running_var[k]) / res.var_norm[l];
    }
  }

  EvalBackwardRequest req;
  req.dlogits = &dlogits;
  req.d_batch_mean = &d_mean;
  req.d_batch_var = &d_var;
  req.want_input_grad = true;
  Tensor grad = net.backward_eval(st, req).input_grad;

  if (s.tv_weight > 0.0) {
    Tensor tvg(st.input.shape);
    detail::total_variation(st.input, &tvg);
    for (std::size_t i = 0; i < grad.size(); ++i) grad.v[i] += s.tv_weight * tvg.v[i];
  }
  if (s.l2_weight > 0.0)
    for (std::size_t i = 0; i < grad.size(); ++i)
      grad.v[i] += s.l2_weight * 2.0 * st.input.v[i] / static_cast<double>(n);
  return grad;
}

namespace detail {

struct Adam {
  Vec m, v;
  int t = 0;
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(std::size_t n, double lr_) : m(n, 0.0), v(n, 0.0), lr(lr_) {}

  void step(Vec& x, const Vec& g) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

inline double batch_mean_class_logit(const Tensor& logits, int c) {
  double s = 0.0;
  for (std::size_t b = 0; b < logits.dim(0); ++b)
    s += logits.at2(b, static_cast<std::size_t>(c));
  return s / static_cast<double>(logits.dim(0));
}

}  // namespace detail

// Optimizes one batch of noise images toward class c, recording the class
// score, per-channel activation gradients, and loss components per step.
inline std::pair<Tensor, TrajectoryRecord> invert_batch(const Network& net, int c,
                                                        int batch_size,
                                                        const InversionSettings& s,
                                                        std::uint64_t seed) {
  const auto ch = static_cast<std::size_t>(net.arch.in_channels);
  const auto sz = static_cast<std::size_t>(net.arch.image_size);
  Tensor x({static_cast<std::size_t>(batch_size), ch, sz, sz});
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : x.v) v = 1.0 / (1.0 + std::exp(-gauss(engine)));

  const int blocks = net.num_blocks();
  const int T = s.iterations;
  TrajectoryRecord traj;
  traj.y.reserve(static_cast<std::size_t>(T));
  traj.g.resize(static_cast<std::size_t>(blocks));
  for (int l = 0; l < blocks; ++l)
    traj.g[static_cast<std::size_t>(l)] =
        Tensor({static_cast<std::size_t>(net.tap_channels(l)), static_cast<std::size_t>(T)});

  ForwardState st;
  net.forward(x, st, /*train_mode=*/false);
  traj.y0 = detail::batch_mean_class_logit(st.logits, c);
  traj.initial = loss_from_state(net, st, c, s);

  detail::Adam adam(x.size(), s.step_size);
  Tensor dlogits_taps(st.logits.shape);
  for (std::size_t b = 0; b < st.logits.dim(0); ++b)
    dlogits_taps.at2(b, static_cast<std::size_t>(c)) = 1.0;

  for (int t = 1; t <= T; ++t) {
    const Tensor grad = loss_gradient(net, st, c, s);
    adam.step(x.v, grad.v);
    for (auto& v : x.v) v = std::clamp(v, 0.0, 1.0);

    net.forward(x, st, /*train_mode=*/false);
    LossComponents comps = loss_from_state(net, st, c, s);
    if (!std::isfinite(comps.total))
      throw NumericError("inversion diverged at iteration " + std::to_string(t) +
                         " for class " + std::to_string(c));
    traj.y.push_back(detail::batch_mean_class_logit(st.logits, c));
    traj.ce.push_back(comps.ce);
    traj.mean_match.push_back(comps.mean_match);
    traj.var_match.push_back(comps.var_match);

    EvalBackwardRequest req;
    req.dlogits = &dlogits_taps;
    req.want_tap_grads = true;
    auto tap_grads = net.backward_eval(st, req).tap_grads;
    const double nb = static_cast<double>(batch_size);
    for (int l = 0; l < blocks; ++l) {
      const auto& tg = tap_grads[static_cast<std::size_t>(l)];
      const std::size_t hch = tg.dim(1), plane = tg.dim(2) * tg.dim(3);
      for (std::size_t k = 0; k < hch; ++k) {
        double acc = 0.0;
        for (std::size_t b = 0; b < tg.dim(0); ++b) {
          const double* p = tg.data() + (b * hch + k) * plane;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        traj.g[static_cast<std::size_t>(l)].at2(k, static_cast<std::size_t>(t - 1)) =
            acc / (nb * static_cast<double>(plane));
      }
    }
  }
  return {std::move(x), std::move(traj)};
}

inline ClassSynthesis invert_class(const Network& net, int c, const InversionSettings& s) {
  if (c < 0 || c >= net.arch.num_classes) throw InputError("invalid class id");
  validate_settings(s);
  ClassSynthesis out;
  const auto ch = static_cast<std::size_t>(net.arch.in_channels);
  const auto sz = static_cast<std::size_t>(net.arch.image_size);
  out.images = Tensor({static_cast<std::size_t>(s.samples_per_class), ch, sz, sz});

  std::size_t written = 0;
  int remaining = s.samples_per_class;
  int batch_index = 0;
  while (remaining > 0) {
    const int bs = std::min(remaining, s.batch_size);
    if (bs < 2)
      throw ConfigError("final inversion batch has fewer than 2 samples; "
                        "adjust samples_per_class or batch_size");
    auto [images, traj] = invert_batch(
        net, c, bs, s,
        derive_seed(s.seed, {0x1Fu, static_cast<std::uint64_t>(c),
                             static_cast<std::uint64_t>(batch_index)}));
    std::copy(images.v.begin(), images.v.end(),
              out.images.v.begin() + static_cast<std::ptrdiff_t>(written));
    written += images.size();
    out.trajectories.push_back(std::move(traj));
    remaining -= bs;
    ++batch_index;
  }

  // MSP consistency: fraction of final impressions the model assigns to c.
  const Tensor logits = logits_of(net, out.images);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    std::span<const double> row(logits.data() + b * logits.dim(1), logits.dim(1));
    if (static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == c)
      ++hits;
  }
  out.msp_consistency = static_cast<double>(hits) / static_cast<double>(logits.dim(0));
  return out;
}

inline SynthesisDataset synthesize_all(const Network& net, const InversionSettings& s,
                                       bool warn_on_low_consistency = true) {
  SynthesisDataset ds;
  ds.config = s;
  ds.checkpoint_fingerprint = model_fingerprint(net);
  for (int c = 0; c < net.arch.num_classes; ++c) {
    try {
      ds.classes.push_back(invert_class(net, c, s));
    } catch (const NumericError& e) {
      throw NumericError("class " + std::to_string(c) + ": " + e.what());
    }
    if (warn_on_low_consistency &&
        ds.classes.back().msp_consistency < s.min_msp_consistency)
      std::fprintf(stderr,
                   "warning: class %d impressions reach MSP consistency %.2f "
                   "(below %.2f)\n",
                   c, ds.classes.back().msp_consistency, s.min_msp_consistency);
  }
  return ds;
}

// ---- persistence ----

inline void save_synthesis(const fs::path& dir, const SynthesisDataset& ds) {
  ensure_dir(dir);
  json classes = json::array();
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    const auto& cls = ds.classes[c];
    const std::string img_file = "class" + std::to_string(c) + "_images.bin";
    write_doubles(dir / img_file, cls.images.v);
    json batches = json::array();
    for (std::size_t b = 0; b < cls.trajectories.size(); ++b) {
      const auto& tr = cls.trajectories[b];
      const std::string tf =
          "class" + std::to_string(c) + "_batch" + std::to_string(b) + "_traj.bin";
      Vec blob;
      blob.reserve(4 + 4 * tr.y.size());
      blob.push_back(tr.y0);
      blob.push_back(tr.initial.ce);
      blob.push_back(tr.initial.mean_match);
      blob.push_back(tr.initial.var_match);
      blob.insert(blob.end(), tr.y.begin(), tr.y.end());
      blob.insert(blob.end(), tr.ce.begin(), tr.ce.end());
      blob.insert(blob.end(), tr.mean_match.begin(), tr.mean_match.end());
      blob.insert(blob.end(), tr.var_match.begin(), tr.var_match.end());
      for (const auto& g : tr.g) blob.insert(blob.end(), g.v.begin(), g.v.end());
      write_doubles(dir / tf, blob);
      batches.push_back(json{{"file", tf}});
    }
    classes.push_back(json{{"images", img_file},
                           {"image_shape", cls.images.shape},
                           {"msp_consistency", cls.msp_consistency},
                           {"batches", batches}});
  }
  std::vector<int> layer_channels;
  if (!ds.classes.empty())
    for (const auto& g : ds.classes.front().trajectories.front().g)
      layer_channels.push_back(static_cast<int>(g.dim(0)));
  json manifest{{"version", 1},
                {"kind", "synthesis"},
                {"checkpoint_fingerprint", ds.checkpoint_fingerprint},
                {"config", settings_to_json(ds.config)},
                {"iterations", ds.config.iterations},
                {"layer_channels", layer_channels},
                {"classes", classes}};
  write_json(dir / "manifest.json", manifest);
}

inline SynthesisDataset load_synthesis(const fs::path& dir) {
  json m = read_json(dir / "manifest.json");
  if (m.value("kind", "") != "synthesis")
    throw MissingArtifactError("not a synthesis dataset: " + dir.string());
  SynthesisDataset ds;
  ds.checkpoint_fingerprint = m.at("checkpoint_fingerprint").get<std::string>();
  ds.config = settings_from_json(m.at("config"));
  const auto T = static_cast<std::size_t>(m.at("iterations").get<int>());
  const auto layer_channels = m.at("layer_channels").get<std::vector<int>>();
  for (const auto& cj : m.at("classes")) {
    ClassSynthesis cls;
    auto shape = cj.at("image_shape").get<std::vector<std::size_t>>();
    cls.images = Tensor(shape);
    cls.images.v = read_doubles(dir / cj.at("images").get<std::string>(), Tensor::numel(shape));
    cls.msp_consistency = cj.at("msp_consistency").get<double>();
    for (const auto& bj : cj.at("batches")) {
      std::size_t total = 4 + 4 * T;
      for (int hc : layer_channels) total += static_cast<std::size_t>(hc) * T;
      Vec blob = read_doubles(dir / bj.at("file").get<std::string>(), total);
      TrajectoryRecord tr;
      std::size_t off = 0;
      tr.y0 = blob[off++];
      tr.initial.ce = blob[off++];
      tr.initial.mean_match = blob[off++];
      tr.initial.var_match = blob[off++];
      auto take = [&](Vec& dst) {
        dst.assign(blob.begin() + static_cast<std::ptrdiff_t>(off),
                   blob.begin() + static_cast<std::ptrdiff_t>(off + T));
        off += T;
      };
      take(tr.y);
      take(tr.ce);
      take(tr.mean_match);
      take(tr.var_match);
      for (int hc : layer_channels) {
        Tensor g({static_cast<std::size_t>(hc), T});
        std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(off), g.size(), g.v.begin());
        off += g.size();
        tr.g.push_back(std::move(g));
      }
      cls.trajectories.push_back(std::move(tr));
    }
    ds.classes.push_back(std::move(cls));
  }
  return ds;
}

}  // namespace c2ir
