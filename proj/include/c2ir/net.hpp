#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "c2ir/datagen.hpp"
#include "c2ir/errors.hpp"
#include "c2ir/rng.hpp"
#include "c2ir/tensor.hpp"

namespace c2ir {

struct ArchConfig {
  std::vector<int> block_channels{16, 32, 64};
  int num_classes = 4;
  int in_channels = 3;
  int image_size = 16;
};

inline void validate_arch(const ArchConfig& a) {
  if (a.block_channels.empty()) throw ConfigError("arch needs at least one block");
  for (int c : a.block_channels)
    if (c < 1) throw ConfigError("block channel counts must be positive");
  if (a.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (a.in_channels < 1) throw ConfigError("in_channels must be >= 1");
  const int depth = static_cast<int>(a.block_channels.size());
  if (a.image_size % (1 << depth) != 0 || (a.image_size >> depth) < 1)
    throw ConfigError("image_size incompatible with downsampling depth " +
                      std::to_string(depth));
}

// 3x3 convolution, stride 1, zero padding 1, no bias (BatchNorm follows).
struct ConvLayer {
  int in_ch = 0, out_ch = 0;
  Tensor weight;  // [out_ch, in_ch, 3, 3]
};

struct BatchNormLayer {
  Vec gamma, beta;
  Vec running_mean, running_var;
  double momentum = 0.9;  // new = momentum * old + (1 - momentum) * batch
  double eps = 1e-5;
};

struct LinearLayer {
  Tensor weight;  // [out, in]
  Vec bias;
};

struct BlockState {
  Tensor conv_out;  // BN input, cached for statistics and backward
  Tensor act;       // post-rectifier activation map (the tap)
  Tensor pooled;
  Vec batch_mean, batch_var;  // filled in train-mode forward
};

struct ForwardState {
  Tensor input;
  std::vector<BlockState> blocks;
  Tensor features;  // global average pool output [n, ch_last]
  Tensor logits;    // [n, num_classes]
  bool train_mode = false;

  std::size_t batch_size() const { return input.dim(0); }
};

struct ParamGrads {
  std::vector<Tensor> conv_weight;
  std::vector<Vec> bn_gamma, bn_beta;
  Tensor head_weight;
  Vec head_bias;
};

struct EvalBackwardRequest {
  const Tensor* dlogits = nullptr;
  // Extra gradient contributions of the objective w.r.t. per-block batch
  // statistics of the BN inputs (used by the statistics-matching loss).
  const std::vector<Vec>* d_batch_mean = nullptr;
  const std::vector<Vec>* d_batch_var = nullptr;
  // Direct objective dependence on taps, added to the flowing gradient.
  const std::vector<Tensor>* d_taps = nullptr;
  bool want_input_grad = false;
  bool want_tap_grads = false;
};

struct EvalBackwardResult {
  Tensor input_grad;
  std::vector<Tensor> tap_grads;  // per layer, [n, h_l, d_l, d_l]
};

namespace nn {

inline void conv3x3_forward(const ConvLayer& conv, const Tensor& in, Tensor& out) {
  const std::size_t n = in.dim(0), s = in.dim(2);
  out = Tensor({n, static_cast<std::size_t>(conv.out_ch), s, s});
  const std::size_t plane = s * s;
  for (std::size_t b = 0; b < n; ++b)
    for (int oc = 0; oc < conv.out_ch; ++oc) {
      double* dst0 = out.data() + (b * conv.out_ch + static_cast<std::size_t>(oc)) * plane;
      for (int ic = 0; ic < conv.in_ch; ++ic) {
        const double* src0 = in.data() + (b * conv.in_ch + static_cast<std::size_t>(ic)) * plane;
        const double* w = conv.weight.data() +
                          ((static_cast<std::size_t>(oc) * conv.in_ch + ic) * 9);
        for (int ky = 0; ky < 3; ++ky) {
          const int oy_lo = std::max(0, 1 - ky);
          const int oy_hi = static_cast<int>(s) - 1 - std::max(0, ky - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = w[ky * 3 + kx];
            const int ox_lo = std::max(0, 1 - kx);
            const int ox_hi = static_cast<int>(s) - 1 - std::max(0, kx - 1);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* src = src0 + (oy + ky - 1) * static_cast<int>(s) + (kx - 1);
              double* dst = dst0 + oy * static_cast<int>(s);
              for (int ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] += wv * src[ox];
            }
          }
        }
      }
    }
}

inline void conv3x3_backward_input(const ConvLayer& conv, const Tensor& dout,
                                   Tensor& din) {
  const std::size_t n = dout.dim(0), s = dout.dim(2);
  din = Tensor({n, static_cast<std::size_t>(conv.in_ch), s, s});
  const std::size_t plane = s * s;
  for (std::size_t b = 0; b < n; ++b)
    for (int oc = 0; oc < conv.out_ch; ++oc) {
      const double* dy0 = dout.data() + (b * conv.out_ch + static_cast<std::size_t>(oc)) * plane;
      for (int ic = 0; ic < conv.in_ch; ++ic) {
        double* dx0 = din.data() + (b * conv.in_ch + static_cast<std::size_t>(ic)) * plane;
        const double* w = conv.weight.data() +
                          ((static_cast<std::size_t>(oc) * conv.in_ch + ic) * 9);
        for (int ky = 0; ky < 3; ++ky) {
          const int oy_lo = std::max(0, 1 - ky);
          const int oy_hi = static_cast<int>(s) - 1 - std::max(0, ky - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = w[ky * 3 + kx];
            const int ox_lo = std::max(0, 1 - kx);
            const int ox_hi = static_cast<int>(s) - 1 - std::max(0, kx - 1);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              double* dx = dx0 + (oy + ky - 1) * static_cast<int>(s) + (kx - 1);
              const double* dy = dy0 + oy * static_cast<int>(s);
              for (int ox = ox_lo; ox <= ox_hi; ++ox) dx[ox] += wv * dy[ox];
            }
          }
        }
      }
    }
}

inline void conv3x3_backward_weight(const ConvLayer& conv, const Tensor& in,
                                    const Tensor& dout, Tensor& dweight) {
  const std::size_t n = in.dim(0), s = in.dim(2);
  if (dweight.empty())
    dweight = Tensor({static_cast<std::size_t>(conv.out_ch),
                      static_cast<std::size_t>(conv.in_ch), 3, 3});
  const std::size_t plane = s * s;
  for (std::size_t b = 0; b < n; ++b)
    for (int oc = 0; oc < conv.out_ch; ++oc) {
      const double* dy0 = dout.data() + (b * conv.out_ch + static_cast<std::size_t>(oc)) * plane;
      for (int ic = 0; ic < conv.in_ch; ++ic) {
        const double* src0 = in.data() + (b * conv.in_ch + static_cast<std::size_t>(ic)) * plane;
        double* dw = dweight.data() + ((static_cast<std::size_t>(oc) * conv.in_ch + ic) * 9);
        for (int ky = 0; ky < 3; ++ky) {
          const int oy_lo = std::max(0, 1 - ky);
          const int oy_hi = static_cast<int>(s) - 1 - std::max(0, ky - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const int ox_lo = std::max(0, 1 - kx);
            const int ox_hi = static_cast<int>(s) - 1 - std::max(0, kx - 1);
            double acc = 0.0;
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* src = src0 + (oy + ky - 1) * static_cast<int>(s) + (kx - 1);
              const double* dy = dy0 + oy * static_cast<int>(s);
              for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += dy[ox] * src[ox];
            }
            dw[ky * 3 + kx] += acc;
          }
        }
      }
    }
}

// Per-channel mean/biased variance over batch and spatial dims.
inline void batch_stats(const Tensor& x, Vec& mean, Vec& var) {
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  mean.assign(ch, 0.0);
  var.assign(ch, 0.0);
  const double m = static_cast<double>(n * plane);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* p = x.data() + (b * ch + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      mean[c] += s;
    }
  for (auto& v : mean) v /= m;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* p = x.data() + (b * ch + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean[c];
        s += d * d;
      }
      var[c] += s;
    }
  for (auto& v : var) v /= m;
}

inline void bn_apply(const Tensor& x, const Vec& mean, const Vec& var,
                     const BatchNormLayer& bn, Tensor& out) {
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  out = Tensor(x.shape);
  for (std::size_t c = 0; c < ch; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + bn.eps);
    const double g = bn.gamma[c] * inv_std;
    const double b0 = bn.beta[c] - mean[c] * g;
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = x.data() + (b * ch + c) * plane;
      double* dst = out.data() + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = g * src[i] + b0;
    }
  }
}

inline void relu_inplace(Tensor& x) {
  for (auto& v : x.v) v = v > 0.0 ? v : 0.0;
}

inline void avgpool2_forward(const Tensor& in, Tensor& out) {
  const std::size_t n = in.dim(0), ch = in.dim(1), s = in.dim(2), so = s / 2;
  out = Tensor({n, ch, so, so});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = in.data() + (b * ch + c) * s * s;
      double* dst = out.data() + (b * ch + c) * so * so;
      for (std::size_t y = 0; y < so; ++y)
        for (std::size_t x = 0; x < so; ++x)
          dst[y * so + x] = 0.25 * (src[2 * y * s + 2 * x] + src[2 * y * s + 2 * x + 1] +
                                    src[(2 * y + 1) * s + 2 * x] +
                                    src[(2 * y + 1) * s + 2 * x + 1]);
    }
}

inline void avgpool2_backward(const Tensor& dout, Tensor& din, std::size_t s) {
  const std::size_t n = dout.dim(0), ch = dout.dim(1), so = dout.dim(2);
  din = Tensor({n, ch, s, s});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = dout.data() + (b * ch + c) * so * so;
      double* dst = din.data() + (b * ch + c) * s * s;
      for (std::size_t y = 0; y < so; ++y)
        for (std::size_t x = 0; x < so; ++x) {
          const double g = 0.25 * src[y * so + x];
          dst[2 * y * s + 2 * x] = g;
          dst[2 * y * s + 2 * x + 1] = g;
          dst[(2 * y + 1) * s + 2 * x] = g;
          dst[(2 * y + 1) * s + 2 * x + 1] = g;
        }
    }
}

inline void gap_forward(const Tensor& in, Tensor& out) {
  const std::size_t n = in.dim(0), ch = in.dim(1), plane = in.dim(2) * in.dim(3);
  out = Tensor({n, ch});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* p = in.data() + (b * ch + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.at2(b, c) = s / static_cast<double>(plane);
    }
}

inline void gap_backward(const Tensor& dout, Tensor& din, std::size_t s) {
  const std::size_t n = dout.dim(0), ch = dout.dim(1), plane = s * s;
  din = Tensor({n, ch, s, s});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double g = dout.at2(b, c) / static_cast<double>(plane);
      double* p = din.data() + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = g;
    }
}

inline void linear_forward(const LinearLayer& lin, const Tensor& in, Tensor& out) {
  const std::size_t n = in.dim(0), fi = in.dim(1), fo = lin.weight.dim(0);
  out = Tensor({n, fo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < fo; ++j) {
      const double* w = lin.weight.data() + j * fi;
      const double* x = in.data() + b * fi;
      double s = lin.bias[j];
      for (std::size_t k = 0; k < fi; ++k) s += w[k] * x[k];
      out.at2(b, j) = s;
    }
}

}  // namespace nn

class Network {
 public:
  ArchConfig arch;
  std::vector<ConvLayer> convs;
  std::vector<BatchNormLayer> bns;
  LinearLayer head;

  static Network build(const ArchConfig& arch, std::uint64_t seed) {
    validate_arch(arch);
    Network net;
    net.arch = arch;
    std::mt19937_64 engine(seed);
    int ic = arch.in_channels;
    for (int oc : arch.block_channels) {
      ConvLayer conv;
      conv.in_ch = ic;
      conv.out_ch = oc;
      conv.weight = Tensor({static_cast<std::size_t>(oc), static_cast<std::size_t>(ic), 3, 3});
      const double std = std::sqrt(2.0 / (9.0 * ic));
      std::normal_distribution<double> d(0.0, std);
      for (auto& w : conv.weight.v) w = d(engine);
      net.convs.push_back(std::move(conv));

      BatchNormLayer bn;
      bn.gamma.assign(static_cast<std::size_t>(oc), 1.0);
      bn.beta.assign(static_cast<std::size_t>(oc), 0.0);
      bn.running_mean.assign(static_cast<std::size_t>(oc), 0.0);
      bn.running_var.assign(static_cast<std::size_t>(oc), 1.0);
      net.bns.push_back(std::move(bn));
      ic = oc;
    }
    const auto feat = static_cast<std::size_t>(arch.block_channels.back());
    net.head.weight = Tensor({static_cast<std::size_t>(arch.num_classes), feat});
    std::normal_distribution<double> dh(0.0, std::sqrt(1.0 / static_cast<double>(feat)));
    for (auto& w : net.head.weight.v) w = dh(engine);
    net.head.bias.assign(static_cast<std::size_t>(arch.num_classes), 0.0);
    return net;
  }

  int num_blocks() const { return static_cast<int>(convs.size()); }
  // spatial dim of the tap at block l (post-rectifier, pre-pool)
  int tap_dim(int l) const { return arch.image_size >> l; }
  int tap_channels(int l) const { return arch.block_channels[static_cast<std::size_t>(l)]; }

  void check_input(const Tensor& x) const {
    if (x.shape.size() != 4 || x.dim(1) != static_cast<std::size_t>(arch.in_channels) ||
        x.dim(2) != static_cast<std::size_t>(arch.image_size) ||
        x.dim(3) != static_cast<std::size_t>(arch.image_size))
      throw InputError("input shape does not match the architecture");
  }

  // Forward pass. train_mode selects batch statistics for BN normalization
  // (running statistics are never modified here; see update_running_stats).
  void forward(const Tensor& x, ForwardState& st, bool train_mode = false) const {
    check_input(x);
    st.input = x;
    st.train_mode = train_mode;
    st.blocks.assign(static_cast<std::size_t>(num_blocks()), BlockState{});
    const Tensor* cur = &st.input;
    for (int l = 0; l < num_blocks(); ++l) {
      auto& bs = st.blocks[static_cast<std::size_t>(l)];
      nn::conv3x3_forward(convs[static_cast<std::size_t>(l)], *cur, bs.conv_out);
      const auto& bn = bns[static_cast<std::size_t>(l)];
      if (train_mode) {
        nn::batch_stats(bs.conv_out, bs.batch_mean, bs.batch_var);
        nn::bn_apply(bs.conv_out, bs.batch_mean, bs.batch_var, bn, bs.act);
      } else {
        nn::bn_apply(bs.conv_out, bn.running_mean, bn.running_var, bn, bs.act);
      }
      nn::relu_inplace(bs.act);
      nn::avgpool2_forward(bs.act, bs.pooled);
      cur = &bs.pooled;
    }
    nn::gap_forward(*cur, st.features);
    nn::linear_forward(head, st.features, st.logits);
  }

  // Eq.-style exponential running update from the batch statistics cached in
  // a train-mode forward state.
  void update_running_stats(const ForwardState& st) {
    if (!st.train_mode) throw InputError("running stats update needs a train-mode state");
    for (int l = 0; l < num_blocks(); ++l) {
      auto& bn = bns[static_cast<std::size_t>(l)];
      const auto& bs = st.blocks[static_cast<std::size_t>(l)];
      for (std::size_t c = 0; c < bn.running_mean.size(); ++c) {
        bn.running_mean[c] = bn.momentum * bn.running_mean[c] + (1.0 - bn.momentum) * bs.batch_mean[c];
        bn.running_var[c] = bn.momentum * bn.running_var[c] + (1.0 - bn.momentum) * bs.batch_var[c];
      }
    }
  }

  // Training backward: parameter gradients for a train-mode forward state.
  void backward_train(const ForwardState& st, const Tensor& dlogits, ParamGrads& g) const {
    const std::size_t n = st.batch_size();
    const std::size_t fi = st.features.dim(1), fo = st.logits.dim(1);
    if (g.conv_weight.empty()) {
      g.conv_weight.resize(convs.size());
      g.bn_gamma.assign(bns.size(), {});
      g.bn_beta.assign(bns.size(), {});
      for (std::size_t l = 0; l < bns.size(); ++l) {
        g.bn_gamma[l].assign(bns[l].gamma.size(), 0.0);
        g.bn_beta[l].assign(bns[l].beta.size(), 0.0);
      }
      g.head_weight = Tensor(head.weight.shape);
      g.head_bias.assign(head.bias.size(), 0.0);
    }

    Tensor dfeat({n, fi});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < fo; ++j) {
        const double dy = dlogits.at2(b, j);
        g.head_bias[j] += dy;
        const double* x = st.features.data() + b * fi;
        double* dw = g.head_weight.data() + j * fi;
        double* dx = dfeat.data() + b * fi;
        const double* w = head.weight.data() + j * fi;
        for (std::size_t k = 0; k < fi; ++k) {
          dw[k] += dy * x[k];
          dx[k] += dy * w[k];
        }
      }

    Tensor dcur;
    const auto& last = st.blocks.back();
    nn::gap_backward(dfeat, dcur, last.pooled.dim(2));

    for (int l = num_blocks() - 1; l >= 0; --l) {
      const auto& bs = st.blocks[static_cast<std::size_t>(l)];
      const auto& bn = bns[static_cast<std::size_t>(l)];
      Tensor dact;
      nn::avgpool2_backward(dcur, dact, bs.act.dim(2));
      // ReLU
      for (std::size_t i = 0; i < dact.size(); ++i)
        if (bs.act.v[i] <= 0.0) dact.v[i] = 0.0;
      // BN (batch statistics)
      const std::size_t ch = bs.conv_out.dim(1), plane = bs.conv_out.dim(2) * bs.conv_out.dim(3);
      const double m = static_cast<double>(n * plane);
      Tensor dconv(bs.conv_out.shape);
      auto& dgamma = g.bn_gamma[static_cast<std::size_t>(l)];
      auto& dbeta = g.bn_beta[static_cast<std::size_t>(l)];
      for (std::size_t c = 0; c < ch; ++c) {
        const double inv_std = 1.0 / std::sqrt(bs.batch_var[c] + bn.eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const double* xp = bs.conv_out.data() + (b * ch + c) * plane;
          const double* dp = dact.data() + (b * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - bs.batch_mean[c]) * inv_std;
            sum_dy += dp[i];
            sum_dy_xhat += dp[i] * xhat;
          }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        const double gscale = bn.gamma[c] * inv_std;
        for (std::size_t b = 0; b < n; ++b) {
          const double* xp = bs.conv_out.data() + (b * ch + c) * plane;
          const double* dp = dact.data() + (b * ch + c) * plane;
          double* dc = dconv.data() + (b * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double xhat = (xp[i] - bs.batch_mean[c]) * inv_std;
            dc[i] = gscale * (dp[i] - sum_dy / m - xhat * sum_dy_xhat / m);
          }
        }
      }
      const Tensor& block_in = l == 0 ? st.input : st.blocks[static_cast<std::size_t>(l - 1)].pooled;
      nn::conv3x3_backward_weight(convs[static_cast<std::size_t>(l)], block_in, dconv,
                                  g.conv_weight[static_cast<std::size_t>(l)]);
      if (l > 0) nn::conv3x3_backward_input(convs[static_cast<std::size_t>(l)], dconv, dcur);
    }
  }

  // Inference-mode backward for input and/or tap gradients, with optional
  // injected gradients on the BN-input batch statistics and on the taps.
  EvalBackwardResult backward_eval(const ForwardState& st, const EvalBackwardRequest& req) const {
    if (st.train_mode) throw InputError("backward_eval needs an inference-mode state");
    if (req.dlogits == nullptr) throw InputError("backward_eval needs dlogits");
    const std::size_t n = st.batch_size();
    const std::size_t fi = st.features.dim(1), fo = st.logits.dim(1);
    EvalBackwardResult res;
    if (req.want_tap_grads) res.tap_grads.resize(static_cast<std::size_t>(num_blocks()));

    Tensor dfeat({n, fi});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < fo; ++j) {
        const double dy = req.dlogits->at2(b, j);
        if (dy == 0.0) continue;
        const double* w = head.weight.data() + j * fi;
        double* dx = dfeat.data() + b * fi;
        for (std::size_t k = 0; k < fi; ++k) dx[k] += dy * w[k];
      }

    Tensor dcur;
    nn::gap_backward(dfeat, dcur, st.blocks.back().pooled.dim(2));

    for (int l = num_blocks() - 1; l >= 0; --l) {
      const auto& bs = st.blocks[static_cast<std::size_t>(l)];
      const auto& bn = bns[static_cast<std::size_t>(l)];
      Tensor dact;
      nn::avgpool2_backward(dcur, dact, bs.act.dim(2));
      if (req.d_taps != nullptr && !(*req.d_taps)[static_cast<std::size_t>(l)].empty()) {
        const auto& extra = (*req.d_taps)[static_cast<std::size_t>(l)];
        if (!extra.same_shape(dact)) throw InputError("tap gradient shape mismatch");
        for (std::size_t i = 0; i < dact.size(); ++i) dact.v[i] += extra.v[i];
      }
      if (req.want_tap_grads) res.tap_grads[static_cast<std::size_t>(l)] = dact;
      // ReLU
      for (std::size_t i = 0; i < dact.size(); ++i)
        if (bs.act.v[i] <= 0.0) dact.v[i] = 0.0;
      // BN with running statistics: plain per-channel scaling
      const std::size_t ch = bs.conv_out.dim(1), plane = bs.conv_out.dim(2) * bs.conv_out.dim(3);
      Tensor dconv(bs.conv_out.shape);
      for (std::size_t c = 0; c < ch; ++c) {
        const double gscale = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.eps);
        for (std::size_t b = 0; b < n; ++b) {
          const double* dp = dact.data() + (b * ch + c) * plane;
          double* dc = dconv.data() + (b * ch + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dc[i] = gscale * dp[i];
        }
      }
      // Injected gradients through the batch statistics of the BN input.
      const bool want_mean = req.d_batch_mean != nullptr &&
                             !(*req.d_batch_mean)[static_cast<std::size_t>(l)].empty();
      const bool want_var = req.d_batch_var != nullptr &&
                            !(*req.d_batch_var)[static_cast<std::size_t>(l)].empty();
      if (want_mean || want_var) {
        Vec mean, var;
        nn::batch_stats(bs.conv_out, mean, var);
        const double m = static_cast<double>(n * plane);
        for (std::size_t c = 0; c < ch; ++c) {
          const double dmu = want_mean ? (*req.d_batch_mean)[static_cast<std::size_t>(l)][c] : 0.0;
          const double dvar = want_var ? (*req.d_batch_var)[static_cast<std::size_t>(l)][c] : 0.0;
          if (dmu == 0.0 && dvar == 0.0) continue;
          for (std::size_t b = 0; b < n; ++b) {
            const double* xp = bs.conv_out.data() + (b * ch + c) * plane;
            double* dc = dconv.data() + (b * ch + c) * plane;
            for (std::size_t i = 0; i < plane; ++i)
              dc[i] += dmu / m + dvar * 2.0 * (xp[i] - mean[c]) / m;
          }
        }
      }
      if (l > 0) {
        nn::conv3x3_backward_input(convs[static_cast<std::size_t>(l)], dconv, dcur);
      } else if (req.want_input_grad) {
        nn::conv3x3_backward_input(convs[0], dconv, res.input_grad);
      }
    }
    return res;
  }

  // Replays the network from a modified tap at block l onward (pool of the
  // given tap, then the remaining blocks and the head). Used by the
  // finite-difference checks of activation gradients.
  Tensor forward_from_tap(int l, const Tensor& tap) const {
    if (l < 0 || l >= num_blocks()) throw InputError("invalid tap layer");
    Tensor pooled;
    nn::avgpool2_forward(tap, pooled);
    Tensor cur = std::move(pooled);
    for (int j = l + 1; j < num_blocks(); ++j) {
      Tensor conv_out, act;
      nn::conv3x3_forward(convs[static_cast<std::size_t>(j)], cur, conv_out);
      const auto& bn = bns[static_cast<std::size_t>(j)];
      nn::bn_apply(conv_out, bn.running_mean, bn.running_var, bn, act);
      nn::relu_inplace(act);
      nn::avgpool2_forward(act, cur);
    }
    Tensor feat, logits;
    nn::gap_forward(cur, feat);
    nn::linear_forward(head, feat, logits);
    return logits;
  }
};

// ---- thin wrappers matching the module surface ----

struct TapsForward {
  Tensor logits;                // [n, C]
  std::vector<Tensor> taps;     // per layer, [n, h_l, d_l, d_l]
};

inline TapsForward forward_with_taps(const Network& net, const Tensor& pixels) {
  ForwardState st;
  net.forward(pixels, st, /*train_mode=*/false);
  TapsForward out;
  out.logits = std::move(st.logits);
  out.taps.reserve(st.blocks.size());
  for (auto& b : st.blocks) out.taps.push_back(std::move(b.act));
  return out;
}

inline Tensor logits_of(const Network& net, const Tensor& pixels) {
  ForwardState st;
  net.forward(pixels, st, /*train_mode=*/false);
  return st.logits;
}

// Scalar objective of the logits and taps: fills d(value)/dlogits, and may
// fill d(value)/dtaps (leave tensors empty for no direct dependence).
using Objective = std::function<double(const ForwardState& st, Tensor& dlogits,
                                       std::vector<Tensor>& dtaps)>;

inline Tensor input_gradient(const Network& net, const Tensor& pixels,
                             const Objective& objective, double* value = nullptr) {
  ForwardState st;
  net.forward(pixels, st, /*train_mode=*/false);
  Tensor dlogits(st.logits.shape);
  std::vector<Tensor> dtaps(static_cast<std::size_t>(net.num_blocks()));
  const double v = objective(st, dlogits, dtaps);
  if (value != nullptr) *value = v;
  EvalBackwardRequest req;
  req.dlogits = &dlogits;
  req.d_taps = &dtaps;
  req.want_input_grad = true;
  return net.backward_eval(st, req).input_grad;
}

// Gradients of the class-c logit w.r.t. every tapped activation map,
// per sample: result[l][n,k,i,j] = d logits[n][c] / d A^l(x_n)[k,i,j].
inline std::vector<Tensor> activation_gradients(const Network& net, const Tensor& pixels,
                                                int c) {
  if (c < 0 || c >= net.arch.num_classes) throw InputError("invalid class id");
  ForwardState st;
  net.forward(pixels, st, /*train_mode=*/false);
  Tensor dlogits(st.logits.shape);
  for (std::size_t b = 0; b < dlogits.dim(0); ++b) dlogits.at2(b, static_cast<std::size_t>(c)) = 1.0;
  EvalBackwardRequest req;
  req.dlogits = &dlogits;
  req.want_tap_grads = true;
  return net.backward_eval(st, req).tap_grads;
}

}  // namespace c2ir
