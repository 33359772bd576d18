#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "c2ir/checkpoint.hpp"
#include "c2ir/datagen.hpp"
#include "c2ir/net.hpp"
#include "c2ir/rng.hpp"

namespace c2ir {

struct TrainHyper {
  int epochs = 15;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
};

struct TrainResult {
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Mean cross entropy from logits; fills dlogits = (softmax - onehot) / n.
inline double cross_entropy(const Tensor& logits, std::span<const int> labels,
                            Tensor* dlogits = nullptr) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw InputError("label count mismatch");
  if (dlogits != nullptr) *dlogits = Tensor(logits.shape);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    std::span<const double> row(logits.data() + b * c, c);
    const double lse = log_sum_exp(row);
    loss += lse - row[static_cast<std::size_t>(labels[b])];
    if (dlogits != nullptr) {
      for (std::size_t j = 0; j < c; ++j)
        dlogits->at2(b, j) = std::exp(row[j] - lse) / static_cast<double>(n);
      dlogits->at2(b, static_cast<std::size_t>(labels[b])) -= 1.0 / static_cast<double>(n);
    }
  }
  return loss / static_cast<double>(n);
}

inline Tensor gather_batch(const ImageBatch& data, std::span<const std::size_t> idx) {
  auto shape = data.pixels.shape;
  shape[0] = idx.size();
  Tensor out(shape);
  const std::size_t stride = data.pixels.size() / data.count();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.pixels.v.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride),
                stride, out.v.begin() + static_cast<std::ptrdiff_t>(i * stride));
  return out;
}

inline double accuracy(const Network& net, const ImageBatch& data, int chunk = 256) {
  if (!data.labeled()) throw InputError("accuracy needs labels");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.count(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t stop = std::min(data.count(), start + static_cast<std::size_t>(chunk));
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = logits_of(net, gather_batch(data, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::span<const double> row(logits.data() + b * logits.dim(1), logits.dim(1));
      const auto pred = static_cast<int>(
          std::max_element(row.begin(), row.end()) - row.begin());
      if (pred == data.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

// Plain SGD with momentum. BN running statistics follow the exponential
// update after every batch; the returned model is meant to be frozen.
inline TrainResult train_classifier(Network& net, const ImageBatch& train_set,
                                    const ImageBatch& test_set, const TrainHyper& hyper,
                                    std::uint64_t seed) {
  if (!train_set.labeled()) throw InputError("training set must be labeled");
  if (hyper.batch_size < 2) throw ConfigError("batch_size must be >= 2 for BN");

  struct Velocity {
    std::vector<Tensor> conv;
    std::vector<Vec> bn_gamma, bn_beta;
    Tensor head_w;
    Vec head_b;
  } vel;
  vel.conv.resize(net.convs.size());
  for (std::size_t l = 0; l < net.convs.size(); ++l)
    vel.conv[l] = Tensor(net.convs[l].weight.shape);
  vel.bn_gamma.resize(net.bns.size());
  vel.bn_beta.resize(net.bns.size());
  for (std::size_t l = 0; l < net.bns.size(); ++l) {
    vel.bn_gamma[l].assign(net.bns[l].gamma.size(), 0.0);
    vel.bn_beta[l].assign(net.bns[l].beta.size(), 0.0);
  }
  vel.head_w = Tensor(net.head.weight.shape);
  vel.head_b.assign(net.head.bias.size(), 0.0);

  auto sgd = [&](Vec& w, const Vec& g, Vec& v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = hyper.momentum * v[i] + g[i];
      w[i] -= hyper.lr * v[i];
    }
  };

  std::vector<std::size_t> order(train_set.count());
  std::iota(order.begin(), order.end(), 0);
  double last_loss = 0.0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng rng(derive_seed(seed, {0x7Eu, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      if (stop - start < 2) continue;  // leftover too small for batch statistics
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Tensor batch = gather_batch(train_set, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];

      ForwardState st;
      net.forward(batch, st, /*train_mode=*/true);
      Tensor dlogits;
      last_loss = cross_entropy(st.logits, labels, &dlogits);
      if (!std::isfinite(last_loss))
        throw NumericError("training diverged at epoch " + std::to_string(epoch));

      ParamGrads grads;
      net.backward_train(st, dlogits, grads);
      for (std::size_t l = 0; l < net.convs.size(); ++l)
        sgd(net.convs[l].weight.v, grads.conv_weight[l].v, vel.conv[l].v);
      for (std::size_t l = 0; l < net.bns.size(); ++l) {
        sgd(net.bns[l].gamma, grads.bn_gamma[l], vel.bn_gamma[l]);
        sgd(net.bns[l].beta, grads.bn_beta[l], vel.bn_beta[l]);
      }
      sgd(net.head.weight.v, grads.head_weight.v, vel.head_w.v);
      sgd(net.head.bias, grads.head_bias, vel.head_b);
      net.update_running_stats(st);
    }
  }

  TrainResult res;
  res.final_loss = last_loss;
  res.train_accuracy = accuracy(net, train_set);
  res.test_accuracy = test_set.count() > 0 ? accuracy(net, test_set) : 0.0;
  return res;
}

}  // namespace c2ir
