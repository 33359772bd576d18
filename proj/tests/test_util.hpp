#pragma once

// Shared helpers for the test suites: a small end-to-end fixture that trains
// in seconds, finite-difference utilities, scratch directories.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "c2ir/calibration.hpp"
#include "c2ir/checkpoint.hpp"
#include "c2ir/config.hpp"
#include "c2ir/datagen.hpp"
#include "c2ir/inversion.hpp"
#include "c2ir/net.hpp"
#include "c2ir/train.hpp"

namespace c2ir::testutil {

inline RunConfig tiny_config(std::uint64_t seed = 7) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.data.num_classes = 4;
  cfg.data.image_size = 8;
  cfg.data.channels = 3;
  cfg.data.samples_per_class = 150;
  cfg.data.train_fraction = 0.8;
  cfg.arch.block_channels = {8, 12};
  cfg.train.epochs = 8;
  cfg.train.batch_size = 32;
  cfg.inversion.iterations = 60;
  cfg.inversion.batch_size = 8;
  cfg.inversion.samples_per_class = 16;
  cfg.eval.id_test_count = 80;
  cfg.eval.ood_count = 80;
  normalize_config(cfg);
  return cfg;
}

struct TinyPipeline {
  RunConfig cfg;
  ImageBatch train_set, test_set;
  Checkpoint ckpt;
  SynthesisDataset synthesis;
  CalibrationArtifact artifact;
};

// Built once per test binary; every consumer treats it as read-only.
inline const TinyPipeline& tiny_pipeline() {
  static const TinyPipeline p = [] {
    TinyPipeline t;
    t.cfg = tiny_config();
    DatasetSpec spec;
    spec.num_classes = t.cfg.data.num_classes;
    spec.image_size = t.cfg.data.image_size;
    spec.channels = t.cfg.data.channels;
    spec.samples_per_class = t.cfg.data.samples_per_class;
    spec.noise_sigma = t.cfg.data.noise_sigma;
    spec.seed = derive_seed(t.cfg.seed, {0xDAu});
    const ImageBatch full = generate_id_dataset(spec);
    auto parts = split(full, 0.8, 0.2, derive_seed(t.cfg.seed, {0x5Fu}));
    t.train_set = std::move(parts.first);
    t.test_set = std::move(parts.second);
    Network net = Network::build(t.cfg.arch, derive_seed(t.cfg.seed, {0xA0u}));
    const TrainResult res = train_classifier(net, t.train_set, t.test_set, t.cfg.train,
                                             derive_seed(t.cfg.seed, {0x7Au}));
    t.ckpt.net = std::move(net);
    t.ckpt.meta.seed = t.cfg.seed;
    t.ckpt.meta.epochs = t.cfg.train.epochs;
    t.ckpt.meta.train_accuracy = res.train_accuracy;
    t.ckpt.meta.test_accuracy = res.test_accuracy;
    t.synthesis = synthesize_all(t.ckpt.net, t.cfg.inversion,
                                 /*warn_on_low_consistency=*/false);
    t.artifact = build_artifact(t.ckpt.net, t.synthesis);
    return t;
  }();
  return p;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Central difference of f() w.r.t. one coordinate, restoring the original.
template <typename F>
double central_diff(double& coord, double h, F&& f) {
  const double orig = coord;
  coord = orig + h;
  const double fp = f();
  coord = orig - h;
  const double fm = f();
  coord = orig;
  return (fp - fm) / (2.0 * h);
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() / "c2ir_tests" /
           (name + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace c2ir::testutil
