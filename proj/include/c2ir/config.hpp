#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2ir/datagen.hpp"
#include "c2ir/inversion.hpp"
#include "c2ir/io.hpp"
#include "c2ir/net.hpp"
#include "c2ir/train.hpp"

namespace c2ir {

struct DetectorSettings {
  std::string threshold = "auto";  // "auto" or a number
  double energy_temperature = 1.0;
  double odin_temperature = 1000.0;
  double odin_epsilon = 0.0014;
};

struct EvalSettings {
  int id_test_count = 500;
  int ood_count = 500;
  std::vector<std::string> ood_sets{"uniform_noise", "held_out_shape", "grating_texture"};
  std::vector<std::string> methods{"c2ir", "msp", "energy", "odin"};
};

struct AblationSettings {
  std::vector<std::string> modes{"mgi", "penultimate_only", "uniform_mean",
                                 "random_weights", "bn_stats_reference"};
};

// One hierarchical configuration shared by every pipeline stage.
struct RunConfig {
  std::uint64_t seed = 1;
  struct Data {
    int num_classes = 4;
    int image_size = 16;
    int channels = 3;
    int samples_per_class = 2500;
    double train_fraction = 0.8;
    double noise_sigma = 0.05;
  } data;
  ArchConfig arch;  // num_classes/in_channels/image_size mirrored from data
  TrainHyper train;
  InversionSettings inversion;  // seed mirrored from the top-level seed
  DetectorSettings detector;
  EvalSettings eval;
  AblationSettings ablation;
  int compare_class = 0;  // class row used by the layer-comparison table
};

// Propagates the shared fields into the per-module structs (class count and
// image geometry into the arch, the top-level seed into the inversion).
inline void normalize_config(RunConfig& c) {
  c.arch.num_classes = c.data.num_classes;
  c.arch.in_channels = c.data.channels;
  c.arch.image_size = c.data.image_size;
  c.inversion.seed = c.seed;
}

inline json config_to_json(const RunConfig& c) {
  return json{
      {"version", 1},
      {"seed", c.seed},
      {"data",
       {{"num_classes", c.data.num_classes},
        {"image_size", c.data.image_size},
        {"channels", c.data.channels},
        {"samples_per_class", c.data.samples_per_class},
        {"train_fraction", c.data.train_fraction},
        {"noise_sigma", c.data.noise_sigma}}},
      {"arch", {{"block_channels", c.arch.block_channels}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"momentum", c.train.momentum}}},
      {"inversion",
       {{"iterations", c.inversion.iterations},
        {"batch_size", c.inversion.batch_size},
        {"samples_per_class", c.inversion.samples_per_class},
        {"step_size", c.inversion.step_size},
        {"bn_loss_weight", c.inversion.bn_loss_weight},
        {"tv_weight", c.inversion.tv_weight},
        {"l2_weight", c.inversion.l2_weight},
        {"min_msp_consistency", c.inversion.min_msp_consistency}}},
      {"detector",
       {{"threshold", c.detector.threshold},
        {"energy_temperature", c.detector.energy_temperature},
        {"odin_temperature", c.detector.odin_temperature},
        {"odin_epsilon", c.detector.odin_epsilon}}},
      {"eval",
       {{"id_test_count", c.eval.id_test_count},
        {"ood_count", c.eval.ood_count},
        {"ood_sets", c.eval.ood_sets},
        {"methods", c.eval.methods}}},
      {"ablation", {{"modes", c.ablation.modes}}},
      {"compare_class", c.compare_class}};
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.num_classes = d.value("num_classes", c.data.num_classes);
      c.data.image_size = d.value("image_size", c.data.image_size);
      c.data.channels = d.value("channels", c.data.channels);
      c.data.samples_per_class = d.value("samples_per_class", c.data.samples_per_class);
      c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
      c.data.noise_sigma = d.value("noise_sigma", c.data.noise_sigma);
    }
    if (j.contains("arch"))
      c.arch.block_channels =
          j.at("arch").value("block_channels", c.arch.block_channels);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.momentum = t.value("momentum", c.train.momentum);
    }
    if (j.contains("inversion")) {
      const auto& i = j.at("inversion");
      c.inversion.iterations = i.value("iterations", c.inversion.iterations);
      c.inversion.batch_size = i.value("batch_size", c.inversion.batch_size);
      c.inversion.samples_per_class =
          i.value("samples_per_class", c.inversion.samples_per_class);
      c.inversion.step_size = i.value("step_size", c.inversion.step_size);
      c.inversion.bn_loss_weight = i.value("bn_loss_weight", c.inversion.bn_loss_weight);
      c.inversion.tv_weight = i.value("tv_weight", c.inversion.tv_weight);
      c.inversion.l2_weight = i.value("l2_weight", c.inversion.l2_weight);
      c.inversion.min_msp_consistency =
          i.value("min_msp_consistency", c.inversion.min_msp_consistency);
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      if (d.contains("threshold")) {
        if (d.at("threshold").is_number())
          c.detector.threshold = d.at("threshold").dump();
        else
          c.detector.threshold = d.at("threshold").get<std::string>();
      }
      c.detector.energy_temperature =
          d.value("energy_temperature", c.detector.energy_temperature);
      c.detector.odin_temperature =
          d.value("odin_temperature", c.detector.odin_temperature);
      c.detector.odin_epsilon = d.value("odin_epsilon", c.detector.odin_epsilon);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.id_test_count = e.value("id_test_count", c.eval.id_test_count);
      c.eval.ood_count = e.value("ood_count", c.eval.ood_count);
      c.eval.ood_sets = e.value("ood_sets", c.eval.ood_sets);
      c.eval.methods = e.value("methods", c.eval.methods);
    }
    if (j.contains("ablation"))
      c.ablation.modes = j.at("ablation").value("modes", c.ablation.modes);
    c.compare_class = j.value("compare_class", c.compare_class);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  normalize_config(c);
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  return config_from_json(read_json(path));
}

// Applies one "a.b.c=value" override onto a JSON tree. Values parse as JSON
// when possible (numbers, booleans, arrays), otherwise as strings.
inline void apply_override(json& tree, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;
  }
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - start);
    if (part.empty()) throw ConfigError("bad override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// Stable hash of the effective configuration; names the run directory.
inline std::string config_hash(const RunConfig& c) {
  return hash_string(config_to_json(c).dump());
}

}  // namespace c2ir
