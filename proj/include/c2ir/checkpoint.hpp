#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "c2ir/io.hpp"
#include "c2ir/net.hpp"

namespace c2ir {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct Checkpoint {
  Network net;
  CheckpointMeta meta;
};

inline json arch_to_json(const ArchConfig& a) {
  return json{{"block_channels", a.block_channels},
              {"num_classes", a.num_classes},
              {"in_channels", a.in_channels},
              {"image_size", a.image_size}};
}

inline ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.block_channels = j.at("block_channels").get<std::vector<int>>();
  a.num_classes = j.at("num_classes").get<int>();
  a.in_channels = j.at("in_channels").get<int>();
  a.image_size = j.at("image_size").get<int>();
  return a;
}

namespace detail {

// Named views over every tensor in the model, in a fixed order. The
// fingerprint and the serialized layout both follow this order.
inline std::vector<std::pair<std::string, const Vec*>> tensor_views(const Network& net) {
  std::vector<std::pair<std::string, const Vec*>> out;
  for (int l = 0; l < net.num_blocks(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    const std::string p = "block" + std::to_string(l) + ".";
    out.emplace_back(p + "conv.weight", &net.convs[i].weight.v);
    out.emplace_back(p + "bn.gamma", &net.bns[i].gamma);
    out.emplace_back(p + "bn.beta", &net.bns[i].beta);
    out.emplace_back(p + "bn.running_mean", &net.bns[i].running_mean);
    out.emplace_back(p + "bn.running_var", &net.bns[i].running_var);
  }
  out.emplace_back("head.weight", &net.head.weight.v);
  out.emplace_back("head.bias", &net.head.bias);
  return out;
}

inline std::vector<std::pair<std::string, Vec*>> tensor_views_mut(Network& net) {
  std::vector<std::pair<std::string, Vec*>> out;
  for (auto& [name, v] : tensor_views(net)) out.emplace_back(name, const_cast<Vec*>(v));
  return out;
}

}  // namespace detail

// Identifies (architecture, weights, BN statistics); metadata excluded.
inline std::string model_fingerprint(const Network& net) {
  Fnv1a h;
  h.update(arch_to_json(net.arch).dump());
  for (auto& [name, v] : detail::tensor_views(net)) {
    h.update(name);
    h.update(*v);
  }
  return h.hex();
}

inline void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  ensure_dir(dir);
  json tensors = json::array();
  for (auto& [name, v] : detail::tensor_views(ckpt.net)) {
    const std::string file = name + ".bin";
    tensors.push_back(json{{"name", name}, {"count", v->size()}, {"file", file}});
    write_doubles(dir / file, *v);
  }
  json manifest{{"version", 1},
                {"kind", "checkpoint"},
                {"arch", arch_to_json(ckpt.net.arch)},
                {"metadata",
                 {{"seed", ckpt.meta.seed},
                  {"epochs", ckpt.meta.epochs},
                  {"train_accuracy", ckpt.meta.train_accuracy},
                  {"test_accuracy", ckpt.meta.test_accuracy}}},
                {"bn", {{"momentum", ckpt.net.bns.at(0).momentum}, {"eps", ckpt.net.bns.at(0).eps}}},
                {"fingerprint", model_fingerprint(ckpt.net)},
                {"tensors", tensors}};
  write_json(dir / "manifest.json", manifest);
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  json m = read_json(dir / "manifest.json");
  if (m.value("kind", "") != "checkpoint")
    throw MissingArtifactError("not a checkpoint: " + dir.string());
  Checkpoint ckpt;
  ckpt.net = Network::build(arch_from_json(m.at("arch")), /*seed=*/0);
  for (auto& bn : ckpt.net.bns) {
    bn.momentum = m.at("bn").at("momentum").get<double>();
    bn.eps = m.at("bn").at("eps").get<double>();
  }
  const auto& meta = m.at("metadata");
  ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.meta.epochs = meta.at("epochs").get<int>();
  ckpt.meta.train_accuracy = meta.at("train_accuracy").get<double>();
  ckpt.meta.test_accuracy = meta.at("test_accuracy").get<double>();

  auto views = detail::tensor_views_mut(ckpt.net);
  for (const auto& t : m.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto count = t.at("count").get<std::size_t>();
    bool found = false;
    for (auto& [vname, v] : views)
      if (vname == name) {
        if (v->size() != count)
          throw MissingArtifactError("tensor size mismatch for " + name);
        *v = read_doubles(dir / t.at("file").get<std::string>(), count);
        found = true;
        break;
      }
    if (!found) throw MissingArtifactError("unknown tensor in checkpoint: " + name);
  }
  for (const auto& bn : ckpt.net.bns) {
    if (!all_finite(bn.running_mean) || !all_finite(bn.running_var))
      throw NumericError("checkpoint BN statistics are not finite");
    for (double v : bn.running_var)
      if (v < 0.0) throw NumericError("checkpoint BN variance is negative");
  }
  const std::string recorded = m.value("fingerprint", "");
  if (!recorded.empty() && recorded != model_fingerprint(ckpt.net))
    throw MissingArtifactError("checkpoint fingerprint mismatch (corrupt load?)");
  return ckpt;
}

}  // namespace c2ir
