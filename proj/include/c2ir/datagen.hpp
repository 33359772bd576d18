#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "c2ir/errors.hpp"
#include "c2ir/io.hpp"
#include "c2ir/rng.hpp"
#include "c2ir/tensor.hpp"

namespace c2ir {

// Procedural shape datasets. The in-distribution catalog and the held-out
// catalog are disjoint by construction.
enum class ShapeKind { circle, square, triangle, cross, ring, star };

inline constexpr std::array<ShapeKind, 4> kIdCatalog = {
    ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross};
inline constexpr std::array<ShapeKind, 2> kHeldOutCatalog = {ShapeKind::ring,
                                                             ShapeKind::star};

enum class OodKind { uniform_noise, held_out_shape, grating_texture };

inline std::string to_string(OodKind k) {
  switch (k) {
    case OodKind::uniform_noise: return "uniform_noise";
    case OodKind::held_out_shape: return "held_out_shape";
    case OodKind::grating_texture: return "grating_texture";
  }
  throw ConfigError("unknown ood kind");
}

inline OodKind ood_kind_from_string(const std::string& s) {
  if (s == "uniform_noise") return OodKind::uniform_noise;
  if (s == "held_out_shape") return OodKind::held_out_shape;
  if (s == "grating_texture") return OodKind::grating_texture;
  throw ConfigError("unknown ood set name: " + s);
}

struct DatasetSpec {
  int num_classes = 4;
  int image_size = 16;
  int channels = 3;
  int samples_per_class = 2500;
  std::uint64_t seed = 1;
  OodKind ood_kind = OodKind::uniform_noise;
  double noise_sigma = 0.05;
};

inline void validate_spec(const DatasetSpec& s) {
  if (s.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (s.image_size < 8) throw ConfigError("image_size must be >= 8");
  if (s.samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (s.channels < 1) throw ConfigError("channels must be >= 1");
}

struct ImageBatch {
  Tensor pixels;             // [n, channels, size, size], values in [0,1]
  std::vector<int> labels;   // empty when unlabeled

  std::size_t count() const { return pixels.dim(0); }
  bool labeled() const { return !labels.empty(); }
};

inline void validate_batch(const ImageBatch& b, int num_classes = -1) {
  if (b.pixels.shape.size() != 4) throw InputError("image batch must be 4-d");
  if (!b.pixels.empty()) {
    if (vec_min(b.pixels.v) < 0.0 || vec_max(b.pixels.v) > 1.0)
      throw InputError("pixel values outside [0,1]");
  }
  if (b.labeled()) {
    if (b.labels.size() != b.count()) throw InputError("label count != image count");
    for (int l : b.labels)
      if (l < 0 || (num_classes >= 0 && l >= num_classes))
        throw InputError("label out of range");
  }
}

// ---- renderers ----

namespace detail {

inline bool inside_shape(ShapeKind kind, double px, double py, double cx, double cy,
                         double r, double rot) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::square:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::triangle: {
      // filled isoceles triangle, apex up
      if (dy < -r || dy > r) return false;
      double half_width = r * (dy + r) / (2.0 * r);
      return std::abs(dx) <= half_width;
    }
    case ShapeKind::cross: {
      const double w = 0.35 * r;
      return (std::abs(dx) <= w && std::abs(dy) <= r) ||
             (std::abs(dy) <= w && std::abs(dx) <= r);
    }
    case ShapeKind::ring: {
      const double d2 = dx * dx + dy * dy;
      const double inner = 0.55 * r;
      return d2 <= r * r && d2 >= inner * inner;
    }
    case ShapeKind::star: {
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < 1e-12) return true;
      const double theta = std::atan2(dy, dx) - rot;
      const double rho = r * (0.45 + 0.55 * 0.5 * (std::cos(5.0 * theta) + 1.0));
      return d <= rho;
    }
  }
  return false;
}

// Grayscale shape image with randomized position/scale and foreground level.
inline void render_shape(ShapeKind kind, int size, Rng& rng, double* out) {
  const double s = static_cast<double>(size);
  const double cx = rng.uniform(0.38, 0.62) * s;
  const double cy = rng.uniform(0.38, 0.62) * s;
  const double r = rng.uniform(0.22, 0.38) * s;
  const double fg = rng.uniform(0.75, 0.95);
  const double bg = rng.uniform(0.02, 0.12);
  const double rot = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      out[y * size + x] = inside_shape(kind, px, py, cx, cy, r, rot) ? fg : bg;
    }
}

inline void render_grating(int size, Rng& rng, double* out) {
  const double freq = rng.uniform(1.5, 4.0);
  const double theta = rng.uniform(0.0, 3.14159265358979323846);
  const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double amp = rng.uniform(0.3, 0.5);
  const double kx = std::cos(theta) * 2.0 * 3.14159265358979323846 * freq / size;
  const double ky = std::sin(theta) * 2.0 * 3.14159265358979323846 * freq / size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      out[y * size + x] = 0.5 + amp * std::sin(kx * x + ky * y + phase);
}

// Replicates a grayscale plane to all channels, adds pixel noise, clamps.
inline void emit_image(const double* gray, int size, int channels, double sigma,
                       Rng& rng, Tensor& pixels, std::size_t n) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double g = gray[y * size + x];
      for (int c = 0; c < channels; ++c) {
        double v = g;
        if (sigma > 0.0) v += rng.normal(0.0, sigma);
        pixels.at4(n, static_cast<std::size_t>(c), static_cast<std::size_t>(y),
                   static_cast<std::size_t>(x)) = std::clamp(v, 0.0, 1.0);
      }
    }
}

}  // namespace detail

inline ImageBatch generate_id_dataset(const DatasetSpec& spec) {
  validate_spec(spec);
  if (spec.num_classes > static_cast<int>(kIdCatalog.size()))
    throw ConfigError("num_classes exceeds the renderer catalog size (" +
                      std::to_string(kIdCatalog.size()) + ")");
  const auto n = static_cast<std::size_t>(spec.num_classes) *
                 static_cast<std::size_t>(spec.samples_per_class);
  ImageBatch batch;
  batch.pixels = Tensor({n, static_cast<std::size_t>(spec.channels),
                         static_cast<std::size_t>(spec.image_size),
                         static_cast<std::size_t>(spec.image_size)});
  batch.labels.resize(n);
  std::vector<double> gray(static_cast<std::size_t>(spec.image_size) * spec.image_size);
  std::size_t idx = 0;
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.samples_per_class; ++i, ++idx) {
      Rng rng(derive_seed(spec.seed, {0x1Du, static_cast<std::uint64_t>(c),
                                      static_cast<std::uint64_t>(i)}));
      detail::render_shape(kIdCatalog[static_cast<std::size_t>(c)], spec.image_size,
                           rng, gray.data());
      detail::emit_image(gray.data(), spec.image_size, spec.channels, spec.noise_sigma,
                         rng, batch.pixels, idx);
      batch.labels[idx] = c;
    }
  return batch;
}

inline ImageBatch generate_ood_dataset(const DatasetSpec& spec) {
  validate_spec(spec);
  const auto n = static_cast<std::size_t>(spec.num_classes) *
                 static_cast<std::size_t>(spec.samples_per_class);
  ImageBatch batch;
  batch.pixels = Tensor({n, static_cast<std::size_t>(spec.channels),
                         static_cast<std::size_t>(spec.image_size),
                         static_cast<std::size_t>(spec.image_size)});
  std::vector<double> gray(static_cast<std::size_t>(spec.image_size) * spec.image_size);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(spec.seed, {0x0Du, static_cast<std::uint64_t>(spec.ood_kind),
                                    static_cast<std::uint64_t>(i)}));
    switch (spec.ood_kind) {
      case OodKind::uniform_noise:
        for (std::size_t j = 0; j < batch.pixels.size() / n; ++j)
          batch.pixels.v[i * (batch.pixels.size() / n) + j] = rng.uniform(0.0, 1.0);
        break;
      case OodKind::held_out_shape: {
        const auto k = kHeldOutCatalog[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(kHeldOutCatalog.size()) - 1))];
        detail::render_shape(k, spec.image_size, rng, gray.data());
        detail::emit_image(gray.data(), spec.image_size, spec.channels,
                           spec.noise_sigma, rng, batch.pixels, i);
        break;
      }
      case OodKind::grating_texture:
        detail::render_grating(spec.image_size, rng, gray.data());
        detail::emit_image(gray.data(), spec.image_size, spec.channels, 0.0, rng,
                           batch.pixels, i);
        break;
    }
  }
  return batch;
}

// Per-class stratified split into (train, test). Deterministic given seed;
// splits are disjoint and exhaustive.
inline std::pair<ImageBatch, ImageBatch> split(const ImageBatch& dataset,
                                               double train_fraction,
                                               double test_fraction,
                                               std::uint64_t seed) {
  if (!dataset.labeled()) throw InputError("split requires a labeled dataset");
  if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  if (train_fraction < 0.0 || test_fraction < 0.0)
    throw ConfigError("split fractions must be non-negative");

  int num_classes = 0;
  for (int l : dataset.labels) num_classes = std::max(num_classes, l + 1);

  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> cls;
    for (std::size_t i = 0; i < dataset.count(); ++i)
      if (dataset.labels[i] == c) cls.push_back(i);
    Rng rng(derive_seed(seed, {0x51u, static_cast<std::uint64_t>(c)}));
    std::shuffle(cls.begin(), cls.end(), rng.engine());
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(cls.size())));
    if (n_train == 0 && train_fraction > 0.0)
      throw ConfigError("class " + std::to_string(c) + " empty in train split");
    if (n_train == cls.size() && test_fraction > 0.0)
      throw ConfigError("class " + std::to_string(c) + " empty in test split");
    train_idx.insert(train_idx.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_train), cls.end());
  }

  auto take = [&](const std::vector<std::size_t>& idx) {
    ImageBatch out;
    auto shape = dataset.pixels.shape;
    shape[0] = idx.size();
    out.pixels = Tensor(shape);
    out.labels.resize(idx.size());
    const std::size_t stride = dataset.pixels.size() / dataset.count();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(dataset.pixels.v.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride),
                  stride, out.pixels.v.begin() + static_cast<std::ptrdiff_t>(i * stride));
      out.labels[i] = dataset.labels[idx[i]];
    }
    return out;
  };
  return {take(train_idx), take(test_idx)};
}

// Deterministic stratified subset of a labeled batch (first k per class in
// stored order). Used to carve the evaluation set out of the test split.
inline ImageBatch stratified_subset(const ImageBatch& batch, int per_class,
                                    int num_classes) {
  if (!batch.labeled()) throw InputError("stratified_subset requires labels");
  std::vector<std::size_t> idx;
  for (int c = 0; c < num_classes; ++c) {
    int taken = 0;
    for (std::size_t i = 0; i < batch.count() && taken < per_class; ++i)
      if (batch.labels[i] == c) {
        idx.push_back(i);
        ++taken;
      }
    if (taken < per_class)
      throw ConfigError("not enough samples of class " + std::to_string(c) +
                        " for evaluation subset");
  }
  ImageBatch out;
  auto shape = batch.pixels.shape;
  shape[0] = idx.size();
  out.pixels = Tensor(shape);
  out.labels.resize(idx.size());
  const std::size_t stride = batch.pixels.size() / batch.count();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(batch.pixels.v.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride),
                stride, out.pixels.v.begin() + static_cast<std::ptrdiff_t>(i * stride));
    out.labels[i] = batch.labels[idx[i]];
  }
  return out;
}

// ---- persistence: directory with a JSON manifest plus raw blobs ----

inline json spec_to_json(const DatasetSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"image_size", s.image_size},
              {"channels", s.channels},
              {"samples_per_class", s.samples_per_class},
              {"seed", s.seed},
              {"ood_kind", to_string(s.ood_kind)},
              {"noise_sigma", s.noise_sigma}};
}

inline void save_dataset(const fs::path& dir, const ImageBatch& batch,
                         const DatasetSpec& spec) {
  ensure_dir(dir);
  json manifest{{"version", 1},
                {"kind", "dataset"},
                {"dtype", "f64le"},
                {"shape", batch.pixels.shape},
                {"labeled", batch.labeled()},
                {"spec", spec_to_json(spec)}};
  write_json(dir / "manifest.json", manifest);
  write_doubles(dir / "images.bin", batch.pixels.v);
  if (batch.labeled()) write_i32(dir / "labels.bin", batch.labels);
}

inline ImageBatch load_dataset(const fs::path& dir) {
  json m = read_json(dir / "manifest.json");
  if (m.value("kind", "") != "dataset") throw ConfigError("not a dataset: " + dir.string());
  std::vector<std::size_t> shape = m.at("shape").get<std::vector<std::size_t>>();
  ImageBatch batch;
  batch.pixels = Tensor(shape);
  batch.pixels.v = read_doubles(dir / "images.bin", Tensor::numel(shape));
  if (m.value("labeled", false))
    batch.labels = read_i32(dir / "labels.bin", shape.at(0));
  return batch;
}

}  // namespace c2ir
