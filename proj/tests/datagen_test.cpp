#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "c2ir/datagen.hpp"
#include "test_util.hpp"

using namespace c2ir;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_classes = 4;
  s.image_size = 16;
  s.channels = 3;
  s.samples_per_class = 100;
  s.seed = 42;
  return s;
}

}  // namespace

TEST(Datagen, DeterministicByteIdentical) {
  const auto a = generate_id_dataset(small_spec());
  const auto b = generate_id_dataset(small_spec());
  EXPECT_EQ(a.pixels.v, b.pixels.v);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Datagen, CountAndClassBalance) {
  const auto batch = generate_id_dataset(small_spec());
  EXPECT_EQ(batch.count(), 400u);
  std::map<int, int> counts;
  for (int l : batch.labels) counts[l]++;
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [label, n] : counts) EXPECT_EQ(n, 100) << "class " << label;
}

TEST(Datagen, DifferentSeedsDiffer) {
  auto s1 = small_spec();
  auto s2 = small_spec();
  s2.seed = 43;
  EXPECT_NE(generate_id_dataset(s1).pixels.v, generate_id_dataset(s2).pixels.v);
}

TEST(Datagen, PixelRange) {
  for (auto kind : {OodKind::uniform_noise, OodKind::held_out_shape,
                    OodKind::grating_texture}) {
    auto s = small_spec();
    s.ood_kind = kind;
    const auto batch = generate_ood_dataset(s);
    EXPECT_GE(vec_min(batch.pixels.v), 0.0);
    EXPECT_LE(vec_max(batch.pixels.v), 1.0);
  }
  const auto id = generate_id_dataset(small_spec());
  EXPECT_GE(vec_min(id.pixels.v), 0.0);
  EXPECT_LE(vec_max(id.pixels.v), 1.0);
}

TEST(Datagen, CatalogOverflowIsConfigError) {
  auto s = small_spec();
  s.num_classes = 5;
  EXPECT_THROW(generate_id_dataset(s), ConfigError);
}

TEST(Datagen, UniformNoiseMeanNearHalf) {
  auto s = small_spec();
  s.ood_kind = OodKind::uniform_noise;
  s.samples_per_class = 3;  // 12 images > 10
  const auto batch = generate_ood_dataset(s);
  double mean = 0.0;
  for (double v : batch.pixels.v) mean += v;
  mean /= static_cast<double>(batch.pixels.size());
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
}

TEST(Datagen, HeldOutCatalogDisjointFromId) {
  for (auto k : kHeldOutCatalog)
    EXPECT_EQ(std::find(kIdCatalog.begin(), kIdCatalog.end(), k), kIdCatalog.end());
}

TEST(Datagen, GratingDeterministic) {
  auto s = small_spec();
  s.ood_kind = OodKind::grating_texture;
  EXPECT_EQ(generate_ood_dataset(s).pixels.v, generate_ood_dataset(s).pixels.v);
}

TEST(Split, DegenerateAllTrain) {
  const auto batch = generate_id_dataset(small_spec());
  auto [train, test] = split(batch, 1.0, 0.0, 9);
  EXPECT_EQ(train.count(), 400u);
  EXPECT_EQ(test.count(), 0u);
}

TEST(Split, StratifiedCounts) {
  const auto batch = generate_id_dataset(small_spec());
  auto [train, test] = split(batch, 0.8, 0.2, 9);
  EXPECT_EQ(train.count(), 320u);
  EXPECT_EQ(test.count(), 80u);
  std::map<int, int> tr, te;
  for (int l : train.labels) tr[l]++;
  for (int l : test.labels) te[l]++;
  for (int c = 0; c < 4; ++c) {
    EXPECT_EQ(tr[c], 80);
    EXPECT_EQ(te[c], 20);
  }
}

TEST(Split, UnionIsOriginalMultiset) {
  const auto batch = generate_id_dataset(small_spec());
  auto [train, test] = split(batch, 0.8, 0.2, 9);
  // images are unique with overwhelming probability, so compare sorted pixels
  auto key = [](const ImageBatch& b, std::size_t i) {
    const std::size_t stride = b.pixels.size() / b.count();
    return Vec(b.pixels.v.begin() + static_cast<std::ptrdiff_t>(i * stride),
               b.pixels.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  };
  std::multiset<Vec> original, recombined;
  for (std::size_t i = 0; i < batch.count(); ++i) original.insert(key(batch, i));
  for (std::size_t i = 0; i < train.count(); ++i) recombined.insert(key(train, i));
  for (std::size_t i = 0; i < test.count(); ++i) recombined.insert(key(test, i));
  EXPECT_EQ(original, recombined);
}

TEST(Split, EmptyClassIsConfigError) {
  auto s = small_spec();
  s.samples_per_class = 1;
  const auto batch = generate_id_dataset(s);
  EXPECT_THROW(split(batch, 0.5, 0.5, 1), ConfigError);
}

TEST(Split, FractionsMustSumToOne) {
  const auto batch = generate_id_dataset(small_spec());
  EXPECT_THROW(split(batch, 0.8, 0.3, 1), ConfigError);
}

TEST(Datagen, SaveLoadRoundTrip) {
  const auto dir = testutil::fresh_dir("dataset");
  const auto spec = small_spec();
  const auto batch = generate_id_dataset(spec);
  save_dataset(dir, batch, spec);
  const auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded.pixels.v, batch.pixels.v);
  EXPECT_EQ(loaded.labels, batch.labels);
}

TEST(Datagen, ValidationRejectsBadSpecs) {
  auto s = small_spec();
  s.num_classes = 1;
  EXPECT_THROW(generate_id_dataset(s), ConfigError);
  s = small_spec();
  s.image_size = 4;
  EXPECT_THROW(generate_id_dataset(s), ConfigError);
  s = small_spec();
  s.samples_per_class = 0;
  EXPECT_THROW(generate_id_dataset(s), ConfigError);
}
