#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fpq/error.hpp"
#include "fpq/manifest.hpp"
#include "fpq/tensorstore.hpp"

using namespace fpq;
namespace fs = std::filesystem;

namespace {

QuantManifest sample_manifest() {
  QuantManifest m;
  m.records.push_back({"conv1.w", TensorKind::kWeight, QuantMode::kFp, {2, 1, 2.0 + std::log2(3.0)}, 0, "conv1.w.mask"});
  m.records.push_back({"conv1.in", TensorKind::kActivation, QuantMode::kFp, {4, 3, -0.1234567890123}, 0, {}});
  m.records.push_back({"norm.g", TensorKind::kWeight, QuantMode::kPassthrough, {}, 0, {}});
  m.records.push_back({"head.w", TensorKind::kWeight, QuantMode::kInt, {}, 8, {}});
  m.mask_container = "masks.fpqt";
  return m;
}

}  // namespace

TEST(Manifest, JsonRoundTripIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> bias(-30.0, 30.0);
  auto m = sample_manifest();
  for (int i = 0; i < 200; ++i) {
    m.records.push_back({"t" + std::to_string(i), TensorKind::kActivation, QuantMode::kFp,
                         {3, 4, bias(rng)}, 0, {}});
  }
  const auto text = manifest_to_json(m);
  const auto back = manifest_from_json(text);
  EXPECT_EQ(back, m);
  EXPECT_EQ(manifest_to_json(back), text);
}

TEST(Manifest, FileRoundTrip) {
  const auto dir = fs::temp_directory_path() / "fpq_test_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto m = sample_manifest();
  save_manifest(dir / "m.json", m);
  EXPECT_EQ(load_manifest(dir / "m.json"), m);
}

TEST(Manifest, FindAndUpsert) {
  auto m = sample_manifest();
  ASSERT_NE(m.find("conv1.in"), nullptr);
  EXPECT_EQ(m.find("missing"), nullptr);
  QuantRecord r = *m.find("conv1.in");
  r.format.bias = 3.0;
  m.upsert(r);
  EXPECT_EQ(m.records.size(), 4u);
  EXPECT_EQ(m.find("conv1.in")->format.bias, 3.0);
  m.upsert({"new", TensorKind::kWeight, QuantMode::kPassthrough, {}, 0, {}});
  EXPECT_EQ(m.records.back().name, "new");
}

TEST(Manifest, RejectsMalformed) {
  EXPECT_THROW(manifest_from_json("{"), Error);
  EXPECT_THROW(manifest_from_json(R"({"format":"other","version":1,"records":[]})"), Error);
  EXPECT_THROW(manifest_from_json(R"({"format":"fpq-manifest","version":2,"records":[]})"), Error);
  EXPECT_THROW(manifest_from_json(
                   R"({"format":"fpq-manifest","version":1,"records":[{"name":"a","kind":"weight","mode":"fp","e_bits":0,"m_bits":1,"bias":1}]})"),
               Error);
  EXPECT_THROW(manifest_from_json(
                   R"({"format":"fpq-manifest","version":1,"records":[{"name":"a","kind":"activation","mode":"fp","e_bits":2,"m_bits":1,"bias":1,"rounding_mask_ref":"m"}]})"),
               Error);
  const std::string rec = R"({"name":"a","kind":"weight","mode":"passthrough"})";
  EXPECT_THROW(manifest_from_json(R"({"format":"fpq-manifest","version":1,"records":[)" + rec +
                                  "," + rec + "]}"),
               Error);
  try {
    manifest_from_json("[]");
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(Manifest, MaskValidation) {
  auto m = sample_manifest();
  TensorMap weights{{"conv1.w", Tensor("conv1.w", {2, 2}, {0.1f, 0.2f, 0.3f, 0.4f})}};
  TensorMap masks{{"conv1.w.mask", Tensor("conv1.w.mask", {2, 2}, {0, 1, 1, 0})}};
  EXPECT_NO_THROW(validate_masks(m, weights, masks));
  masks["conv1.w.mask"].data[0] = 0.5f;
  EXPECT_THROW(validate_masks(m, weights, masks), Error);
  masks["conv1.w.mask"] = Tensor("conv1.w.mask", {4}, {0, 1, 1, 0});
  EXPECT_THROW(validate_masks(m, weights, masks), Error);
  EXPECT_THROW(validate_masks(m, weights, {}), Error);
}

TEST(Manifest, LoadsMaskContainerBesideManifest) {
  const auto dir = fs::temp_directory_path() / "fpq_test_manifest_masks";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto m = sample_manifest();
  save_manifest(dir / "m.json", m);
  write_container(dir / "masks.fpqt", {Tensor("conv1.w.mask", {2}, {0, 1})});
  const auto masks = load_manifest_masks(dir / "m.json", m);
  ASSERT_EQ(masks.count("conv1.w.mask"), 1u);
  QuantManifest none;
  EXPECT_TRUE(load_manifest_masks(dir / "m.json", none).empty());
}
