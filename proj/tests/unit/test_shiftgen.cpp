#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "sfda/io.hpp"
#include "sfda/shiftgen.hpp"
#include "test_support.hpp"

using namespace sfda;
using sfda::testing::band_dataset;

namespace fs = std::filesystem;

TEST(Sample, DegenerateGaussianIsExact) {
  const auto p = sample_shift_params(ShiftSpec::single(Axis::kBrightness, 0.5, 0.0, 3), 5);
  ASSERT_EQ(p.size(), 1u);
  for (double v : p[0]) EXPECT_EQ(v, 0.5);
}

TEST(Sample, MeanWithinCltBound) {
  const auto p = sample_shift_params(ShiftSpec::single(Axis::kBrightness, 0.5, 0.05, 11), 10000);
  const double mean = std::accumulate(p[0].begin(), p[0].end(), 0.0) / 10000.0;
  EXPECT_NEAR(mean, 0.5, 0.01);
}

TEST(Sample, TruncatedToForwardDomain) {
  const auto p = sample_shift_params(ShiftSpec::single(Axis::kBrightness, 0.05, 0.05, 2), 1000);
  for (double v : p[0]) EXPECT_GE(v, 0.0);
  const auto r = sample_shift_params(ShiftSpec::single(Axis::kRotation, 170.0, 30.0, 2), 1000);
  for (double v : r[0]) {
    EXPECT_GE(v, -180.0);
    EXPECT_LE(v, 180.0);
  }
}

TEST(Sample, NegativeSigmaThrows) {
  EXPECT_THROW(sample_shift_params(ShiftSpec::single(Axis::kContrast, 1.0, -0.1), 3), ParameterDomainError);
}

TEST(Sample, ItemDrawsIndependentOfCount) {
  const ShiftSpec spec{{{Axis::kContrast, 0.5, 0.1}, {Axis::kRotation, 10.0, 5.0}}, 42};
  const auto small = sample_shift_params(spec, 10);
  const auto large = sample_shift_params(spec, 100);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(small[s][i], large[s][i]);
}

TEST(Spec, ValidateWarnsWhenThreeSigmaLeavesDomain) {
  EXPECT_TRUE(ShiftSpec::single(Axis::kBrightness, 0.5, 0.05).validate().empty());
  EXPECT_EQ(ShiftSpec::single(Axis::kBrightness, 0.05, 0.05).validate().size(), 1u);
  EXPECT_THROW(ShiftSpec::single(Axis::kBrightness, -0.5, 0.05).validate(), ParameterDomainError);
}

TEST(Spec, LabelAndJsonRoundTrip) {
  const ShiftSpec spec{{{Axis::kContrast, 0.5, 0.05}, {Axis::kBrightness, 1.5, 0.1}}, 9};
  EXPECT_EQ(spec.label(), "contrast(0.5,0.05)+brightness(1.5,0.1)");
  EXPECT_EQ(ShiftSpec::from_json(spec.to_json()), spec);
  EXPECT_TRUE(ShiftSpec::single(Axis::kRotation, 0.0, 0.0).is_identity());
  EXPECT_FALSE(ShiftSpec::single(Axis::kRotation, 0.0, 1.0).is_identity());
}

TEST(Apply, IdentityShiftLeavesDataUnchanged) {
  const LabeledDataset d = band_dataset(20, 1);
  const LabeledDataset s = apply_shift(d, ShiftSpec::single(Axis::kBrightness, 1.0, 0.0));
  EXPECT_EQ(s.images, d.images);
  EXPECT_EQ(s.labels, d.labels);
}

TEST(Apply, PreservesLabelsAndCount) {
  const LabeledDataset d = band_dataset(30, 2);
  const LabeledDataset s = apply_shift(d, ShiftSpec::single(Axis::kRotation, 30.0, 2.0, 7));
  EXPECT_EQ(s.size(), d.size());
  EXPECT_EQ(s.labels, d.labels);
}

TEST(Apply, SeededDeterminism) {
  const LabeledDataset d = band_dataset(30, 2);
  const ShiftSpec spec = ShiftSpec::single(Axis::kRotation, 30.0, 2.0, 7);
  EXPECT_EQ(apply_shift(d, spec).images, apply_shift(d, spec).images);
}

TEST(Apply, MatchesPerItemTransformOracle) {
  const LabeledDataset d = band_dataset(12, 4);
  const ShiftSpec spec{{{Axis::kContrast, 0.6, 0.1}, {Axis::kBrightness, 1.3, 0.1}}, 5};
  const auto params = sample_shift_params(spec, d.size());
  const LabeledDataset s = apply_shift(d, spec);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Image expect = apply_brightness(apply_contrast(d.images[i], params[0][i]), params[1][i]);
    EXPECT_EQ(s.images[i], expect);
  }
}

TEST(Apply, ValuesStayInUnitRange) {
  const LabeledDataset d = band_dataset(20, 5);
  for (const auto& spec : {ShiftSpec::single(Axis::kBrightness, 3.0, 0.5, 1), ShiftSpec::single(Axis::kContrast, 3.0, 0.5, 1),
                           ShiftSpec::single(Axis::kRotation, 45.0, 20.0, 1)}) {
    for (const auto& img : apply_shift(d, spec).images)
      for (float v : img.data) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
  }
}

TEST(Storage, WriteReadRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "sfda_shift_roundtrip";
  fs::remove_all(dir);
  const LabeledDataset d = band_dataset(15, 6);
  const ShiftSpec spec = ShiftSpec::single(Axis::kContrast, 0.5, 0.05, 3);
  const ShiftManifest m = write_shifted_dataset(d, spec, dir);
  EXPECT_EQ(m.count, 15u);
  const ShiftedDataset back = read_shifted_dataset(dir);
  const LabeledDataset expect = apply_shift(d, spec);
  EXPECT_EQ(back.dataset.labels, expect.labels);
  ASSERT_EQ(back.dataset.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(back.dataset.images[i], expect.images[i]);
  EXPECT_EQ(back.manifest.spec, spec);
  EXPECT_EQ(back.params, sample_shift_params(spec, 15));
  fs::remove_all(dir);
}

TEST(Storage, DifferentSeedsDifferentPayloadsSameLabels) {
  const fs::path a = fs::temp_directory_path() / "sfda_shift_seed_a";
  const fs::path b = fs::temp_directory_path() / "sfda_shift_seed_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const LabeledDataset d = band_dataset(10, 7);
  write_shifted_dataset(d, ShiftSpec::single(Axis::kBrightness, 0.5, 0.1, 1), a);
  write_shifted_dataset(d, ShiftSpec::single(Axis::kBrightness, 0.5, 0.1, 2), b);
  const auto digest = [](const fs::path& f) {
    const std::string bytes = io::read_text(f);
    return sha256_hex({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
  };
  EXPECT_NE(digest(a / "images" / "000000.pfm"), digest(b / "images" / "000000.pfm"));
  EXPECT_EQ(io::read_text(a / "labels.txt"), io::read_text(b / "labels.txt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Storage, MissingDirectoryThrowsWithPath) {
  try {
    read_shifted_dataset("/nonexistent/sfda/shift");
    FAIL() << "expected an exception";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/sfda/shift"), std::string::npos) << e.what();
  }
}
