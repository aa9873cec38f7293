#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "patchnet/correlation.hpp"
#include "patchnet/image.hpp"
#include "patchnet/testing/oracles.hpp"

using namespace patchnet;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> U(0, 255);
  Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(U(rng));
  return img;
}

Tensor3 gaussian(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Tensor3 t(c, h, w);
  for (auto& v : t.data()) v = N(rng);
  return t;
}

}  // namespace

TEST(Config, DefaultGeometry) {
  const CorrelationConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.stages(), 3u);
  EXPECT_EQ(c.corr_size(), 38u);
  EXPECT_EQ(c.stage_input_sizes(), (std::vector<std::size_t>{38, 18, 8, 3}));
  EXPECT_EQ(c.effective_stride(), 32u);
  EXPECT_NO_THROW(reduced_config().validate());
  EXPECT_EQ(reduced_config().stages(), 2u);
}

TEST(Config, RejectsBrokenInvariants) {
  auto bad = [](auto mutate) {
    CorrelationConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](auto& c) { c.template_size = 60; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.patch_size = 6; c.template_size = 48; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.patches_per_side = 2; c.template_size = 16; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.search_size = 32; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.corr_stride = 0; }).validate(), InvalidArgument);
  // 128 leaves a 31-wide correlation map, which the stage chain cannot reduce.
  EXPECT_THROW(bad([](auto& c) { c.search_size = 128; }).validate(), InvalidArgument);
}

TEST(CropAndWarp, AlignedBoxIsIdentity) {
  const auto img = random_image(128, 128, 1);
  const auto t = crop_and_warp(img, {10, 20, 74, 84, 0}, 64, 1.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) ASSERT_EQ(t(c, y, x), img.at(10 + x, 20 + y, c) / 255.0);
}

TEST(CropAndWarp, UniformFrameGivesUniformCrop) {
  Image gray(50, 40, 77);
  for (const BBox& b : {BBox{5, 5, 20, 30, 0}, BBox{-30, -10, 45, 70, 0}, BBox{30.3, 1.7, 49.9, 39.1, 0}}) {
    const auto out = crop_and_warp(gray, b, 17, 2.3);
    for (double v : out.data()) EXPECT_NEAR(v, 77 / 255.0, 1e-12);
  }
}

TEST(CropAndWarp, UpsamplingMatchesBilinearOracle) {
  const auto img = random_image(64, 64, 2);
  const BBox box{16, 16, 48, 48, 0};
  const auto t = crop_and_warp(img, box, 64, 1.0);
  const auto mean = img.channel_mean();
  for (int c = 0; c < 3; ++c)
    for (int v = 0; v < 64; ++v)
      for (int u = 0; u < 64; ++u) {
        const double want = oracle::bilinear(img, 16 + (u + 0.5) * 0.5, 16 + (v + 0.5) * 0.5, c, mean[c]) / 255.0;
        ASSERT_NEAR(t(c, v, u), want, 1e-6);
      }
}

TEST(CropAndWarp, GrayscaleAveragesChannels) {
  const auto img = random_image(32, 32, 3);
  const BBox box{4, 4, 20, 28, 0};
  const auto rgb = crop_and_warp(img, box, 16, 1.5);
  const auto g = crop_and_warp(img, box, 16, 1.5, 1);
  ASSERT_EQ(g.channels(), 1u);
  for (std::size_t i = 0; i < 256; ++i)
    EXPECT_NEAR(g.data()[i], (rgb.data()[i] + rgb.data()[256 + i] + rgb.data()[512 + i]) / 3.0, 1e-12);
}

TEST(CropAndWarp, DegenerateBoxThrows) {
  const auto img = random_image(16, 16, 4);
  EXPECT_THROW(crop_and_warp(img, {3, 3, 4, 10, 0}, 8, 1.0), DegenerateInput);
  EXPECT_THROW(crop_and_warp(img, {3, 3, 10, 3.5, 0}, 8, 1.0), DegenerateInput);
}

TEST(SplitPatches, IndexBookkeeping) {
  Tensor3 t(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) t.data()[i] = static_cast<double>(i);
  const auto f = split_patches(t, 2, 2);
  ASSERT_EQ(f.out_channels(), 4u);
  EXPECT_EQ(std::vector<double>(f.kernel(0, 0).begin(), f.kernel(0, 0).end()), (std::vector<double>{0, 1, 4, 5}));
  EXPECT_EQ(std::vector<double>(f.kernel(3, 0).begin(), f.kernel(3, 0).end()), (std::vector<double>{10, 11, 14, 15}));
}

TEST(SplitPatches, ConstantTemplateAndRoundTrip) {
  const auto out = split_patches(Tensor3(2, 8, 8, 0.3), 4, 2);
  for (double v : out.data()) EXPECT_EQ(v, 0.3);
  const auto t = gaussian(3, 64, 64, 5);
  EXPECT_EQ(reassemble_patches(split_patches(t, CorrelationConfig{})), t);
  EXPECT_THROW(split_patches(Tensor3(3, 60, 64), CorrelationConfig{}), InvalidArgument);
}

TEST(Fourier, CoefficientStorageIsMirrorSymmetric) {
  FourierCoefficients c(8);
  for (std::size_t i = 0; i < c.params().size(); ++i) c.params()[i] = 0.1 * static_cast<double>(i);
  EXPECT_EQ(c.quadrant(), 5u);
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      EXPECT_EQ(c(u, v), c((8 - u) % 8, v));
      EXPECT_EQ(c(u, v), c(u, (8 - v) % 8));
    }
  EXPECT_THROW(FourierCoefficients(6), InvalidArgument);
}

TEST(Fourier, IdentityZeroAndDc) {
  const auto f = split_patches(gaussian(3, 64, 64, 6), CorrelationConfig{});
  const auto same = fourier_reweight(f, FourierCoefficients(8, 1.0));
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(same.data()[i], f.data()[i], 1e-9);
  const auto out = fourier_reweight(f, FourierCoefficients(8, 0.0));
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-15);
  FourierCoefficients dc(8, 1.0);
  dc.params()[0] = 0.0;
  const auto got = fourier_reweight(f, dc);
  const auto want = oracle::remove_dc(f);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-6);
}

TEST(Fourier, AsymmetricMapIsRejected) {
  const auto f = split_patches(gaussian(1, 16, 16, 7), 4, 4);
  std::vector<double> map(16, 1.0);
  map[1] = 0.5;  // (0,1) without its mirror (0,3)
  EXPECT_THROW(fourier_reweight(f, map), InvariantViolation);
}

TEST(Fourier, MapGradientMatchesFiniteDifferences) {
  const auto f = split_patches(gaussian(2, 16, 16, 8), 4, 4);
  const auto g = split_patches(gaussian(2, 16, 16, 9), 4, 4);
  FourierCoefficients c(4);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> N(1.0, 0.3);
  for (auto& v : c.params()) v = N(rng);
  const auto objective = [&](const FourierCoefficients& cc) {
    const auto out = fourier_reweight(f, cc);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * g.data()[i];
    return s;
  };
  const auto grad = c.fold_gradient(fourier_reweight_map_grad(f, g));
  for (std::size_t i = 0; i < c.params().size(); ++i) {
    auto p = c, m = c;
    p.params()[i] += 1e-6;
    m.params()[i] -= 1e-6;
    EXPECT_NEAR(grad[i], (objective(p) - objective(m)) / 2e-6, 1e-6);
  }
}

TEST(Fourier, RandomSymmetricCoefficientsGiveRealFilters) {
  const auto f = split_patches(gaussian(3, 64, 64, 14), CorrelationConfig{});
  std::mt19937_64 rng(15);
  std::normal_distribution<double> N(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    FourierCoefficients c(8);
    for (auto& v : c.params()) v = N(rng);
    // Throws InvariantViolation if any inverse transform leaves an imaginary residual.
    EXPECT_NO_THROW(fourier_reweight(f, c)) << "trial " << trial;
  }
}

TEST(Correlate, SelfSearchPeaksAtSourcePositions) {
  const auto templ = gaussian(3, 32, 32, 11);
  CorrelationConfig c;
  c.patches_per_side = 4;
  c.patch_size = 8;
  c.template_size = 32;
  c.search_size = 32;
  c.corr_stride = 1;
  const TemplateFilterBank bank{split_patches(templ, 4, 8), {}};
  const auto map = correlate(templ, bank, c);
  for (std::size_t p = 0; p < 16; ++p) {
    Tensor3 ch(1, map.height(), map.width(), std::vector<double>(map.plane(p).begin(), map.plane(p).end()));
    const auto peak = argmax_spatial(ch);
    EXPECT_EQ(peak.y, (p / 4) * 8) << "patch " << p;
    EXPECT_EQ(peak.x, (p % 4) * 8) << "patch " << p;
  }
}

TEST(Correlate, ZeroSearchAndShapeCheck) {
  const auto c = reduced_config();
  const TemplateFilterBank bank{split_patches(gaussian(3, 16, 16, 12), c), {}};
  const auto out = correlate(Tensor3(3, 30, 30), bank, c);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(correlate(Tensor3(3, 28, 28), bank, c), InvalidArgument);
}

TEST(Correlate, LinearInTheSearchImage) {
  const auto c = reduced_config();
  const TemplateFilterBank bank{split_patches(gaussian(3, 16, 16, 16), c), {}};
  const auto x = gaussian(3, 30, 30, 17), y = gaussian(3, 30, 30, 18);
  const double a = 1.7, b = -0.4;
  Tensor3 mix(3, 30, 30);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = a * x.data()[i] + b * y.data()[i];
  const auto cx = correlate(x, bank, c), cy = correlate(y, bank, c), cm = correlate(mix, bank, c);
  for (std::size_t i = 0; i < cm.size(); ++i) EXPECT_NEAR(cm.data()[i], a * cx.data()[i] + b * cy.data()[i], 1e-6);
}

TEST(Correlate, EmbeddedTemplateGivesSelfInnerProducts) {
  auto c = reduced_config();
  c.search_size = 32;
  const auto templ = gaussian(3, 16, 16, 13);
  Tensor3 search(3, 32, 32);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) search(ch, 8 + y, 8 + x) = templ(ch, y, x);
  const TemplateFilterBank bank{split_patches(templ, c), {}};
  const auto map = correlate(search, bank, c);
  for (std::size_t p = 0; p < 16; ++p) {
    double self = 0.0;
    for (std::size_t i = 0; i < 48; ++i) self += bank.filters.data()[p * 48 + i] * bank.filters.data()[p * 48 + i];
    EXPECT_NEAR(map(p, 4 + 2 * (p / 4), 4 + 2 * (p % 4)), self, 1e-9);
  }
}

TEST(CorrFlops, UnitCaseDefaultAndKSquaredLaw) {
  CorrelationConfig unit;
  unit.patches_per_side = 1;
  unit.patch_size = 1;
  unit.template_size = 1;
  unit.search_size = 1;
  unit.corr_stride = 1;
  unit.channels = 1;
  EXPECT_EQ(corr_flops(unit).conv, 2u);

  const CorrelationConfig c;
  EXPECT_GE(corr_flops(c).conv, 20'000'000u);
  EXPECT_LE(corr_flops(c).conv, 60'000'000u);

  auto doubled = c;
  doubled.patch_size = 16;
  doubled.template_size = 128;
  doubled.search_size = (c.corr_size() - 1) * c.corr_stride + 16;
  ASSERT_EQ(doubled.corr_size(), c.corr_size());
  EXPECT_EQ(corr_flops(doubled).conv, 4 * corr_flops(c).conv);
}

TEST(FilterBank, AppliesNormalization) {
  const auto img = random_image(96, 96, 14);
  const BBox box{20, 24, 60, 56, 1};
  const CorrelationConfig c;
  const auto bank = build_filter_bank(img, box, FourierCoefficients(8, 1.0), c);
  const auto raw = split_patches(crop_and_warp(img, box, 64, 1.0), c);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(bank.filters.data()[i], raw.data()[i] / 192.0, 1e-12);
  EXPECT_EQ(bank.source_box.x_min, box.x_min);
}
