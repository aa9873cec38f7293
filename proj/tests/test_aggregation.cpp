#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "patchnet/aggregation.hpp"

using namespace patchnet;

namespace {

Tensor3 random_map(const CorrelationConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Tensor3 t(c.patch_count(), c.corr_size(), c.corr_size());
  for (auto& v : t.data()) v = N(rng);
  return t;
}

// Parent score = 2x2 max over the average of its four children, each read `d` cells
// further along its own axis; computed directly from the map, stage by stage.
Tensor3 average_pool_oracle(const Tensor3& map, std::size_t side, std::size_t d) {
  Tensor3 cur = map;
  for (; side > 1; side /= 2) {
    const std::size_t ps = side / 2, conv = cur.height() - 2, out = conv / 2;
    Tensor3 next(ps * ps, out, out);
    for (std::size_t R = 0; R < ps; ++R)
      for (std::size_t C = 0; C < ps; ++C)
        for (std::size_t y = 0; y < out; ++y)
          for (std::size_t x = 0; x < out; ++x) {
            double best = -1e300;
            for (std::size_t wy = 0; wy < 2; ++wy)
              for (std::size_t wx = 0; wx < 2; ++wx) {
                const std::size_t cy = 2 * y + wy, cx = 2 * x + wx;
                double s = 0.0;
                for (std::size_t i = 0; i < 2; ++i)
                  for (std::size_t j = 0; j < 2; ++j)
                    s += cur((2 * R + i) * side + 2 * C + j, cy + i * d, cx + j * d);
                best = std::max(best, 0.25 * s);
              }
            next(R * ps + C, y, x) = best;
          }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

TEST(Init, MasksZeroTheUnconnectedWeights) {
  const auto p = init_params(CorrelationConfig{}, 1);
  ASSERT_EQ(p.stages.size(), 3u);
  std::size_t side = 8;
  for (const auto& st : p.stages) {
    for (std::size_t i = 0; i < st.score_conv.size(); ++i)
      if (st.score_mask.data()[i] == 0.0) ASSERT_EQ(st.score_conv.data()[i], 0.0);
    for (std::size_t i = 0; i < st.offset_conv.size(); ++i)
      if (st.offset_mask.data()[i] == 0.0) ASSERT_EQ(st.offset_conv.data()[i], 0.0);
    // Four children per parent, each child reaching exactly one parent.
    const auto conn = connectivity_from_mask(st.score_mask);
    std::vector<int> seen(side * side, 0);
    for (const auto& row : conn) {
      EXPECT_EQ(row.size(), 4u);
      for (auto i : row) ++seen[i];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    // Offsets only connect matching boundary components.
    for (std::size_t o = 0; o < st.offset_mask.out_channels(); ++o)
      for (std::size_t i = 0; i < st.offset_mask.in_channels(); ++i)
        if (o % 4 != i % 4) {
          for (double m : st.offset_mask.kernel(o, i)) ASSERT_EQ(m, 0.0);
        }
    side /= 2;
  }
}

TEST(Init, PoolBiasStepsByOneStageCell) {
  const CorrelationConfig c;
  const auto p = init_params(c, 2);
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const auto& b = p.stages[s].pool_bias;
    const double cell = static_cast<double>(c.corr_stride << s);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_DOUBLE_EQ(b[4 + k] - b[k], k % 2 == 0 ? cell : 0.0);
      EXPECT_DOUBLE_EQ(b[8 + k] - b[k], k % 2 == 1 ? cell : 0.0);
    }
    double sum = 0.0;
    for (double v : b) sum += v;
    EXPECT_DOUBLE_EQ(sum, 0.0);
  }
}

TEST(Forward, NoiselessInitIsTapAlignedAveragePooling) {
  for (const auto& c : {CorrelationConfig{}, reduced_config()}) {
    const auto p = init_params(c, 3, 0.0);
    const auto map = random_map(c, 4);
    const auto r = forward(map, p);
    const auto want = average_pool_oracle(map, c.patches_per_side, c.patch_size / c.corr_stride);
    ASSERT_EQ(r.response.height(), c.response_size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(r.response.data()[i], want.data()[i], 1e-12);
  }
}

TEST(Forward, ZeroMapGivesZeroOutputs) {
  const CorrelationConfig c;
  const auto r = forward(Tensor3(c.patch_count(), c.corr_size(), c.corr_size()), init_params(c, 5, 0.0));
  for (double v : r.response.data()) EXPECT_EQ(v, 0.0);
  for (double v : r.offsets.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_EQ(r.peak, (CellIndex{0, 0}));
}

TEST(Forward, AlignedPatchPeaksLandInOneCell) {
  const CorrelationConfig c;
  const auto p = init_params(c, 6, 0.0);
  const std::size_t d = c.patch_size / c.corr_stride;
  for (std::size_t cell = 0; cell < 3; ++cell) {
    const std::size_t a = 8 * cell;
    Tensor3 map(c.patch_count(), c.corr_size(), c.corr_size());
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t q = 0; q < 8; ++q) map(r * 8 + q, a + r * d, a + q * d) = 1.0;
    const auto out = forward(map, p);
    EXPECT_EQ(out.peak, (CellIndex{cell, cell}));
    EXPECT_DOUBLE_EQ(out.confidence, 1.0);
  }
}

TEST(Forward, IgnoresValuesInMaskedPositions) {
  const CorrelationConfig c;
  const auto p = init_params(c, 8);
  auto dirty = p;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N(0.0, 5.0);
  for (auto& st : dirty.stages) {
    for (std::size_t i = 0; i < st.score_conv.size(); ++i)
      if (st.score_mask.data()[i] == 0.0) st.score_conv.data()[i] = N(rng);
    for (std::size_t i = 0; i < st.offset_conv.size(); ++i)
      if (st.offset_mask.data()[i] == 0.0) st.offset_conv.data()[i] = N(rng);
  }
  const auto map = random_map(c, 10);
  const auto a = forward(map, p), b = forward(map, dirty);
  EXPECT_EQ(a.response, b.response);
  EXPECT_EQ(a.offsets, b.offsets);
  enforce_masks(dirty);
  EXPECT_EQ(dirty, p);
}

TEST(Forward, ScorePathIsTranslationEquivariant) {
  const CorrelationConfig c;
  const auto p = init_params(c, 11);
  const auto map = random_map(c, 12);
  auto shifted = random_map(c, 13);
  const std::size_t n = c.corr_size();
  for (std::size_t ch = 0; ch < map.channels(); ++ch)
    for (std::size_t y = 8; y < n; ++y)
      for (std::size_t x = 8; x < n; ++x) shifted(ch, y, x) = map(ch, y - 8, x - 8);
  const auto a = forward(map, p).response, b = forward(shifted, p).response;
  for (std::size_t y = 0; y + 1 < a.height(); ++y)
    for (std::size_t x = 0; x + 1 < a.width(); ++x) EXPECT_NEAR(b(0, y + 1, x + 1), a(0, y, x), 1e-5);
}

TEST(Forward, PooledOffsetsStayInsideTheirWindowHull) {
  const CorrelationConfig c;
  const auto p = init_params(c, 14);
  ForwardTrace trace;
  const auto r = forward(random_map(c, 15), p, &trace);
  ASSERT_EQ(trace.stages.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& conv = trace.stages[s].offset_conv_out;
    const auto& pooled = s + 1 < 3 ? trace.stages[s + 1].offset_in : r.offsets;
    const auto& bias = p.stages[s].pool_bias;
    for (std::size_t ch = 0; ch < pooled.channels(); ++ch)
      for (std::size_t Y = 0; Y < pooled.height(); ++Y)
        for (std::size_t X = 0; X < pooled.width(); ++X) {
          double lo = 1e300, hi = -1e300;
          for (std::size_t q = 0; q < 4; ++q) {
            const double v = conv(ch, 2 * Y + q / 2, 2 * X + q % 2) + bias[q * 4 + ch % 4];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          EXPECT_GE(pooled(ch, Y, X), lo - 1e-9);
          EXPECT_LE(pooled(ch, Y, X), hi + 1e-9);
        }
  }
}

TEST(Forward, ConfidenceScalesWithTheMap) {
  const CorrelationConfig c;
  const auto p = init_params(c, 16);
  const auto map = random_map(c, 17);
  const auto base = forward(map, p);
  for (double k : {0.25, 3.0}) {
    Tensor3 scaled = map;
    for (auto& v : scaled.data()) v *= k;
    const auto r = forward(scaled, p);
    EXPECT_NEAR(r.confidence, k * base.confidence, 1e-9 * std::abs(k * base.confidence));
    EXPECT_EQ(r.peak, base.peak);
  }
}

TEST(Forward, ReluOnlyClipsNegativeIntermediateScores) {
  const CorrelationConfig c;
  auto p = init_params(c, 18, 0.0);
  auto map = random_map(c, 19);
  for (auto& v : map.data()) v = std::abs(v);
  const auto linear = forward(map, p);
  p.relu = true;
  EXPECT_EQ(forward(map, p).response, linear.response);
  // Averages of -1 stay -1 without the ReLU and clip to 0 with it.
  const Tensor3 negative(c.patch_count(), c.corr_size(), c.corr_size(), -1.0);
  const auto clipped = forward(negative, p);
  for (double v : clipped.response.data()) EXPECT_EQ(v, 0.0);
  p.relu = false;
  const auto plain = forward(negative, p);
  for (double v : plain.response.data()) EXPECT_NEAR(v, -1.0, 1e-12);
}

TEST(Forward, RejectsWrongShapes) {
  const CorrelationConfig c;
  const auto p = init_params(c, 7);
  EXPECT_THROW(forward(Tensor3(16, 38, 38), p), InvalidArgument);
  EXPECT_THROW(forward(Tensor3(64, 36, 36), p), InvalidArgument);
}

TEST(ComposeBox, IdentityShiftAndDilation) {
  const CorrelationConfig c;
  const BBox prior{100, 60, 164, 108, 0};
  const auto geo = search_geometry(prior, prior.center_x(), prior.center_y(), c);
  const double scale = 64.0 / 64.0;
  ASSERT_DOUBLE_EQ(geo.scale, scale);

  const auto same = compose_box(prior, {1, 1}, {0, 0, 0, 0}, c, geo);
  EXPECT_NEAR(same.x_min, prior.x_min, 1e-9);
  EXPECT_NEAR(same.y_min, prior.y_min, 1e-9);
  EXPECT_NEAR(same.x_max, prior.x_max, 1e-9);
  EXPECT_NEAR(same.y_max, prior.y_max, 1e-9);

  const auto right = compose_box(prior, {1, 2}, {0, 0, 0, 0}, c, geo);
  EXPECT_NEAR(right.x_min - prior.x_min, 32.0 / scale, 1e-9);
  EXPECT_NEAR(right.y_min, prior.y_min, 1e-9);

  const auto grown = compose_box(prior, {1, 1}, {-2, -2, 2, 2}, c, geo);
  EXPECT_NEAR(grown.width() - prior.width(), 4.0 / scale, 1e-9);
  EXPECT_NEAR(grown.height() - prior.height(), 4.0 / scale, 1e-9);
  EXPECT_NEAR(grown.center_x(), prior.center_x(), 1e-9);

  const BBox small{10, 10, 42, 26, 0};
  const auto sgeo = search_geometry(small, 26, 18, c);
  const auto moved = compose_box(small, {1, 2}, {0, 0, 0, 0}, c, sgeo);
  EXPECT_NEAR(moved.x_min - small.x_min, 32.0 / 2.0, 1e-9);

  EXPECT_THROW(compose_box(prior, {1, 1}, {0, 0, -100, 0}, c, geo), DegenerateOutput);
  EXPECT_THROW(compose_box(prior, {1, 1}, {0, 0, 0, 0}, c, search_geometry(small, 0, 0, c)), InvalidArgument);
}

TEST(NetFlops, MaskedConvCostFollowsConnectivity) {
  const CorrelationConfig c;
  const auto p = init_params(c, 8);
  const auto sizes = c.stage_input_sizes();
  std::uint64_t score = 0, offset = 0, score_dense_extra = 0, offset_dense_extra = 0;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const std::uint64_t px = (sizes[s] - 2) * (sizes[s] - 2);
    std::uint64_t links = 0, olinks = 0;
    for (const auto& row : connectivity_from_mask(p.stages[s].score_mask)) links += row.size();
    for (const auto& row : connectivity_from_mask(p.stages[s].offset_mask)) olinks += row.size();
    score += 2 * 9 * px * links;
    offset += 2 * 9 * px * olinks;
    const auto& sc = p.stages[s].score_conv;
    const auto& oc = p.stages[s].offset_conv;
    score_dense_extra += 2 * 9 * px * (sc.out_channels() * sc.in_channels() - links);
    offset_dense_extra += 2 * 9 * px * (oc.out_channels() * oc.in_channels() - olinks);
  }
  const auto masked = net_flops(c);
  const auto dense = net_flops(c, {}, true);
  EXPECT_GT(masked.score_path, score);
  EXPECT_GT(masked.offset_path, offset);
  // Pooling terms are shared; only the convolution links differ.
  EXPECT_EQ(dense.score_path - masked.score_path, score_dense_extra);
  EXPECT_EQ(dense.offset_path - masked.offset_path, offset_dense_extra);
  EXPECT_GT(dense.total(), 10 * masked.total());

  const auto no_bbox = net_flops(c, {true, false});
  EXPECT_EQ(no_bbox.offset_path, 0u);
  EXPECT_EQ(masked.total() - no_bbox.total(), masked.offset_path);
  const auto no_fourier = net_flops(c, {false, true});
  EXPECT_EQ(masked.total() - no_fourier.total(), corr_flops(c).fft);
}
