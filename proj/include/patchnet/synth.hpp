#pragma once

// Procedural scenes with exact groundtruth: a textured rectangle with an inner
// textured ellipse over a textured background. Object textures live in
// object-normalized coordinates, so scaling the object scales its texture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "patchnet/geometry.hpp"
#include "patchnet/image.hpp"

namespace patchnet {

/// Sum of plane waves sin(2*pi*(fx*u + fy*v) + phase) mixed into RGB around a base color.
struct Texture {
  struct Wave {
    double fx, fy, phase;
    std::array<double, 3> amp;
  };
  std::array<double, 3> base{};
  std::vector<Wave> waves;

  static Texture random(std::mt19937_64& rng, int n_waves, double min_freq, double max_freq, double contrast) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Texture t;
    for (auto& b : t.base) b = 0.25 + 0.5 * U(rng);
    for (int m = 0; m < n_waves; ++m) {
      const double f = min_freq + (max_freq - min_freq) * U(rng);
      const double ang = 2.0 * std::numbers::pi * U(rng);
      Wave w{f * std::cos(ang), f * std::sin(ang), 2.0 * std::numbers::pi * U(rng), {}};
      for (auto& a : w.amp) a = contrast * (2.0 * U(rng) - 1.0) / std::sqrt(static_cast<double>(n_waves));
      t.waves.push_back(w);
    }
    return t;
  }
};

struct SceneSpec {
  int frame_size = 256;
  double min_object = 36.0;
  double max_object = 60.0;
  double center_jitter = 16.0;
};

/// Appearance of one object: a textured rectangle with an inner textured ellipse.
struct ObjectLook {
  Texture outer;
  Texture inner;
  double ellipse_rx = 0.4;
  double ellipse_ry = 0.4;
};

struct Scene {
  Texture background;
  ObjectLook object;
};

inline ObjectLook random_look(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  ObjectLook o;
  // Frequencies are in cycles per object side.
  o.outer = Texture::random(rng, 5, 1.0, 4.0, 0.6);
  o.inner = Texture::random(rng, 5, 1.5, 5.0, 0.6);
  o.ellipse_rx = 0.25 + 0.2 * U(rng);
  o.ellipse_ry = 0.25 + 0.2 * U(rng);
  return o;
}

inline Texture random_background(std::mt19937_64& rng) { return Texture::random(rng, 6, 0.02, 0.08, 0.35); }

inline Scene random_scene(std::mt19937_64& rng) {
  Scene s;
  s.background = random_background(rng);
  s.object = random_look(rng);
  return s;
}

namespace detail {

// Evaluates a texture over a grid using sin(a + b) = sin a cos b + cos a sin b,
// where u = u0 + du * x and v = v0 + dv * y, so each wave costs one table per axis.
inline void accumulate_texture(const Texture& t, std::size_t w, std::size_t h, double u0, double du, double v0,
                               double dv, std::vector<std::array<double, 3>>& out) {
  out.assign(w * h, t.base);
  std::vector<double> sx(w), cx(w), sy(h), cy(h);
  for (const auto& wave : t.waves) {
    for (std::size_t x = 0; x < w; ++x) {
      const double a = 2.0 * std::numbers::pi * wave.fx * (u0 + du * static_cast<double>(x));
      sx[x] = std::sin(a);
      cx[x] = std::cos(a);
    }
    for (std::size_t y = 0; y < h; ++y) {
      const double b = 2.0 * std::numbers::pi * wave.fy * (v0 + dv * static_cast<double>(y)) + wave.phase;
      sy[y] = std::sin(b);
      cy[y] = std::cos(b);
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = sx[x] * cy[y] + cx[x] * sy[y];
        auto& px = out[y * w + x];
        for (int c = 0; c < 3; ++c) px[c] += wave.amp[c] * v;
      }
    }
  }
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace detail

struct PlacedObject {
  const ObjectLook* look;
  BBox box;
};

/// Renders objects over a background, later objects on top; gain/bias jitter the whole frame.
inline Image render_objects(const Texture& background, const std::vector<PlacedObject>& objects, int frame_size,
                            double gain = 1.0, double bias = 0.0) {
  const auto n = static_cast<std::size_t>(frame_size);
  std::vector<std::array<double, 3>> canvas, outer, inner;
  detail::accumulate_texture(background, n, n, 0.5, 1.0, 0.5, 1.0, canvas);

  for (const auto& obj : objects) {
    const auto& box = obj.box;
    const auto& look = *obj.look;
    // Object-normalized coordinates of pixel centers: u = (x + 0.5 - x_min) / width.
    const double du = 1.0 / box.width(), dv = 1.0 / box.height();
    const double u0 = (0.5 - box.x_min) * du, v0 = (0.5 - box.y_min) * dv;
    const int x_lo = std::max(0, static_cast<int>(std::floor(box.x_min)));
    const int x_hi = std::min(frame_size, static_cast<int>(std::ceil(box.x_max)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(box.y_min)));
    const int y_hi = std::min(frame_size, static_cast<int>(std::ceil(box.y_max)));
    if (x_hi <= x_lo || y_hi <= y_lo) continue;

    const auto bw = static_cast<std::size_t>(x_hi - x_lo), bh = static_cast<std::size_t>(y_hi - y_lo);
    detail::accumulate_texture(look.outer, bw, bh, u0 + du * x_lo, du, v0 + dv * y_lo, dv, outer);
    detail::accumulate_texture(look.inner, bw, bh, u0 + du * x_lo, du, v0 + dv * y_lo, dv, inner);
    for (std::size_t y = 0; y < bh; ++y) {
      for (std::size_t x = 0; x < bw; ++x) {
        const double u = u0 + du * static_cast<double>(x_lo + static_cast<int>(x));
        const double v = v0 + dv * static_cast<double>(y_lo + static_cast<int>(y));
        if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) continue;
        const double eu = (u - 0.5) / look.ellipse_rx, ev = (v - 0.5) / look.ellipse_ry;
        const std::size_t idx = (static_cast<std::size_t>(y_lo) + y) * n + static_cast<std::size_t>(x_lo) + x;
        canvas[idx] = (eu * eu + ev * ev <= 1.0) ? inner[y * bw + x] : outer[y * bw + x];
      }
    }
  }

  Image img(frame_size, frame_size);
  for (std::size_t i = 0; i < n * n; ++i) {
    for (int c = 0; c < 3; ++c) img.rgb[i * 3 + c] = detail::to_byte(gain * canvas[i][c] + bias);
  }
  return img;
}

/// Renders `scene` with its object occupying `box`.
inline Image render_frame(const Scene& scene, const BBox& box, int frame_size, double gain = 1.0, double bias = 0.0) {
  return render_objects(scene.background, {{&scene.object, box}}, frame_size, gain, bias);
}

/// Second-frame motion relative to the first. Unset fields are sampled.
struct MotionSpec {
  double max_translation = 0.25;  // fraction of object size, per axis
  double scale_min = 0.7;
  double scale_max = 1.4;
  double brightness_jitter = 0.1;
  std::optional<double> dx;  // frame pixels
  std::optional<double> dy;
  std::optional<double> scale;

  static MotionSpec none() {
    MotionSpec m;
    m.dx = 0.0;
    m.dy = 0.0;
    m.scale = 1.0;
    m.brightness_jitter = 0.0;
    return m;
  }
};

struct SyntheticFrames {
  Image first;
  Image second;
  BBox first_box;
  BBox second_box;
};

/// Renders one object in two frames related by `motion`.
inline SyntheticFrames synth_frames(std::uint64_t seed, const MotionSpec& motion, const SceneSpec& spec = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto scene = random_scene(rng);
  const double w = spec.min_object + (spec.max_object - spec.min_object) * U(rng);
  const double h = spec.min_object + (spec.max_object - spec.min_object) * U(rng);
  const double c0 = 0.5 * spec.frame_size;
  const double cx = c0 + spec.center_jitter * (2.0 * U(rng) - 1.0);
  const double cy = c0 + spec.center_jitter * (2.0 * U(rng) - 1.0);

  const double tx = motion.max_translation * w * (2.0 * U(rng) - 1.0);
  const double ty = motion.max_translation * h * (2.0 * U(rng) - 1.0);
  const double sc = motion.scale_min + (motion.scale_max - motion.scale_min) * U(rng);
  const double gain = 1.0 + motion.brightness_jitter * (2.0 * U(rng) - 1.0);
  const double bias = 0.5 * motion.brightness_jitter * (2.0 * U(rng) - 1.0);

  const double dx = motion.dx.value_or(tx), dy = motion.dy.value_or(ty), s = motion.scale.value_or(sc);
  SyntheticFrames f;
  f.first_box = BBox::from_center(cx, cy, w, h, 1.0);
  f.second_box = BBox::from_center(cx + dx, cy + dy, s * w, s * h, 1.0);
  f.first = render_frame(scene, f.first_box, spec.frame_size);
  f.second = render_frame(scene, f.second_box, spec.frame_size, gain, bias);
  return f;
}

}  // namespace patchnet
