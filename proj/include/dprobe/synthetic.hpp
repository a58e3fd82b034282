#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/network.hpp"
#include "dprobe/rng.hpp"

// Procedurally generated stand-in datasets, reproducible from a seed:
//   digits: 28x28x1 handwritten-style numerals, 10 classes
//   signs:  32x32x3 traffic-sign glyphs with colour and lighting jitter, 10 classes
namespace dprobe::synthetic {

struct Point {
  double x, y;
};

namespace detail {

using Stroke = std::vector<Point>;

inline Stroke ellipse(double cx, double cy, double rx, double ry, double a0 = 0.0, double a1 = 6.283185307179586,
                      int n = 18) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

// Glyph skeletons in a unit box, x right and y down.
inline std::vector<Stroke> digit_strokes(std::size_t d) {
  constexpr double pi = 3.141592653589793;
  switch (d) {
    case 0: return {ellipse(0.5, 0.5, 0.28, 0.42)};
    case 1: return {{{0.36, 0.25}, {0.52, 0.08}, {0.52, 0.92}}};
    case 2: return {{{0.24, 0.3}, {0.33, 0.13}, {0.53, 0.08}, {0.72, 0.2}, {0.71, 0.42}, {0.26, 0.9}, {0.8, 0.9}}};
    case 3:
      return {{{0.24, 0.14}, {0.72, 0.12}, {0.45, 0.44}, {0.68, 0.56}, {0.72, 0.78}, {0.5, 0.93}, {0.24, 0.84}}};
    case 4: return {{{0.62, 0.92}, {0.62, 0.08}, {0.2, 0.64}, {0.82, 0.64}}};
    case 5:
      return {{{0.74, 0.1}, {0.33, 0.1}, {0.29, 0.46}, {0.56, 0.42}, {0.73, 0.6}, {0.69, 0.83}, {0.46, 0.93},
               {0.25, 0.84}}};
    case 6: {
      Stroke s{{0.68, 0.08}, {0.42, 0.3}, {0.3, 0.58}};
      Stroke loop = ellipse(0.5, 0.7, 0.21, 0.21, pi, 3 * pi);
      s.insert(s.end(), loop.begin(), loop.end());
      return {s};
    }
    case 7: return {{{0.2, 0.1}, {0.8, 0.1}, {0.42, 0.92}}, {{0.36, 0.5}, {0.68, 0.5}}};
    case 8: return {ellipse(0.5, 0.29, 0.19, 0.2), ellipse(0.5, 0.71, 0.23, 0.22)};
    case 9: {
      Stroke s = ellipse(0.48, 0.32, 0.21, 0.22, 0.0, 2 * pi);
      s.push_back({0.66, 0.62});
      s.push_back({0.6, 0.92});
      return {s};
    }
  }
  throw UsageError("digit out of range");
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

inline Tensor render_digit(std::size_t digit, Rng& rng) {
  constexpr std::size_t H = 28, W = 28;
  constexpr double pi = 3.141592653589793;
  auto strokes = detail::digit_strokes(digit);
  const double angle = rng.uniform(-18.0, 18.0) * pi / 180.0;
  const double shear = rng.uniform(-0.35, 0.35);
  const double sx = rng.uniform(14.0, 21.0), sy = rng.uniform(17.0, 22.0);
  const double cx = 14.0 + rng.uniform(-2.5, 2.5), cy = 14.0 + rng.uniform(-2.0, 2.0);
  const double thickness = rng.uniform(0.9, 2.3);
  const double jitter = 0.055;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (auto& s : strokes)
    for (Point& p : s) {
      double u = (p.x - 0.5 + jitter * rng.normal()) * sx;
      double v = (p.y - 0.5 + jitter * rng.normal()) * sy;
      u += shear * v;
      p = {cx + ca * u - sa * v, cy + sa * u + ca * v};
    }
  Tensor img({H, W, 1});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const Point c{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& s : strokes)
        for (std::size_t k = 1; k < s.size(); ++k) d = std::min(d, detail::segment_distance(c, s[k - 1], s[k]));
      img.at(y, x, 0) = std::clamp(thickness - d + 0.5, 0.0, 1.0);
    }
  // Sensor noise and the occasional stray blot.
  for (double& v : img.data()) v = std::clamp(v + 0.04 * rng.normal(), 0.0, 1.0);
  if (rng.uniform() < 0.3) {
    const double bx = rng.uniform(3, 25), by = rng.uniform(3, 25), r = rng.uniform(1.0, 2.2);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = x + 0.5 - bx, dy = y + 0.5 - by;
        if (dx * dx + dy * dy < r * r) img.at(y, x, 0) = std::max(img.at(y, x, 0), 0.8);
      }
  }
  return img;
}

namespace detail {

struct Rgb {
  double r, g, b;
};

inline bool in_polygon(double u, double v, const std::vector<Point>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y > v) != (poly[j].y > v) &&
        u < (poly[j].x - poly[i].x) * (v - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
      inside = !inside;
  }
  return inside;
}

inline std::vector<Point> regular_polygon(int n, double r, double phase) {
  std::vector<Point> p;
  for (int i = 0; i < n; ++i) {
    const double a = phase + 6.283185307179586 * i / n;
    p.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return p;
}

// Colour of sign class `k` at local coordinate (u, v) in [-1, 1]^2, or nullopt outside the sign.
inline std::optional<Rgb> sign_colour(std::size_t k, double u, double v) {
  constexpr Rgb red{0.85, 0.1, 0.12}, white{0.95, 0.95, 0.95}, blue{0.1, 0.25, 0.8}, black{0.08, 0.08, 0.08},
      yellow{0.95, 0.8, 0.1};
  constexpr double pi = 3.141592653589793;
  const double r = std::sqrt(u * u + v * v);
  auto arrow_up = [](double a, double b) {
    return (std::abs(a) < 0.14 && b > -0.3 && b < 0.55) || (b <= -0.3 && b > -0.65 && std::abs(a) < (b + 0.65));
  };
  switch (k) {
    case 0:  // prohibitory ring
      if (r > 1) return std::nullopt;
      return r > 0.72 ? red : white;
    case 1:  // no entry
      if (r > 1) return std::nullopt;
      return (std::abs(v) < 0.2 && std::abs(u) < 0.7) ? white : red;
    case 2: {  // warning triangle with a central mark
      const auto outer = regular_polygon(3, 1.0, -pi / 2), inner = regular_polygon(3, 0.62, -pi / 2);
      if (!in_polygon(u, v, outer)) return std::nullopt;
      if (!in_polygon(u, v, inner)) return red;
      return (std::abs(u) < 0.08 && v > -0.25 && v < 0.2) ? black : white;
    }
    case 3: {  // yield
      const auto outer = regular_polygon(3, 1.0, pi / 2), inner = regular_polygon(3, 0.6, pi / 2);
      if (!in_polygon(u, v, outer)) return std::nullopt;
      return in_polygon(u, v, inner) ? white : red;
    }
    case 4: {  // stop
      const auto oct = regular_polygon(8, 1.0, pi / 8);
      if (!in_polygon(u, v, oct)) return std::nullopt;
      return (std::abs(v) < 0.14 && std::abs(u) < 0.6) ? white : red;
    }
    case 5:  // ahead only
      if (r > 1) return std::nullopt;
      return arrow_up(u, v) ? white : blue;
    case 6:  // turn right
      if (r > 1) return std::nullopt;
      return arrow_up(v, -u) ? white : blue;
    case 7:  // priority road
      if (std::abs(u) + std::abs(v) > 1) return std::nullopt;
      if (std::abs(u) + std::abs(v) > 0.8) return white;
      return std::abs(u) + std::abs(v) > 0.62 ? black : yellow;
    case 8:  // information square
      if (std::max(std::abs(u), std::abs(v)) > 0.9) return std::nullopt;
      return std::max(std::abs(u), std::abs(v)) < 0.4 ? white : blue;
    case 9:  // end of restriction
      if (r > 1) return std::nullopt;
      if (r > 0.85) return black;
      return std::abs(u + v) < 0.18 ? black : white;
  }
  throw UsageError("sign class out of range");
}

}  // namespace detail

inline Tensor render_sign(std::size_t cls, Rng& rng) {
  constexpr std::size_t S = 32;
  constexpr double pi = 3.141592653589793;
  const double size = rng.uniform(9.0, 14.0);
  const double cx = 16.0 + rng.uniform(-3.0, 3.0), cy = 16.0 + rng.uniform(-3.0, 3.0);
  const double angle = rng.uniform(-12.0, 12.0) * pi / 180.0;
  const double squash = rng.uniform(0.8, 1.15);
  const double light = rng.uniform(0.35, 1.15);
  const std::array<double, 3> tint{rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)};
  const std::array<double, 3> bg0{rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8)};
  const std::array<double, 3> bg1{rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8)};
  const double bg_dir = rng.uniform(0.0, 2 * pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  Tensor img({S, S, 3});
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = x + 0.25 + 0.5 * sx, py = y + 0.25 + 0.5 * sy;
          const double dx = (px - cx) / size, dy = (py - cy) / (size * squash);
          const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
          const auto c = detail::sign_colour(cls, u, v);
          std::array<double, 3> rgb;
          if (c) {
            rgb = {c->r * tint[0], c->g * tint[1], c->b * tint[2]};
          } else {
            const double t = 0.5 + 0.5 * ((px / S - 0.5) * std::cos(bg_dir) + (py / S - 0.5) * std::sin(bg_dir));
            for (int ch = 0; ch < 3; ++ch) rgb[ch] = bg0[ch] * (1 - t) + bg1[ch] * t;
          }
          for (int ch = 0; ch < 3; ++ch) acc[ch] += 0.25 * rgb[ch];
        }
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = std::clamp(acc[ch] * light + 0.05 * rng.normal(), 0.0, 1.0);
    }
  return img;
}

enum class Kind { digits, signs };

inline Kind parse_kind(const std::string& s) {
  if (s == "digits") return Kind::digits;
  if (s == "signs") return Kind::signs;
  throw UsageError("unknown synthetic dataset '" + s + "' (expected digits or signs)");
}

inline const char* to_string(Kind k) { return k == Kind::digits ? "digits" : "signs"; }

// Balanced classes in a seeded random order.
inline std::vector<Sample> generate(Kind kind, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % 10;
  Rng order(derive_seed(seed, 0));
  order.shuffle(labels);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i + 1));
    Tensor img = kind == Kind::digits ? render_digit(labels[i], rng) : render_sign(labels[i], rng);
    for (double& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;  // 8-bit levels
    out.push_back({std::move(img), labels[i]});
  }
  return out;
}

}  // namespace dprobe::synthetic
