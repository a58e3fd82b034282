#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/tensor.hpp"

namespace dprobe {

// ---------------------------------------------------------------------------
// Transform specifications. Every family has a neutral member that maps any
// image to itself; all of them clamp their output to [0, 1].
// ---------------------------------------------------------------------------

// out = in * gain + bias
struct BrightnessContrast {
  double gain = 1.0;
  double bias = 0.0;
};

// Row-major 2x3 matrix mapping source pixel coordinates (x = column, y = row) to
// destination coordinates. Sampling is inverse-mapped bilinear with zero fill.
struct Affine {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  static Affine translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }

  // Scaling by `scale` combined with rotation by `angle` (radians) about (cx, cy).
  static Affine rotation_scale(double angle, double scale, double cx, double cy) {
    const double a = scale * std::cos(angle), b = scale * std::sin(angle);
    return {{a, b, (1 - a) * cx - b * cy, -b, a, b * cx + (1 - a) * cy}};
  }

  // this after other: (this o other)(p) = this(other(p)).
  Affine after(const Affine& o) const {
    const auto& a = m;
    const auto& b = o.m;
    return {{a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
             a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]}};
  }

  double determinant() const { return m[0] * m[4] - m[1] * m[3]; }
};

struct GaussianBlur {
  double sigma = 1.0;
  int kernel_size = 3;
};

// Adds `patch` (h, w, C) onto the window at column x, row y.
struct OcclusionRect {
  std::size_t x = 0, y = 0, w = 1, h = 1;
  Tensor patch;
};

enum class DotColor { black, white };

// Sets each listed (row, column) pixel to the dot colour in every channel.
struct OcclusionDots {
  std::size_t count = 0;
  DotColor color = DotColor::black;
  std::vector<std::pair<std::size_t, std::size_t>> positions;
};

// Overlay content already resampled to the target image: `image` is (H, W, C) and
// `weight` is (H, W, 1), the per-pixel blend weight taken from the mask's alpha.
struct OverlayMask {
  std::string id;
  Tensor image;
  Tensor weight;

  // Builds a mask for (H, W, C) images from an RGBA (or RGB / gray) source.
  static OverlayMask from_source(std::string id, const Tensor& src, std::size_t H, std::size_t W, std::size_t C);
};

// out = in + alpha * weight * (overlay - in), restricted to `region` (H*W flags).
struct Overlay {
  std::shared_ptr<const OverlayMask> mask;
  double alpha = 0.0;
  std::vector<bool> region;
};

using TransformSpec = std::variant<BrightnessContrast, Affine, GaussianBlur, OcclusionRect, OcclusionDots, Overlay>;

inline std::string describe(const TransformSpec& spec) {
  struct V {
    std::string operator()(const BrightnessContrast& s) const {
      return "brightness_contrast(gain=" + std::to_string(s.gain) + ", bias=" + std::to_string(s.bias) + ")";
    }
    std::string operator()(const Affine& s) const {
      std::string r = "affine(";
      for (std::size_t i = 0; i < 6; ++i) r += (i ? "," : "") + std::to_string(s.m[i]);
      return r + ")";
    }
    std::string operator()(const GaussianBlur& s) const { return "blur(sigma=" + std::to_string(s.sigma) + ")"; }
    std::string operator()(const OcclusionRect& s) const {
      return "occl_rect(x=" + std::to_string(s.x) + ", y=" + std::to_string(s.y) + ", w=" + std::to_string(s.w) +
             ", h=" + std::to_string(s.h) + ")";
    }
    std::string operator()(const OcclusionDots& s) const {
      return "occl_dots(" + std::to_string(s.positions.size()) + (s.color == DotColor::white ? " white)" : " black)");
    }
    std::string operator()(const Overlay& s) const {
      return "overlay(" + (s.mask ? s.mask->id : std::string("?")) + ", alpha=" + std::to_string(s.alpha) + ")";
    }
  };
  return std::visit(V{}, spec);
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

// 3x3 kernel proportional to exp(-(dx^2 + dy^2) / (2 sigma^2)), normalised to sum 1.
inline Tensor gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("gaussian_kernel: sigma must be positive");
  Tensor k({3, 3});
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      total += (k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] =
                    std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
  for (double& v : k.data()) v /= total;
  return k;
}

// Same-size 3x3 filter per channel, edges replicated.
inline Tensor blur_apply(const Tensor& image, const Tensor& kernel) {
  if (image.rank() != 3) throw ShapeError("blur_apply expects an (H, W, C) image");
  if (kernel.shape() != Shape{3, 3}) throw ShapeError("blur_apply expects a 3x3 kernel");
  const auto H = static_cast<long>(image.dim(0)), W = static_cast<long>(image.dim(1));
  const std::size_t C = image.dim(2);
  Tensor out(image.shape());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const auto sy = static_cast<std::size_t>(std::clamp(y + dy, 0L, H - 1));
            const auto sx = static_cast<std::size_t>(std::clamp(x + dx, 0L, W - 1));
            acc += kernel[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] * image.at(sy, sx, c);
          }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = acc;
      }
  return out;
}

namespace detail {

// Bilinear sample of channel c at (sx, sy); samples outside the image read as zero.
inline double bilinear_zero(const Tensor& img, double sx, double sy, std::size_t c) {
  const auto H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
  const double fx = std::floor(sx), fy = std::floor(sy);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = sx - fx, ay = sy - fy;
  auto px = [&](long y, long x) -> double {
    if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
    return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c);
  };
  double v = 0.0;
  if ((1 - ax) * (1 - ay) != 0.0) v += (1 - ax) * (1 - ay) * px(y0, x0);
  if (ax * (1 - ay) != 0.0) v += ax * (1 - ay) * px(y0, x0 + 1);
  if ((1 - ax) * ay != 0.0) v += (1 - ax) * ay * px(y0 + 1, x0);
  if (ax * ay != 0.0) v += ax * ay * px(y0 + 1, x0 + 1);
  return v;
}

inline double bilinear_clamped(const Tensor& img, double sx, double sy, std::size_t c) {
  const double H = static_cast<double>(img.dim(0)), W = static_cast<double>(img.dim(1));
  sx = std::clamp(sx, 0.0, W - 1.0);
  sy = std::clamp(sy, 0.0, H - 1.0);
  const std::size_t x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, img.dim(1) - 1), y1 = std::min(y0 + 1, img.dim(0) - 1);
  const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
  return (1 - ax) * (1 - ay) * img.at(y0, x0, c) + ax * (1 - ay) * img.at(y0, x1, c) +
         (1 - ax) * ay * img.at(y1, x0, c) + ax * ay * img.at(y1, x1, c);
}

inline void require_image(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("transforms expect an (H, W, C) image, got " + shape_str(image.shape()));
}

inline void validate(const TransformSpec& spec, const Tensor& image) {
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  struct V {
    std::size_t H, W, C;
    void operator()(const BrightnessContrast& s) const {
      if (!(s.gain > 0.0) || !std::isfinite(s.gain) || !std::isfinite(s.bias))
        throw UsageError("brightness/contrast needs finite gain > 0 and finite bias");
    }
    void operator()(const Affine& s) const {
      for (double v : s.m)
        if (!std::isfinite(v)) throw UsageError("affine matrix must be finite");
      if (std::abs(s.determinant()) < 1e-12) throw UsageError("affine matrix is singular");
    }
    void operator()(const GaussianBlur& s) const {
      if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) throw UsageError("blur sigma must be positive");
      if (s.kernel_size != 3) throw UsageError("only 3x3 blur kernels are supported");
    }
    void operator()(const OcclusionRect& s) const {
      if (s.w == 0 || s.h == 0 || s.x + s.w > W || s.y + s.h > H) throw UsageError("occlusion rectangle out of bounds");
      if (s.patch.shape() != Shape{s.h, s.w, C}) throw UsageError("occlusion patch shape mismatch");
      if (!s.patch.all_finite()) throw UsageError("occlusion patch must be finite");
    }
    void operator()(const OcclusionDots& s) const {
      if (s.positions.size() > s.count) throw UsageError("more dot positions than the dot count");
      for (auto [y, x] : s.positions)
        if (y >= H || x >= W) throw UsageError("dot position out of bounds");
    }
    void operator()(const Overlay& s) const {
      if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw UsageError("overlay alpha must be in [0, 1]");
      if (!s.mask) throw UsageError("overlay without a mask");
      if (s.mask->image.shape() != Shape{H, W, C} || s.mask->weight.shape() != Shape{H, W, 1})
        throw UsageError("overlay mask '" + s.mask->id + "' does not match the image size");
      if (s.region.size() != H * W) throw UsageError("overlay region size mismatch");
    }
  };
  std::visit(V{H, W, C}, spec);
}

}  // namespace detail

inline OverlayMask OverlayMask::from_source(std::string id, const Tensor& src, std::size_t H, std::size_t W,
                                            std::size_t C) {
  if (src.rank() != 3 || src.dim(2) < 1 || src.dim(2) > 4) throw ShapeError("overlay source must be (h, w, 1..4)");
  if (C != 1 && C != 3) throw ShapeError("overlay targets must have 1 or 3 channels");
  const std::size_t sc = src.dim(2);
  const bool has_alpha = sc == 2 || sc == 4;
  const std::size_t colour_channels = has_alpha ? sc - 1 : sc;
  OverlayMask m{std::move(id), Tensor({H, W, C}), Tensor({H, W, 1})};
  const double scale_x = static_cast<double>(src.dim(1)) / static_cast<double>(W);
  const double scale_y = static_cast<double>(src.dim(0)) / static_cast<double>(H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
      const double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
      std::array<double, 3> rgb{};
      for (std::size_t c = 0; c < 3; ++c)
        rgb[c] = detail::bilinear_clamped(src, sx, sy, std::min(c, colour_channels - 1));
      if (C == 1) {
        m.image.at(y, x, 0) = colour_channels == 1 ? rgb[0] : 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      } else {
        for (std::size_t c = 0; c < 3; ++c) m.image.at(y, x, c) = rgb[c];
      }
      m.weight.at(y, x, 0) = has_alpha ? detail::bilinear_clamped(src, sx, sy, sc - 1) : 1.0;
    }
  return m;
}

inline Tensor apply_transform(const Tensor& image, const TransformSpec& spec) {
  detail::require_image(image);
  detail::validate(spec, image);
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  struct V {
    const Tensor& img;
    std::size_t H, W, C;
    Tensor operator()(const BrightnessContrast& s) const {
      Tensor out = img;
      for (double& v : out.data()) v = v * s.gain + s.bias;
      return out;
    }
    Tensor operator()(const Affine& s) const {
      // inverse of [A | t]
      const double det = s.determinant();
      const double i00 = s.m[4] / det, i01 = -s.m[1] / det, i10 = -s.m[3] / det, i11 = s.m[0] / det;
      Tensor out(img.shape());
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = static_cast<double>(x) - s.m[2], dy = static_cast<double>(y) - s.m[5];
          const double sx = i00 * dx + i01 * dy, sy = i10 * dx + i11 * dy;
          for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) = detail::bilinear_zero(img, sx, sy, c);
        }
      return out;
    }
    Tensor operator()(const GaussianBlur& s) const { return blur_apply(img, gaussian_kernel(s.sigma)); }
    Tensor operator()(const OcclusionRect& s) const {
      Tensor out = img;
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
          for (std::size_t c = 0; c < C; ++c) out.at(s.y + y, s.x + x, c) += s.patch.at(y, x, c);
      return out;
    }
    Tensor operator()(const OcclusionDots& s) const {
      Tensor out = img;
      const double v = s.color == DotColor::white ? 1.0 : 0.0;
      for (auto [y, x] : s.positions)
        for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) = v;
      return out;
    }
    Tensor operator()(const Overlay& s) const {
      Tensor out = img;
      if (s.alpha == 0.0) return out;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (!s.region[y * W + x]) continue;
          const double a = s.alpha * s.mask->weight.at(y, x, 0);
          for (std::size_t c = 0; c < C; ++c) out.at(y, x, c) += a * (s.mask->image.at(y, x, c) - img.at(y, x, c));
        }
      return out;
    }
  };
  return clamp01(std::visit(V{image, H, W, C}, spec));
}

// ---------------------------------------------------------------------------
// Gradient projection: turns a raw input gradient into the parameters of one
// transformation family.
// ---------------------------------------------------------------------------

enum class Family { light, contrast, affine, blur, occl_rect, occl_dots, overlay };

inline constexpr double kMinSigma = 1e-3;

struct Constraint {
  Family family = Family::occl_rect;
  std::size_t rect_h = 0;  // 0 means a quarter of the image side
  std::size_t rect_w = 0;
  std::size_t dots = 3;
  DotColor dot_color = DotColor::white;
  std::shared_ptr<const OverlayMask> mask;  // overlay only
  std::string mask_name;                    // overlay only, as given on the command line

  std::string name() const {
    switch (family) {
      case Family::light: return "light";
      case Family::contrast: return "contrast";
      case Family::affine: return "affine";
      case Family::blur: return "blur";
      case Family::occl_rect: return "occl_rect";
      case Family::occl_dots: return "occl_dots";
      case Family::overlay: return "overlay:" + mask_name;
    }
    return "?";
  }
};

// Accepts light, contrast, affine, blur, occl_rect, occl_dots and overlay:<mask>.
// The overlay mask itself is attached by the caller.
inline Constraint parse_constraint(const std::string& s) {
  Constraint c;
  if (s == "light") c.family = Family::light;
  else if (s == "contrast") c.family = Family::contrast;
  else if (s == "affine") c.family = Family::affine;
  else if (s == "blur") c.family = Family::blur;
  else if (s == "occl_rect") c.family = Family::occl_rect;
  else if (s == "occl_dots") c.family = Family::occl_dots;
  else if (s.rfind("overlay:", 0) == 0 && s.size() > 8) {
    c.family = Family::overlay;
    c.mask_name = s.substr(8);
  } else {
    throw UsageError("unknown constraint '" + s + "'");
  }
  return c;
}

namespace detail {

// Central differences with replicated edges.
inline std::pair<Tensor, Tensor> spatial_gradients(const Tensor& img) {
  const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor gx(img.shape()), gy(img.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t xl = x ? x - 1 : 0, xr = std::min(x + 1, W - 1);
        const std::size_t yu = y ? y - 1 : 0, yd = std::min(y + 1, H - 1);
        gx.at(y, x, c) = (img.at(y, xr, c) - img.at(y, xl, c)) / static_cast<double>(std::max<std::size_t>(xr - xl, 1));
        gy.at(y, x, c) = (img.at(yd, x, c) - img.at(yu, x, c)) / static_cast<double>(std::max<std::size_t>(yd - yu, 1));
      }
  return {gx, gy};
}

inline Affine project_affine(const Tensor& grad, const Tensor& img, double step) {
  const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  const auto [ix, iy] = spatial_gradients(img);
  const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
  // Moments of grad against d(out)/d(param) at the identity:
  //   translation: -I_x, -I_y; rotation: -I_x (y - cy) + I_y (x - cx); scale: -(I_x (x - cx) + I_y (y - cy)).
  double mtx = 0, mty = 0, mrot = 0, mscale = 0, energy = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = grad.at(y, x, c), gx = ix.at(y, x, c), gy = iy.at(y, x, c);
        const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy;
        mtx -= g * gx;
        mty -= g * gy;
        mrot += g * (-gx * v + gy * u);
        mscale -= g * (gx * u + gy * v);
        energy += gx * gx + gy * gy;
      }
  const double n = static_cast<double>(grad.size());
  const double image_scale = std::sqrt(energy / n);
  if (!(image_scale > 0.0)) return {};
  const double span = static_cast<double>(std::max(H, W));
  const double radius = span / 2;
  // Each parameter is sized so its largest pixel displacement is at most step * span.
  const double k = step * span / (n * image_scale);
  const double tx = k * mtx, ty = k * mty;
  const double angle = k * mrot / (radius * radius);
  const double scale = 1.0 + k * mscale / (radius * radius);
  if (tx == 0 && ty == 0 && angle == 0 && scale == 1.0) return {};
  return Affine::translation(tx, ty).after(Affine::rotation_scale(angle, std::max(scale, 0.1), cx, cy));
}

inline OcclusionRect project_rect(const Tensor& grad, double step, std::size_t rh, std::size_t rw) {
  const std::size_t H = grad.dim(0), W = grad.dim(1), C = grad.dim(2);
  rh = std::clamp<std::size_t>(rh ? rh : std::max<std::size_t>(1, H / 4), 1, H);
  rw = std::clamp<std::size_t>(rw ? rw : std::max<std::size_t>(1, W / 4), 1, W);
  // Summed-area table of |grad| over channels.
  std::vector<double> sat((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double a = 0.0;
      for (std::size_t c = 0; c < C; ++c) a += std::abs(grad.at(y, x, c));
      sat[(y + 1) * (W + 1) + x + 1] = a + sat[y * (W + 1) + x + 1] + sat[(y + 1) * (W + 1) + x] - sat[y * (W + 1) + x];
    }
  std::size_t by = 0, bx = 0;
  double best = -1.0;
  for (std::size_t y = 0; y + rh <= H; ++y)
    for (std::size_t x = 0; x + rw <= W; ++x) {
      const double s = sat[(y + rh) * (W + 1) + x + rw] - sat[y * (W + 1) + x + rw] - sat[(y + rh) * (W + 1) + x] +
                       sat[y * (W + 1) + x];
      if (s > best + 1e-12 * std::abs(best)) {
        best = s;
        by = y;
        bx = x;
      }
    }
  OcclusionRect r{bx, by, rw, rh, Tensor({rh, rw, C})};
  for (std::size_t y = 0; y < rh; ++y)
    for (std::size_t x = 0; x < rw; ++x)
      for (std::size_t c = 0; c < C; ++c) r.patch.at(y, x, c) = step * grad.at(by + y, bx + x, c);
  return r;
}

// Picks the `count` pixels with the largest |grad| among those where painting the dot
// colour moves the objective upwards to first order.
inline OcclusionDots project_dots(const Tensor& grad, const Tensor& img, std::size_t count, DotColor color) {
  const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  const double v = color == DotColor::white ? 1.0 : 0.0;
  struct Cand {
    double magnitude;
    std::size_t index;
  };
  std::vector<Cand> cands;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double gain = 0.0, mag = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        gain += grad.at(y, x, c) * (v - img.at(y, x, c));
        mag += std::abs(grad.at(y, x, c));
      }
      if (gain > 0.0) cands.push_back({mag, y * W + x});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.magnitude > b.magnitude; });
  OcclusionDots d{count, color, {}};
  for (std::size_t i = 0; i < std::min(count, cands.size()); ++i)
    d.positions.emplace_back(cands[i].index / W, cands[i].index % W);
  return d;
}

inline Overlay project_overlay(const Tensor& grad, const Tensor& img, double step,
                               const std::shared_ptr<const OverlayMask>& mask) {
  if (!mask) throw UsageError("overlay constraint has no mask loaded");
  const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  if (mask->image.shape() != img.shape()) throw UsageError("overlay mask does not match the image size");
  double m = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) m += grad[i] * (mask->image[i] - img[i]);
  m /= static_cast<double>(img.size());
  Overlay o{mask, std::clamp(step * m, 0.0, 1.0), std::vector<bool>(H * W, false)};
  std::vector<double> mag(H * W, 0.0);
  for (std::size_t p = 0; p < H * W; ++p)
    for (std::size_t c = 0; c < C; ++c) mag[p] += std::abs(grad[p * C + c]);
  std::vector<double> sorted = mag;
  const std::size_t mid = sorted.size() / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  double median = sorted[mid];
  if (sorted.size() % 2 == 0) {
    const double lower = *std::max_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  for (std::size_t p = 0; p < H * W; ++p) o.region[p] = mag[p] > median;
  return o;
}

}  // namespace detail

// Projects a raw input gradient onto the parameters of one transformation family.
// A zero gradient always yields that family's neutral spec.
inline TransformSpec constrain_gradient(const Tensor& grad, const Tensor& image, const Constraint& constraint,
                                        double step) {
  detail::require_image(image);
  if (grad.shape() != image.shape()) throw ShapeError("gradient shape does not match image shape");
  if (!(step > 0.0) || !std::isfinite(step)) throw UsageError("step must be positive");
  switch (constraint.family) {
    case Family::light: return BrightnessContrast{1.0, step * grad.mean()};
    case Family::contrast: {
      double m = 0.0;
      for (std::size_t i = 0; i < grad.size(); ++i) m += grad[i] * image[i];
      m /= static_cast<double>(grad.size());
      return BrightnessContrast{std::max(1.0 + step * m, 0.05), 0.0};
    }
    case Family::affine: return detail::project_affine(grad, image, step);
    case Family::blur: {
      double m = 0.0;
      for (double g : grad.data()) m += std::abs(g);
      return GaussianBlur{std::max(step * m / static_cast<double>(grad.size()), kMinSigma), 3};
    }
    case Family::occl_rect: return detail::project_rect(grad, step, constraint.rect_h, constraint.rect_w);
    case Family::occl_dots: return detail::project_dots(grad, image, constraint.dots, constraint.dot_color);
    case Family::overlay: return detail::project_overlay(grad, image, step, constraint.mask);
  }
  throw UsageError("unknown constraint family");
}

}  // namespace dprobe
