#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/rng.hpp"
#include "dprobe/tensor.hpp"

namespace dprobe {

// Numeric tags double as the on-disk kind tag of the weights file.
enum class LayerKind : std::uint32_t { dense = 0, conv2d = 1, maxpool2d = 2, relu = 3, softmax = 4, flatten = 5 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

// conv2d is stride 1 with valid padding; maxpool2d is a 2x2 window with stride 2.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;   // dense input width / conv input channels
  std::size_t out = 0;  // dense output width / conv output channels
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 0}; }
  static LayerSpec conv2d(std::size_t kh, std::size_t kw, std::size_t in, std::size_t out) {
    return {LayerKind::conv2d, in, out, kh, kw};
  }
  static LayerSpec maxpool2d() { return {LayerKind::maxpool2d}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  Shape weight_shape() const {
    if (kind == LayerKind::dense) return {out, in};
    if (kind == LayerKind::conv2d) return {out, kernel_h, kernel_w, in};
    return {};
  }
  Shape bias_shape() const { return has_params() ? Shape{out} : Shape{}; }

  Shape output_shape(const Shape& in_shape, std::size_t index) const {
    auto fail = [&](const std::string& why) -> ShapeError {
      return ShapeError("layer " + std::to_string(index) + " (" + to_string(kind) + ") on input " +
                        shape_str(in_shape) + ": " + why);
    };
    switch (kind) {
      case LayerKind::dense:
        if (in_shape.size() != 1 || in_shape[0] != in) throw fail("expected vector of width " + std::to_string(in));
        if (out == 0) throw fail("zero output width");
        return {out};
      case LayerKind::conv2d:
        if (in_shape.size() != 3 || in_shape[2] != in)
          throw fail("expected (H,W," + std::to_string(in) + ") input");
        if (kernel_h == 0 || kernel_w == 0 || out == 0) throw fail("degenerate kernel");
        if (in_shape[0] < kernel_h || in_shape[1] < kernel_w) throw fail("input smaller than kernel");
        return {in_shape[0] - kernel_h + 1, in_shape[1] - kernel_w + 1, out};
      case LayerKind::maxpool2d:
        if (in_shape.size() != 3) throw fail("expected (H,W,C) input");
        if (in_shape[0] < 2 || in_shape[1] < 2) throw fail("input smaller than pooling window");
        return {in_shape[0] / 2, in_shape[1] / 2, in_shape[2]};
      case LayerKind::relu:
        return in_shape;
      case LayerKind::softmax:
        if (in_shape.size() != 1) throw fail("expected vector input");
        return in_shape;
      case LayerKind::flatten:
        return {shape_size(in_shape)};
    }
    throw fail("unknown layer kind");
  }
};

struct ModelSpec {
  Shape input_shape;  // (H, W, C)
  std::vector<LayerSpec> layers;

  // Output shape of every layer in order; throws ShapeError on any mismatch.
  std::vector<Shape> output_shapes() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    if (layers.back().kind != LayerKind::softmax) throw ShapeError("model must end in softmax");
    std::vector<Shape> shapes;
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      cur = layers[i].output_shape(cur, i);
      shapes.push_back(cur);
    }
    return shapes;
  }

  std::size_t classes() const { return output_shapes().back()[0]; }
};

struct LayerParams {
  Tensor weight;
  Tensor bias;
};

using Parameters = std::vector<LayerParams>;

inline Parameters zeros_like(const ModelSpec& spec) {
  Parameters p(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.has_params()) continue;
    p[i].weight = Tensor(l.weight_shape());
    p[i].bias = Tensor(l.bias_shape());
  }
  return p;
}

// A model specification together with learned parameters.
class Model {
 public:
  Model() = default;

  Model(ModelSpec spec, Parameters params, std::string name = {})
      : spec_(std::move(spec)), params_(std::move(params)), name_(std::move(name)) {
    shapes_ = spec_.output_shapes();
    if (params_.size() != spec_.layers.size()) throw ShapeError("parameter list length does not match layer count");
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      if (l.has_params()) {
        if (params_[i].weight.shape() != l.weight_shape() || params_[i].bias.shape() != l.bias_shape())
          throw ShapeError("layer " + std::to_string(i) + " parameters have wrong shape");
      } else if (!params_[i].weight.empty() || !params_[i].bias.empty()) {
        throw ShapeError("layer " + std::to_string(i) + " takes no parameters");
      }
    }
  }

  // Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases zero.
  static Model initialized(ModelSpec spec, std::uint64_t seed, std::string name = {}) {
    spec.output_shapes();
    Parameters p = zeros_like(spec);
    Rng rng(seed);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto& l = spec.layers[i];
      if (!l.has_params()) continue;
      const double receptive = static_cast<double>(l.kind == LayerKind::conv2d ? l.kernel_h * l.kernel_w : 1);
      const double s = std::sqrt(6.0 / (receptive * static_cast<double>(l.in + l.out)));
      for (double& w : p[i].weight.data()) w = rng.uniform(-s, s);
    }
    return Model(std::move(spec), std::move(p), std::move(name));
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const Parameters& params() const noexcept { return params_; }
  Parameters& params() noexcept { return params_; }
  const std::vector<Shape>& output_shapes() const noexcept { return shapes_; }
  const Shape& input_shape() const noexcept { return spec_.input_shape; }
  std::size_t classes() const { return shapes_.back()[0]; }
  const std::string& name() const noexcept { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  friend bool operator==(const Model& a, const Model& b) {
    if (a.spec_.input_shape != b.spec_.input_shape || a.spec_.layers.size() != b.spec_.layers.size()) return false;
    for (std::size_t i = 0; i < a.spec_.layers.size(); ++i) {
      const auto& x = a.spec_.layers[i];
      const auto& y = b.spec_.layers[i];
      if (x.kind != y.kind || x.in != y.in || x.out != y.out || x.kernel_h != y.kernel_h || x.kernel_w != y.kernel_w)
        return false;
      if (!(a.params_[i].weight == b.params_[i].weight) || !(a.params_[i].bias == b.params_[i].bias)) return false;
    }
    return true;
  }

 private:
  ModelSpec spec_;
  Parameters params_;
  std::vector<Shape> shapes_;
  std::string name_;
};

// activations[i] is the output of layer i; the last entry is the class probabilities.
struct ForwardPass {
  Tensor input;
  std::vector<Tensor> activations;

  const Tensor& probabilities() const { return activations.back(); }
  const Tensor& layer_input(std::size_t i) const { return i == 0 ? input : activations[i - 1]; }
};

namespace detail {

inline void dense_forward(const LayerParams& p, const Tensor& x, Tensor& y) {
  const std::size_t out = p.weight.dim(0), in = p.weight.dim(1);
  const double* w = p.weight.data().data();
  const double* xv = x.data().data();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = p.bias[o];
    const double* row = w + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * xv[i];
    y[o] = acc;
  }
}

inline void conv_forward(const LayerSpec& l, const LayerParams& p, const Tensor& x, Tensor& y) {
  const std::size_t W = x.dim(1), C = x.dim(2);
  const std::size_t OH = y.dim(0), OW = y.dim(1), O = l.out;
  const std::size_t row_len = l.kernel_w * C;
  const double* xv = x.data().data();
  const double* wv = p.weight.data().data();
  double* yv = y.data().data();
  for (std::size_t oh = 0; oh < OH; ++oh)
    for (std::size_t ow = 0; ow < OW; ++ow)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = p.bias[o];
        for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
          const double* xr = xv + ((oh + kh) * W + ow) * C;
          const double* wr = wv + (o * l.kernel_h + kh) * row_len;
          for (std::size_t k = 0; k < row_len; ++k) acc += wr[k] * xr[k];
        }
        yv[(oh * OW + ow) * O + o] = acc;
      }
}

// Flat input index of the max within the 2x2 window feeding output (oh, ow, c).
// Ties resolve to the first position in row-major order.
inline std::size_t pool_argmax(const Tensor& x, std::size_t oh, std::size_t ow, std::size_t c) {
  const std::size_t W = x.dim(1), C = x.dim(2);
  std::size_t best = ((2 * oh) * W + 2 * ow) * C + c;
  for (std::size_t dh = 0; dh < 2; ++dh)
    for (std::size_t dw = 0; dw < 2; ++dw) {
      const std::size_t idx = ((2 * oh + dh) * W + 2 * ow + dw) * C + c;
      if (x[idx] > x[best]) best = idx;
    }
  return best;
}

inline void check_finite(const Tensor& t, std::size_t layer, const char* stage) {
  if (!t.all_finite()) throw NumericalError(layer, std::string("non-finite value in ") + stage);
}

}  // namespace detail

inline ForwardPass forward(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape())
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match model input " +
                     shape_str(model.input_shape()));
  ForwardPass pass;
  pass.input = x;
  pass.activations.reserve(model.spec().layers.size());
  for (std::size_t li = 0; li < model.spec().layers.size(); ++li) {
    const LayerSpec& l = model.spec().layers[li];
    const Tensor& in = pass.layer_input(li);
    Tensor y(model.output_shapes()[li]);
    switch (l.kind) {
      case LayerKind::dense: detail::dense_forward(model.params()[li], in, y); break;
      case LayerKind::conv2d: detail::conv_forward(l, model.params()[li], in, y); break;
      case LayerKind::maxpool2d:
        for (std::size_t oh = 0; oh < y.dim(0); ++oh)
          for (std::size_t ow = 0; ow < y.dim(1); ++ow)
            for (std::size_t c = 0; c < y.dim(2); ++c) y.at(oh, ow, c) = in[detail::pool_argmax(in, oh, ow, c)];
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = in[i] > 0.0 ? in[i] : 0.0;
        break;
      case LayerKind::softmax: {
        const double m = in.max();
        double z = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) z += (y[i] = std::exp(in[i] - m));
        for (double& v : y.data()) v /= z;
        break;
      }
      case LayerKind::flatten:
        y = in.reshaped(y.shape());
        break;
    }
    detail::check_finite(y, li, "forward");
    pass.activations.push_back(std::move(y));
  }
  return pass;
}

// Gradient seeds: seeds[i], when non-empty, is dObjective/d(activations[i]).
using ActivationSeeds = std::vector<Tensor>;

struct BackwardResult {
  Tensor input;       // dObjective/dx
  Parameters params;  // empty unless requested
};

namespace detail {

// Backpropagates from layer `top` (grad = dObjective/d(activations[top])) down to the input,
// adding further seeds as their layers are reached. Parameter gradients are accumulated into
// `param_acc` when non-null.
inline Tensor backprop(const Model& model, const ForwardPass& pass, std::size_t top, Tensor grad,
                       const ActivationSeeds* seeds, Parameters* param_acc) {
  const auto& layers = model.spec().layers;
  for (std::size_t li = top + 1; li-- > 0;) {
    if (seeds && li != top && li < seeds->size() && !(*seeds)[li].empty()) grad += (*seeds)[li];
    const LayerSpec& l = layers[li];
    const Tensor& x = pass.layer_input(li);
    const Tensor& y = pass.activations[li];
    Tensor gx(x.shape());
    switch (l.kind) {
      case LayerKind::dense: {
        const auto& p = model.params()[li];
        const std::size_t out = l.out, in = l.in;
        for (std::size_t o = 0; o < out; ++o) {
          const double g = grad[o];
          if (g == 0.0) continue;
          const double* row = p.weight.data().data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * g;
        }
        if (param_acc) {
          auto& acc = (*param_acc)[li];
          for (std::size_t o = 0; o < out; ++o) {
            const double g = grad[o];
            acc.bias[o] += g;
            if (g == 0.0) continue;
            double* row = acc.weight.data().data() + o * in;
            for (std::size_t i = 0; i < in; ++i) row[i] += x[i] * g;
          }
        }
        break;
      }
      case LayerKind::conv2d: {
        const auto& p = model.params()[li];
        const std::size_t W = x.dim(1), C = x.dim(2);
        const std::size_t OH = y.dim(0), OW = y.dim(1), O = l.out;
        const std::size_t row_len = l.kernel_w * C;
        const double* wv = p.weight.data().data();
        const double* xv = x.data().data();
        double* gxv = gx.data().data();
        double* gw = param_acc ? (*param_acc)[li].weight.data().data() : nullptr;
        double* gb = param_acc ? (*param_acc)[li].bias.data().data() : nullptr;
        for (std::size_t oh = 0; oh < OH; ++oh)
          for (std::size_t ow = 0; ow < OW; ++ow)
            for (std::size_t o = 0; o < O; ++o) {
              const double g = grad[(oh * OW + ow) * O + o];
              if (gb) gb[o] += g;
              if (g == 0.0) continue;
              for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
                const std::size_t xoff = ((oh + kh) * W + ow) * C;
                const std::size_t woff = (o * l.kernel_h + kh) * row_len;
                for (std::size_t k = 0; k < row_len; ++k) gxv[xoff + k] += wv[woff + k] * g;
                if (gw)
                  for (std::size_t k = 0; k < row_len; ++k) gw[woff + k] += xv[xoff + k] * g;
              }
            }
        break;
      }
      case LayerKind::maxpool2d:
        for (std::size_t oh = 0; oh < y.dim(0); ++oh)
          for (std::size_t ow = 0; ow < y.dim(1); ++ow)
            for (std::size_t c = 0; c < y.dim(2); ++c)
              gx[pool_argmax(x, oh, ow, c)] += grad[(oh * y.dim(1) + ow) * y.dim(2) + c];
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? grad[i] : 0.0;
        break;
      case LayerKind::softmax: {
        double dot = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += grad[i] * y[i];
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = y[i] * (grad[i] - dot);
        break;
      }
      case LayerKind::flatten:
        gx = grad.reshaped(x.shape());
        break;
    }
    check_finite(gx, li, "backward");
    grad = std::move(gx);
  }
  return grad;
}

}  // namespace detail

inline BackwardResult backward(const Model& model, const ForwardPass& pass, const ActivationSeeds& seeds,
                               bool want_params = false) {
  const std::size_t n = model.spec().layers.size();
  if (seeds.size() != n) throw UsageError("backward: need one seed slot per layer");
  const std::size_t top = n - 1;
  Tensor g = seeds[top].empty() ? Tensor(pass.activations[top].shape()) : seeds[top];
  BackwardResult r;
  if (want_params) r.params = zeros_like(model.spec());
  r.input = detail::backprop(model, pass, top, std::move(g), &seeds, want_params ? &r.params : nullptr);
  return r;
}

// An objective reads a forward pass, writes its partial derivatives into the seed
// slots it depends on, and returns its value.
using Objective = std::function<double(const ForwardPass&, ActivationSeeds&)>;

struct InputGradient {
  double value = 0.0;
  Tensor gradient;
};

inline InputGradient input_gradient(const Model& model, const Tensor& x, const Objective& objective) {
  ForwardPass pass = forward(model, x);
  ActivationSeeds seeds(model.spec().layers.size());
  InputGradient r;
  r.value = objective(pass, seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (!seeds[i].empty() && seeds[i].shape() != pass.activations[i].shape())
      throw ShapeError("objective seed for layer " + std::to_string(i) + " has wrong shape");
  r.gradient = backward(model, pass, seeds).input;
  return r;
}

struct Sample {
  Tensor image;
  std::size_t label = 0;
};

// Mean cross-entropy loss over a batch and its parameter gradients. The softmax
// is differentiated jointly with the loss (p - y at the logits).
struct LossGradient {
  double loss = 0.0;
  Parameters grads;
};

inline LossGradient parameter_gradients(const Model& model, std::span<const Sample> batch) {
  if (batch.empty()) throw UsageError("parameter_gradients: empty batch");
  const std::size_t n = model.spec().layers.size();
  LossGradient r;
  r.grads = zeros_like(model.spec());
  if (n < 2) throw UsageError("parameter_gradients: model has nothing below its softmax");
  for (const Sample& s : batch) {
    if (s.label >= model.classes()) throw UsageError("label " + std::to_string(s.label) + " out of range");
    ForwardPass pass = forward(model, s.image);
    const Tensor& p = pass.probabilities();
    r.loss -= std::log(std::max(p[s.label], std::numeric_limits<double>::min()));
    Tensor g = p;
    g[s.label] -= 1.0;
    detail::backprop(model, pass, n - 2, std::move(g), nullptr, &r.grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  r.loss *= inv;
  for (auto& lp : r.grads) {
    if (lp.weight.empty()) continue;
    lp.weight *= inv;
    lp.bias *= inv;
  }
  return r;
}

inline std::size_t predict(const Model& model, const Tensor& x) {
  return argmax(forward(model, x).probabilities().data());
}

inline double accuracy(const Model& model, std::span<const Sample> data) {
  if (data.empty()) return 0.0;
  std::size_t hit = 0;
  for (const Sample& s : data) hit += predict(model, s.image) == s.label;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace dprobe
