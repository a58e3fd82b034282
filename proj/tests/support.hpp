#pragma once

#include <array>
#include <cmath>
#include <algorithm>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dprobe/generator.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/network.hpp"
#include "dprobe/rng.hpp"

namespace dprobe::testing {

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// conv -> relu -> pool -> (conv -> relu)? -> flatten -> dense -> relu -> dense -> softmax,
// every size drawn at random.
inline Model random_small_model(Rng& rng) {
  const std::size_t H = 6 + rng.below(4), W = 6 + rng.below(4), C = 1 + rng.below(2);
  ModelSpec spec{{H, W, C}, {}};
  const std::size_t k = 2 + rng.below(2), c1 = 2 + rng.below(2);
  spec.layers.push_back(LayerSpec::conv2d(k, k, C, c1));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::maxpool2d());
  Shape s = spec.layers[0].output_shape(spec.input_shape, 0);
  s = {s[0] / 2, s[1] / 2, s[2]};
  if (s[0] >= 2 && s[1] >= 2 && rng.below(2)) {
    spec.layers.push_back(LayerSpec::conv2d(2, 2, c1, 2));
    spec.layers.push_back(LayerSpec::relu());
    s = {s[0] - 1, s[1] - 1, 2};
  }
  spec.layers.push_back(LayerSpec::flatten());
  const std::size_t hidden = 3 + rng.below(4), classes = 2 + rng.below(3);
  spec.layers.push_back(LayerSpec::dense(shape_size(s), hidden));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::dense(hidden, classes));
  spec.layers.push_back(LayerSpec::softmax());
  Model m = Model::initialized(spec, rng.next_u64());
  for (auto& p : m.params())
    for (double& b : p.bias.data()) b = rng.uniform(-0.3, 0.3);
  return m;
}

// Sign pattern of every relu input and argmax of every pooling window; equal patterns
// on both sides of a finite difference mean no kink lies in between.
inline std::vector<double> kink_pattern(const Model& m, const Tensor& x) {
  const ForwardPass pass = forward(m, x);
  std::vector<double> out;
  const auto& layers = m.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& in = pass.layer_input(i);
    if (layers[i].kind == LayerKind::relu) {
      for (double v : in.data()) out.push_back(v > 0.0);
    } else if (layers[i].kind == LayerKind::maxpool2d) {
      const Tensor& y = pass.activations[i];
      for (std::size_t oh = 0; oh < y.dim(0); ++oh)
        for (std::size_t ow = 0; ow < y.dim(1); ++ow)
          for (std::size_t c = 0; c < y.dim(2); ++c)
            out.push_back(static_cast<double>(detail::pool_argmax(in, oh, ow, c)));
    }
  }
  return out;
}

// Four-by-four single-channel models with hand-set weights: a dense hidden layer of
// two relu units reading mean brightness and a left/right contrast, then three logits.
inline Model toy_model(double a, double b, double bias_shift) {
  ModelSpec spec{{4, 4, 1}, {LayerSpec::flatten(), LayerSpec::dense(16, 2), LayerSpec::relu(), LayerSpec::dense(2, 3),
                             LayerSpec::softmax()}};
  Parameters p = zeros_like(spec);
  for (std::size_t i = 0; i < 16; ++i) {
    p[1].weight[i] = 1.0 / 16.0;                          // unit 0: brightness
    p[1].weight[16 + i] = (i % 4 < 2 ? 1.0 : -1.0) / 8.0;  // unit 1: left minus right
  }
  p[1].bias[1] = 0.5;
  const double w2[6] = {a, 0.2, -a, b, 0.0, 0.3};
  for (std::size_t i = 0; i < 6; ++i) p[3].weight[i] = w2[i] * 4.0;
  p[3].bias[0] = bias_shift;
  p[3].bias[1] = -bias_shift;
  return Model(spec, p, "toy");
}

inline Ensemble toy_ensemble() {
  return Ensemble({toy_model(1.0, 0.5, 0.0), toy_model(1.3, 0.2, 0.1), toy_model(0.7, 0.8, -0.1)});
}

// Elementwise |a - b| / max(|a|, |b|, floor), maximised over all entries.
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

struct GradientCheck {
  bool smooth = true;  // false when some finite difference straddles a relu or pooling kink
  double input_error = 0.0;
  double param_error = 0.0;
};

// Backprop against central differences for the input gradient of
// r . probabilities + u . activations[hidden] and the parameter gradient of the
// cross-entropy of (x, label).
inline GradientCheck check_gradients(const Model& model, const Tensor& x, std::size_t label, const Tensor& r,
                                     std::size_t hidden, const Tensor& u, double h = 1e-4) {
  GradientCheck out;
  const auto base = kink_pattern(model, x);
  auto value = [&](const ForwardPass& pass) {
    double v = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) v += r[k] * pass.probabilities()[k];
    for (std::size_t k = 0; k < u.size(); ++k) v += u[k] * pass.activations[hidden][k];
    return v;
  };
  auto objective = [&](const Tensor& in) { return value(forward(model, in)); };
  const InputGradient ig = input_gradient(model, x, [&](const ForwardPass& pass, ActivationSeeds& seeds) {
    seeds.back() = r;
    seeds[hidden] = u;
    return value(pass);
  });
  Tensor fd(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    if (kink_pattern(model, xp) != base || kink_pattern(model, xm) != base) out.smooth = false;
    fd[i] = (objective(xp) - objective(xm)) / (2 * h);
  }
  out.input_error = max_relative_error(ig.gradient.data(), fd.data());

  const Sample sample{x, label};
  const LossGradient lg = parameter_gradients(model, std::span<const Sample>(&sample, 1));
  std::vector<double> analytic, numeric;
  Model probe = model;
  auto loss = [&] { return -std::log(forward(probe, x).probabilities()[label]); };
  for (std::size_t li = 0; li < probe.params().size(); ++li) {
    for (Tensor* t : {&probe.params()[li].weight, &probe.params()[li].bias}) {
      const Tensor& g = t == &probe.params()[li].weight ? lg.grads[li].weight : lg.grads[li].bias;
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double keep = (*t)[i];
        (*t)[i] = keep + h;
        if (kink_pattern(probe, x) != base) out.smooth = false;
        const double up = loss();
        (*t)[i] = keep - h;
        if (kink_pattern(probe, x) != base) out.smooth = false;
        const double down = loss();
        (*t)[i] = keep;
        analytic.push_back(g[i]);
        numeric.push_back((up - down) / (2 * h));
      }
    }
  }
  out.param_error = max_relative_error(analytic, numeric);
  return out;
}

// The first brightness-constrained ascent step from `seed` set beside a direct sweep of
// the joint objective over uniform brightness offsets b in [-0.5, 0.5].
struct BrightnessStepCheck {
  double seed_value = 0.0;
  double step_value = 0.0;  // objective at the first iterate
  double step_bias = 0.0;   // brightness offset the first step applied
  std::vector<std::pair<double, double>> sweep;  // (b, objective)
  double sweep_slope = 0.0;                      // central difference of the sweep at b = 0
};

inline BrightnessStepCheck brightness_step_check(const Ensemble& ens, const Sample& seed, GenerationConfig cfg) {
  cfg.constraint = parse_constraint("light");
  cfg.max_iters = 1;
  const Tensor x0 = quantize8(seed.image);
  // Same consensus class, deviating model and neuron target the generator picks for seed id 0.
  EnsembleCoverage cov(ens.members(), cfg.threshold);
  const auto e0 = detail::evaluate(ens, x0);
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) cov.maps[i].update(neuron_activations(ens[i], e0.passes[i]));
  const std::size_t c = e0.labels[0];
  const std::size_t j = choose_deviating(e0.probs, c, 0, cfg.policy);
  Rng rng(derive_seed(cfg.rng_seed, 0));
  const auto target = cov.maps[cfg.coverage_model].select_uncovered(rng);

  auto objective = [&](const Tensor& x) { return detail::joint_value(ens, detail::evaluate(ens, x), c, j, cfg, target); };
  Tensor x1;
  EnsembleCoverage run_cov(ens.members(), cfg.threshold);
  generate_from_seed(ens, seed, 0, cfg, &run_cov, [&](std::size_t it, const Tensor& x) {
    if (it == 1) x1 = x;
  });
  BrightnessStepCheck r;
  r.seed_value = objective(x0);
  if (x1.empty()) return r;  // seed already diverged
  r.step_value = objective(x1);
  r.step_bias = (x1 - x0).mean();
  for (int k = -50; k <= 50; ++k) {
    const double b = k / 100.0;
    r.sweep.emplace_back(b, objective(clamp01(x0 + Tensor(x0.shape(), b))));
  }
  r.sweep_slope = (r.sweep[51].second - r.sweep[49].second) / 0.02;
  return r;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dprobe_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace dprobe::testing
