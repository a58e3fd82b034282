#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace dprobe;
using namespace dprobe::testing;

namespace {

std::size_t first_relu(const Model& m) {
  const auto& layers = m.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::relu) return i;
  return 0;
}

}  // namespace

TEST(Network, ShapesOfLayers) {
  ModelSpec spec{{8, 8, 1},
                 {LayerSpec::conv2d(3, 3, 1, 2), LayerSpec::relu(), LayerSpec::maxpool2d(), LayerSpec::flatten(),
                  LayerSpec::dense(18, 4), LayerSpec::softmax()}};
  const auto shapes = spec.output_shapes();
  EXPECT_EQ(shapes[0], (Shape{6, 6, 2}));
  EXPECT_EQ(shapes[2], (Shape{3, 3, 2}));
  EXPECT_EQ(shapes[3], (Shape{18}));
  EXPECT_EQ(shapes[5], (Shape{4}));
}

TEST(Network, BadSpecsThrow) {
  ModelSpec wrong_width{{4, 4, 1}, {LayerSpec::flatten(), LayerSpec::dense(15, 2), LayerSpec::softmax()}};
  EXPECT_THROW(wrong_width.output_shapes(), ShapeError);
  ModelSpec too_small{{2, 2, 1}, {LayerSpec::conv2d(3, 3, 1, 1)}};
  EXPECT_THROW(too_small.output_shapes(), ShapeError);
}

TEST(Network, ConvMatchesHandComputation) {
  ModelSpec spec{{3, 3, 1}, {LayerSpec::conv2d(2, 2, 1, 1), LayerSpec::flatten(), LayerSpec::softmax()}};
  Parameters p = zeros_like(spec);
  p[0].weight = Tensor({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  p[0].bias[0] = 0.5;
  const Model m(spec, p);
  const Tensor x({3, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = forward(m, x).activations[0];
  // top-left window 1 2 / 4 5 -> 1 + 4 + 12 + 20
  EXPECT_DOUBLE_EQ(y[0], 37.5);
  EXPECT_DOUBLE_EQ(y[1], 1 * 2 + 2 * 3 + 3 * 5 + 4 * 6 + 0.5);
  EXPECT_DOUBLE_EQ(y[3], 1 * 5 + 2 * 6 + 3 * 8 + 4 * 9 + 0.5);
}

TEST(Network, PoolReluSoftmax) {
  ModelSpec spec{{2, 2, 1}, {LayerSpec::relu(), LayerSpec::maxpool2d(), LayerSpec::flatten(), LayerSpec::softmax()}};
  const Model m(spec, zeros_like(spec));
  const Tensor x({2, 2, 1}, std::vector<double>{-3, 0.5, 0.25, -1});
  EXPECT_DOUBLE_EQ(forward(m, x).activations[2][0], 0.5);

  ModelSpec sm{{1, 1, 3}, {LayerSpec::flatten(), LayerSpec::softmax()}};
  const Tensor p = forward(Model(sm, zeros_like(sm)), Tensor({1, 1, 3}, std::vector<double>{1000, 1000, 0}))
                       .probabilities();
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[2], 0.0, 1e-12);
}

TEST(Network, NonFiniteInputRaises) {
  Rng rng(1);
  const Model m = random_small_model(rng);
  Tensor x = random_tensor(m.input_shape(), rng, 0, 1);
  x[0] = std::nan("");
  EXPECT_THROW(forward(m, x), NumericalError);
}

// Central differences against backprop on twenty-plus random networks. Points where a
// difference straddles a relu or pooling kink are redrawn.
TEST(Network, GradientsMatchFiniteDifferences) {
  Rng rng(2024);
  std::size_t checked = 0, redrawn = 0;
  double worst_input = 0.0, worst_param = 0.0;
  while (checked < 25) {
    const Model m = random_small_model(rng);
    const std::size_t hidden = first_relu(m);
    const Tensor r = random_tensor({m.classes()}, rng);
    const Tensor u = random_tensor(m.output_shapes()[hidden], rng);
    bool done = false;
    for (int attempt = 0; attempt < 20 && !done; ++attempt) {
      const Tensor x = random_tensor(m.input_shape(), rng, 0.0, 1.0);
      const auto c = check_gradients(m, x, rng.below(m.classes()), r, hidden, u);
      if (!c.smooth) {
        ++redrawn;
        continue;
      }
      worst_input = std::max(worst_input, c.input_error);
      worst_param = std::max(worst_param, c.param_error);
      EXPECT_LT(c.input_error, 1e-4) << "net " << checked;
      EXPECT_LT(c.param_error, 1e-4) << "net " << checked;
      done = true;
    }
    checked += done;
  }
  RecordProperty("worst_input_error", std::to_string(worst_input));
  RecordProperty("worst_param_error", std::to_string(worst_param));
  RecordProperty("redrawn", std::to_string(redrawn));
}

TEST(Network, BatchGradientIsMeanOfSingles) {
  Rng rng(5);
  const Model m = random_small_model(rng);
  std::vector<Sample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({random_tensor(m.input_shape(), rng, 0, 1), rng.below(m.classes())});
  const auto all = parameter_gradients(m, batch);
  double loss = 0.0;
  Parameters sum = zeros_like(m.spec());
  for (const Sample& s : batch) {
    const auto one = parameter_gradients(m, std::span<const Sample>(&s, 1));
    loss += one.loss / 4;
    for (std::size_t l = 0; l < sum.size(); ++l)
      if (!sum[l].weight.empty()) {
        sum[l].weight.axpy(0.25, one.grads[l].weight);
        sum[l].bias.axpy(0.25, one.grads[l].bias);
      }
  }
  EXPECT_NEAR(all.loss, loss, 1e-12);
  for (std::size_t l = 0; l < sum.size(); ++l)
    if (!sum[l].weight.empty()) {
      EXPECT_LT(max_abs_diff(sum[l].weight, all.grads[l].weight), 1e-12);
      EXPECT_LT(max_abs_diff(sum[l].bias, all.grads[l].bias), 1e-12);
    }
}

TEST(Network, ParameterValidation) {
  ModelSpec spec{{4, 4, 1}, {LayerSpec::flatten(), LayerSpec::dense(16, 2), LayerSpec::softmax()}};
  Parameters p = zeros_like(spec);
  p[1].bias = Tensor({3});
  EXPECT_THROW(Model(spec, p), ShapeError);
  EXPECT_THROW(parameter_gradients(Model(spec, zeros_like(spec)), std::vector<Sample>{}), UsageError);
}
