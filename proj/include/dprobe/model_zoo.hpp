#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/network.hpp"
#include "dprobe/parallel.hpp"
#include "dprobe/rng.hpp"
#include "dprobe/train.hpp"

namespace dprobe {

enum class Variant { lenet1, lenet4, lenet5 };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::lenet1: return "lenet1";
    case Variant::lenet4: return "lenet4";
    case Variant::lenet5: return "lenet5";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "lenet1") return Variant::lenet1;
  if (s == "lenet4") return Variant::lenet4;
  if (s == "lenet5") return Variant::lenet5;
  throw UsageError("unknown model variant '" + s + "' (expected lenet1, lenet4 or lenet5)");
}

// LeNet-style stacks with 5x5 kernels:
//   lenet1: conv(4) pool | softmax
//   lenet4: conv(6) pool conv(16) pool | dense(84) | softmax
//   lenet5: conv(6) pool conv(16) pool | dense(120) dense(84) | softmax
inline ModelSpec build_variant(Variant v, const Shape& input_shape, std::size_t n_classes) {
  if (input_shape.size() != 3) throw ShapeError("input shape must be (H, W, C)");
  if (input_shape[0] < 8 || input_shape[1] < 8) throw ShapeError("input " + shape_str(input_shape) + " is below 8x8");
  if (n_classes < 2) throw UsageError("need at least two classes");
  const std::size_t channels = input_shape[2];
  ModelSpec spec{input_shape, {}};
  auto& L = spec.layers;
  auto conv_block = [&](std::size_t in, std::size_t out) {
    L.push_back(LayerSpec::conv2d(5, 5, in, out));
    L.push_back(LayerSpec::relu());
    L.push_back(LayerSpec::maxpool2d());
  };
  std::vector<std::size_t> hidden;
  switch (v) {
    case Variant::lenet1: conv_block(channels, 4); break;
    case Variant::lenet4:
      conv_block(channels, 6);
      conv_block(6, 16);
      hidden = {84};
      break;
    case Variant::lenet5:
      conv_block(channels, 6);
      conv_block(6, 16);
      hidden = {120, 84};
      break;
  }
  // Shape check of the conv/pool stack before sizing the dense head.
  ModelSpec probe{input_shape, L};
  probe.layers.push_back(LayerSpec::flatten());
  Shape cur = input_shape;
  for (std::size_t i = 0; i < probe.layers.size(); ++i) cur = probe.layers[i].output_shape(cur, i);
  std::size_t width = cur[0];
  L.push_back(LayerSpec::flatten());
  for (std::size_t h : hidden) {
    L.push_back(LayerSpec::dense(width, h));
    L.push_back(LayerSpec::relu());
    width = h;
  }
  L.push_back(LayerSpec::dense(width, n_classes));
  L.push_back(LayerSpec::softmax());
  spec.output_shapes();
  return spec;
}

struct Prediction {
  std::size_t label = 0;
  Tensor probabilities;
};

// Label is the argmax of the probabilities, ties to the lowest class index.
inline Prediction predict_label(const Model& model, const Tensor& x) {
  Prediction p;
  p.probabilities = forward(model, x).probabilities();
  p.label = argmax(p.probabilities.data());
  return p;
}

// Three classifiers sharing one input/output contract.
class Ensemble {
 public:
  static constexpr std::size_t kSize = 3;

  Ensemble() = default;
  explicit Ensemble(std::array<Model, kSize> members) : members_(std::move(members)) {
    for (const Model& m : members_) {
      if (m.input_shape() != members_[0].input_shape())
        throw UsageError("ensemble members disagree on input shape");
      if (m.classes() != members_[0].classes()) throw UsageError("ensemble members disagree on class count");
    }
  }

  const Model& operator[](std::size_t i) const { return members_.at(i); }
  Model& operator[](std::size_t i) { return members_.at(i); }
  const std::array<Model, kSize>& members() const { return members_; }
  std::size_t classes() const { return members_[0].classes(); }
  const Shape& input_shape() const { return members_[0].input_shape(); }

 private:
  std::array<Model, kSize> members_;
};

struct EnsembleConfig {
  std::array<Variant, Ensemble::kSize> variants{Variant::lenet1, Variant::lenet4, Variant::lenet5};
  TrainConfig train;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

struct ModelReport {
  std::string name;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

struct TrainedEnsemble {
  Ensemble ensemble;
  std::array<ModelReport, Ensemble::kSize> report;
};

inline TrainedEnsemble train_ensemble(std::span<const Sample> train, std::span<const Sample> test,
                                      const EnsembleConfig& cfg) {
  if (train.empty()) throw UsageError("train_ensemble: empty training set");
  std::size_t classes = 0;
  for (const Sample& s : train) classes = std::max(classes, s.label + 1);
  for (const Sample& s : test) classes = std::max(classes, s.label + 1);
  const Shape shape = train[0].image.shape();

  std::array<Model, Ensemble::kSize> models;
  TrainedEnsemble out;
  parallel_for(Ensemble::kSize, cfg.workers, [&](std::size_t i) {
    const char* name = to_string(cfg.variants[i]);
    Model init = Model::initialized(build_variant(cfg.variants[i], shape, classes), derive_seed(cfg.seed, 2 * i), name);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 2 * i + 1);
    TrainResult r = sgd_train(std::move(init), train, tc);
    out.report[i] = {name, r.final_accuracy, accuracy(r.model, test), r.epoch_losses};
    models[i] = std::move(r.model);
  });
  out.ensemble = Ensemble(std::move(models));
  return out;
}

}  // namespace dprobe
