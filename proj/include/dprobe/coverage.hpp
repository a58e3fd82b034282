#pragma once

#include <algorithm>
#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprobe/error.hpp"
#include "dprobe/network.hpp"
#include "dprobe/rng.hpp"

namespace dprobe {

// A "neuron" is one unit of a dense layer or one output channel of a conv2d layer.
// layer is the index of the dense/conv2d layer in the model's layer list.
struct NeuronId {
  std::size_t layer = 0;
  std::size_t unit = 0;
  auto operator<=>(const NeuronId&) const = default;
};

// Where a neuron layer's values are read from: the following relu's output when
// there is one, the raw layer output otherwise. The softmax is never a neuron layer.
struct NeuronLayer {
  std::size_t layer = 0;
  std::size_t source = 0;
  std::size_t units = 0;
  bool conv = false;
};

inline std::vector<NeuronLayer> neuron_layers(const Model& model) {
  std::vector<NeuronLayer> out;
  const auto& layers = model.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto k = layers[i].kind;
    if (k != LayerKind::dense && k != LayerKind::conv2d) continue;
    const bool relu_next = i + 1 < layers.size() && layers[i + 1].kind == LayerKind::relu;
    out.push_back({i, relu_next ? i + 1 : i, layers[i].out, k == LayerKind::conv2d});
  }
  return out;
}

// Identifies which model a coverage record belongs to.
inline std::string model_key(const Model& model) {
  std::string key = model.name() + ":" + shape_str(model.input_shape());
  for (const auto& l : model.spec().layers) key += std::string("/") + to_string(l.kind) + std::to_string(l.out);
  return key;
}

// Per-neuron scalars of one forward pass, each layer min-max normalised to [0, 1].
struct NeuronValues {
  std::string model;
  std::vector<std::vector<double>> layers;  // aligned with neuron_layers(model)
};

namespace detail {

inline std::vector<double> raw_layer_values(const NeuronLayer& nl, const Tensor& act) {
  std::vector<double> v(nl.units, 0.0);
  if (!nl.conv) {
    for (std::size_t u = 0; u < nl.units; ++u) v[u] = act[u];
    return v;
  }
  const std::size_t cells = act.dim(0) * act.dim(1);
  for (std::size_t p = 0; p < cells; ++p)
    for (std::size_t u = 0; u < nl.units; ++u) v[u] += act[p * nl.units + u];
  for (double& x : v) x /= static_cast<double>(cells);
  return v;
}

inline void min_max_normalise(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, range = *hi - *lo;
  if (!(range > 0.0)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x = (x - a) / range;
}

}  // namespace detail

inline NeuronValues neuron_activations(const Model& model, const ForwardPass& pass) {
  NeuronValues nv;
  nv.model = model_key(model);
  for (const NeuronLayer& nl : neuron_layers(model)) {
    auto v = detail::raw_layer_values(nl, pass.activations[nl.source]);
    detail::min_max_normalise(v);
    nv.layers.push_back(std::move(v));
  }
  return nv;
}

// Normalised value of one neuron; adds scale * d(value)/d(activation) into the seed slot
// of the neuron's source layer. The min and max neurons of the layer take part in the
// derivative since they define the normalisation.
inline double neuron_value_with_gradient(const Model& model, const ForwardPass& pass, NeuronId id,
                                         ActivationSeeds& seeds, double scale) {
  const auto layers = neuron_layers(model);
  const auto it = std::find_if(layers.begin(), layers.end(), [&](const NeuronLayer& l) { return l.layer == id.layer; });
  if (it == layers.end() || id.unit >= it->units) throw UsageError("neuron id does not belong to the model");
  const Tensor& act = pass.activations[it->source];
  const auto raw = detail::raw_layer_values(*it, act);
  const std::size_t lo = static_cast<std::size_t>(std::min_element(raw.begin(), raw.end()) - raw.begin());
  const std::size_t hi = static_cast<std::size_t>(std::max_element(raw.begin(), raw.end()) - raw.begin());
  const double range = raw[hi] - raw[lo];
  if (!(range > 0.0)) return 0.0;
  const double vn = raw[id.unit];
  std::vector<double> d(it->units, 0.0);
  d[id.unit] += 1.0 / range;
  d[lo] += (vn - raw[hi]) / (range * range);
  d[hi] += -(vn - raw[lo]) / (range * range);
  Tensor& seed = seeds[it->source];
  if (seed.empty()) seed = Tensor(act.shape());
  if (!it->conv) {
    for (std::size_t u = 0; u < it->units; ++u) seed[u] += scale * d[u];
  } else {
    const std::size_t cells = act.dim(0) * act.dim(1);
    const double inv = scale / static_cast<double>(cells);
    for (std::size_t p = 0; p < cells; ++p)
      for (std::size_t u = 0; u < it->units; ++u) seed[p * it->units + u] += inv * d[u];
  }
  return (vn - raw[lo]) / range;
}

// Neurons of one model that have ever exceeded threshold t. Each neuron keeps its peak
// normalised value, so activation is monotone and merging is an elementwise max.
class CoverageMap {
 public:
  CoverageMap() = default;

  CoverageMap(const Model& model, double threshold) : model_(model_key(model)), threshold_(threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("coverage threshold must be in [0, 1]");
    for (const NeuronLayer& nl : neuron_layers(model)) {
      layers_.push_back(nl);
      offsets_.push_back(total_);
      total_ += nl.units;
    }
    peak_.assign(total_, 0.0);
    active_.assign(total_, false);
  }

  const std::string& model() const noexcept { return model_; }
  double threshold() const noexcept { return threshold_; }
  std::size_t total_neurons() const noexcept { return total_; }
  std::size_t activated_count() const noexcept { return activated_; }
  const std::vector<NeuronLayer>& layers() const noexcept { return layers_; }

  double ratio() const { return total_ ? static_cast<double>(activated_) / static_cast<double>(total_) : 0.0; }

  // Coverage the same recorded inputs would give at another threshold.
  double ratio_at(double t) const {
    if (!total_) return 0.0;
    const auto n = std::count_if(peak_.begin(), peak_.end(), [&](double p) { return p > t; });
    return static_cast<double>(n) / static_cast<double>(total_);
  }

  bool covered(NeuronId id) const { return active_[flat(id)]; }

  // Marks neurons whose value strictly exceeds the threshold; returns how many were new.
  std::size_t update(const NeuronValues& values) {
    if (values.model != model_) throw UsageError("coverage update from a different model");
    if (values.layers.size() != layers_.size()) throw UsageError("coverage update has wrong layer count");
    std::size_t fresh = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (values.layers[l].size() != layers_[l].units) throw UsageError("coverage update has wrong unit count");
      for (std::size_t u = 0; u < layers_[l].units; ++u) {
        const std::size_t i = offsets_[l] + u;
        peak_[i] = std::max(peak_[i], values.layers[l][u]);
        if (!active_[i] && values.layers[l][u] > threshold_) {
          active_[i] = true;
          ++activated_;
          ++fresh;
        }
      }
    }
    return fresh;
  }

  // Uniformly random uncovered neuron, or nullopt when everything is covered.
  std::optional<NeuronId> select_uncovered(Rng& rng) const {
    std::vector<NeuronId> open;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t u = 0; u < layers_[l].units; ++u)
        if (!active_[offsets_[l] + u]) open.push_back({layers_[l].layer, u});
    if (open.empty()) return std::nullopt;
    return open[rng.below(open.size())];
  }

  void merge(const CoverageMap& other) {
    if (other.model_ != model_ || other.threshold_ != threshold_)
      throw UsageError("cannot merge coverage maps of different models or thresholds");
    for (std::size_t i = 0; i < total_; ++i) {
      peak_[i] = std::max(peak_[i], other.peak_[i]);
      if (!active_[i] && other.active_[i]) {
        active_[i] = true;
        ++activated_;
      }
    }
  }

  std::vector<NeuronId> activated() const {
    std::vector<NeuronId> out;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      for (std::size_t u = 0; u < layers_[l].units; ++u)
        if (active_[offsets_[l] + u]) out.push_back({layers_[l].layer, u});
    return out;
  }

  std::size_t activated_in_layer(std::size_t l) const {
    return static_cast<std::size_t>(std::count(active_.begin() + static_cast<std::ptrdiff_t>(offsets_[l]),
                                               active_.begin() + static_cast<std::ptrdiff_t>(offsets_[l] + layers_[l].units),
                                               true));
  }

  friend bool operator==(const CoverageMap& a, const CoverageMap& b) {
    return a.model_ == b.model_ && a.threshold_ == b.threshold_ && a.active_ == b.active_ && a.peak_ == b.peak_;
  }

 private:
  std::size_t flat(NeuronId id) const {
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l].layer == id.layer) {
        if (id.unit >= layers_[l].units) break;
        return offsets_[l] + id.unit;
      }
    throw UsageError("neuron id not in coverage map");
  }

  std::string model_;
  double threshold_ = 0.0;
  std::vector<NeuronLayer> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
  std::size_t activated_ = 0;
  std::vector<double> peak_;
  std::vector<bool> active_;
};

inline nlohmann::json to_json(const CoverageMap& m) {
  nlohmann::json per_layer = nlohmann::json::array();
  for (std::size_t l = 0; l < m.layers().size(); ++l)
    per_layer.push_back({{"layer", m.layers()[l].layer},
                         {"kind", m.layers()[l].conv ? "conv2d" : "dense"},
                         {"neurons", m.layers()[l].units},
                         {"activated", m.activated_in_layer(l)}});
  return {{"model", m.model()},
          {"total_neurons", m.total_neurons()},
          {"activated", m.activated_count()},
          {"ratio", m.ratio()},
          {"threshold", m.threshold()},
          {"per_layer", per_layer}};
}

// One coverage map per ensemble member. The headline figure is the mean of the
// members' ratios.
struct EnsembleCoverage {
  std::vector<CoverageMap> maps;

  EnsembleCoverage() = default;
  template <typename Models>
  EnsembleCoverage(const Models& models, double threshold) {
    for (const Model& m : models) maps.emplace_back(m, threshold);
  }

  double ratio() const {
    if (maps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : maps) s += m.ratio();
    return s / static_cast<double>(maps.size());
  }
  double ratio_at(double t) const {
    if (maps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : maps) s += m.ratio_at(t);
    return s / static_cast<double>(maps.size());
  }
  void merge(const EnsembleCoverage& o) {
    if (o.maps.size() != maps.size()) throw UsageError("ensemble coverage size mismatch");
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i].merge(o.maps[i]);
  }
  friend bool operator==(const EnsembleCoverage&, const EnsembleCoverage&) = default;
};

inline nlohmann::json to_json(const EnsembleCoverage& c) {
  nlohmann::json models = nlohmann::json::array();
  std::size_t total = 0, active = 0;
  for (const auto& m : c.maps) {
    models.push_back(to_json(m));
    total += m.total_neurons();
    active += m.activated_count();
  }
  return {{"total_neurons", total},
          {"activated", active},
          {"ratio", c.ratio()},
          {"threshold", c.maps.empty() ? 0.0 : c.maps[0].threshold()},
          {"models", models}};
}

}  // namespace dprobe
