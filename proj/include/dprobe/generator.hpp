#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dprobe/coverage.hpp"
#include "dprobe/error.hpp"
#include "dprobe/image_io.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/network.hpp"
#include "dprobe/parallel.hpp"
#include "dprobe/rng.hpp"
#include "dprobe/transforms.hpp"

namespace dprobe {

enum class DeviatingPolicy { least_confident, round_robin };

inline DeviatingPolicy parse_policy(const std::string& s) {
  if (s == "least_confident") return DeviatingPolicy::least_confident;
  if (s == "round_robin") return DeviatingPolicy::round_robin;
  throw UsageError("unknown deviating-model policy '" + s + "'");
}

inline const char* to_string(DeviatingPolicy p) {
  return p == DeviatingPolicy::least_confident ? "least_confident" : "round_robin";
}

struct GenerationConfig {
  double lambda1 = 2.5;
  double lambda2 = 2.0;
  double step = 10.0 / 255.0;  // ten grey levels per unit of normalised gradient
  double threshold = 0.5;
  std::size_t max_iters = 200;
  Constraint constraint;
  DeviatingPolicy policy = DeviatingPolicy::least_confident;
  std::size_t coverage_model = 0;  // ensemble member whose neurons the coverage term targets
  std::uint64_t rng_seed = 1;

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(lambda1) || lambda1 < 0) throw UsageError("lambda1 must be finite and >= 0");
    if (!finite(lambda2) || lambda2 < 0) throw UsageError("lambda2 must be finite and >= 0");
    if (!finite(step) || step <= 0) throw UsageError("step must be finite and > 0");
    if (!(threshold >= 0 && threshold <= 1)) throw UsageError("threshold must be in [0, 1]");
    if (max_iters == 0) throw UsageError("max_iters must be > 0");
    if (coverage_model >= Ensemble::kSize) throw UsageError("coverage_model out of range");
    if (constraint.family == Family::overlay && !constraint.mask) throw UsageError("overlay constraint needs a mask");
  }
};

struct CornerCase {
  Tensor image;
  std::size_t seed_id = 0;
  std::size_t original_label = 0;
  std::array<std::size_t, Ensemble::kSize> labels{};
  std::array<Tensor, Ensemble::kSize> probabilities;
  std::vector<std::size_t> deviating;  // minority models, or all three on a 3-way split
  std::size_t target_model = 0;        // j of the differential objective
  std::size_t iterations = 0;
  std::vector<TransformSpec> trail;
  double objective = 0.0;
  std::string constraint;
};

// sum_{i != j} F_i(x)[c] - lambda1 * F_j(x)[c]
inline double obj_differential(std::span<const Tensor> probs, std::size_t c, std::size_t j, double lambda1) {
  if (j >= probs.size()) throw UsageError("deviating model index out of range");
  double v = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (c >= probs[i].size()) throw UsageError("class index out of range");
    v += i == j ? -lambda1 * probs[i][c] : probs[i][c];
  }
  return v;
}

inline double obj_joint(double obj1, double neuron_value, double lambda2) { return obj1 + lambda2 * neuron_value; }

struct Divergence {
  std::vector<std::size_t> deviating;
  std::optional<std::size_t> majority;
};

// nullopt when all labels agree; otherwise the minority models and the majority label,
// or every model and no majority on a full split.
inline std::optional<Divergence> detect_divergence(std::span<const std::size_t> labels) {
  if (labels.size() != Ensemble::kSize) throw UsageError("detect_divergence expects three labels");
  if (labels[0] == labels[1] && labels[1] == labels[2]) return std::nullopt;
  Divergence d;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t votes = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) votes += labels[k] == labels[i];
    if (votes >= 2) d.majority = labels[i];
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!d.majority || labels[i] != *d.majority) d.deviating.push_back(i);
  return d;
}

namespace detail {

struct EnsembleEval {
  std::array<ForwardPass, Ensemble::kSize> passes;
  std::array<std::size_t, Ensemble::kSize> labels{};
  std::array<Tensor, Ensemble::kSize> probs;
};

inline EnsembleEval evaluate(const Ensemble& ens, const Tensor& x) {
  EnsembleEval e;
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) {
    e.passes[i] = forward(ens[i], x);
    e.probs[i] = e.passes[i].probabilities();
    e.labels[i] = argmax(e.probs[i].data());
  }
  return e;
}

inline void record_coverage(const Ensemble& ens, const EnsembleEval& e, EnsembleCoverage* cov) {
  if (!cov) return;
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) cov->maps[i].update(neuron_activations(ens[i], e.passes[i]));
}

struct JointGradient {
  double value = 0.0;
  Tensor gradient;
};

// Value and input gradient of the joint objective, one backward pass per model.
inline JointGradient joint_gradient(const Ensemble& ens, const EnsembleEval& e, std::size_t c, std::size_t j,
                                    const GenerationConfig& cfg, std::optional<NeuronId> target) {
  JointGradient r;
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) {
    const Model& m = ens[i];
    ActivationSeeds seeds(m.spec().layers.size());
    Tensor top(e.passes[i].probabilities().shape());
    const double w = i == j ? -cfg.lambda1 : 1.0;
    top[c] = w;
    seeds.back() = top;
    r.value += w * e.probs[i][c];
    if (target && i == cfg.coverage_model && cfg.lambda2 != 0.0)
      r.value += cfg.lambda2 * neuron_value_with_gradient(m, e.passes[i], *target, seeds, cfg.lambda2);
    Tensor g = backward(m, e.passes[i], seeds).input;
    if (r.gradient.empty())
      r.gradient = std::move(g);
    else
      r.gradient += g;
  }
  return r;
}

inline double joint_value(const Ensemble& ens, const EnsembleEval& e, std::size_t c, std::size_t j,
                          const GenerationConfig& cfg, std::optional<NeuronId> target) {
  double f = 0.0;
  if (target) {
    ActivationSeeds scratch(ens[cfg.coverage_model].spec().layers.size());
    f = neuron_value_with_gradient(ens[cfg.coverage_model], e.passes[cfg.coverage_model], *target, scratch, 0.0);
  }
  return obj_joint(obj_differential(e.probs, c, j, cfg.lambda1), f, cfg.lambda2);
}

// Scales g to unit root-mean-square; a zero gradient stays zero.
inline void normalise_rms(Tensor& g) {
  double ss = 0.0;
  for (double v : g.data()) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(g.size()));
  if (rms > 0.0) g *= 1.0 / (rms + 1e-5);
}

}  // namespace detail

inline std::size_t choose_deviating(const std::array<Tensor, Ensemble::kSize>& probs, std::size_t c,
                                    std::size_t seed_id, DeviatingPolicy policy) {
  if (policy == DeviatingPolicy::round_robin) return seed_id % Ensemble::kSize;
  std::size_t j = 0;
  for (std::size_t i = 1; i < Ensemble::kSize; ++i)
    if (probs[i][c] < probs[j][c]) j = i;
  return j;
}

// Gradient ascent on the joint objective from one seed. The search state stays
// real-valued; divergence is checked (and coverage recorded) on the 8-bit image that
// would be emitted, so a registered case replays exactly from its PNG.
// `coverage` may be null, which disables the coverage term. `on_step`, when set, sees
// every iterate of the search state.
using StepObserver = std::function<void(std::size_t iteration, const Tensor& x)>;

inline std::optional<CornerCase> generate_from_seed(const Ensemble& ens, const Sample& seed, std::size_t seed_id,
                                                    const GenerationConfig& cfg, EnsembleCoverage* coverage,
                                                    const StepObserver& on_step = {}) {
  cfg.validate();
  if (seed.image.shape() != ens.input_shape()) throw ShapeError("seed image does not match the ensemble input");
  if (coverage && coverage->maps.size() != Ensemble::kSize) throw UsageError("coverage must cover all three models");

  auto make_case = [&](const Tensor& img, const detail::EnsembleEval& e, const Divergence& d, std::size_t iters) {
    CornerCase cc;
    cc.image = img;
    cc.seed_id = seed_id;
    cc.original_label = seed.label;
    cc.labels = e.labels;
    cc.probabilities = e.probs;
    cc.deviating = d.deviating;
    cc.iterations = iters;
    cc.constraint = cfg.constraint.name();
    return cc;
  };

  Tensor x = quantize8(seed.image);
  detail::EnsembleEval eval = detail::evaluate(ens, x);
  detail::record_coverage(ens, eval, coverage);
  if (auto d = detect_divergence(eval.labels)) {
    CornerCase cc = make_case(x, eval, *d, 0);
    cc.target_model = d->deviating.front();
    cc.objective = obj_differential(eval.probs, d->majority.value_or(seed.label), cc.target_model, cfg.lambda1);
    return cc;
  }

  const std::size_t c = eval.labels[0];
  const std::size_t j = choose_deviating(eval.probs, c, seed_id, cfg.policy);
  Rng rng(derive_seed(cfg.rng_seed, seed_id));
  std::optional<NeuronId> target;
  if (coverage) target = coverage->maps[cfg.coverage_model].select_uncovered(rng);

  std::vector<TransformSpec> trail;
  detail::EnsembleEval state = eval;  // passes at the real-valued search point
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    auto jg = detail::joint_gradient(ens, state, c, j, cfg, target);
    detail::normalise_rms(jg.gradient);
    TransformSpec spec = constrain_gradient(jg.gradient, x, cfg.constraint, cfg.step);
    x = apply_transform(x, spec);
    trail.push_back(std::move(spec));
    if (on_step) on_step(it, x);

    const Tensor emitted = quantize8(x);
    eval = detail::evaluate(ens, emitted);
    detail::record_coverage(ens, eval, coverage);
    if (coverage && target && coverage->maps[cfg.coverage_model].covered(*target))
      target = coverage->maps[cfg.coverage_model].select_uncovered(rng);
    if (auto d = detect_divergence(eval.labels)) {
      CornerCase cc = make_case(emitted, eval, *d, it);
      cc.target_model = j;
      cc.trail = std::move(trail);
      cc.objective = detail::joint_value(ens, eval, c, j, cfg, target);
      return cc;
    }
    state = emitted == x ? eval : detail::evaluate(ens, x);
  }
  return std::nullopt;
}

struct CampaignStats {
  std::size_t seeds = 0;
  std::size_t corner_cases = 0;
  std::optional<double> conversion;  // corner cases / seeds; undefined without seeds
  double coverage = 0.0;
  std::vector<std::size_t> iterations;                  // per seed; max_iters + 1 marks no divergence
  std::vector<std::optional<double>> first_divergence_ms;  // per seed, wall clock
};

struct CampaignResult {
  std::vector<CornerCase> corpus;  // ordered by seed_id
  EnsembleCoverage coverage;
  std::vector<EnsembleCoverage> seed_coverage;  // what each seed contributed, in seed order
  CampaignStats stats;
};

// Runs generate_from_seed over every seed. Each seed starts from an empty private
// coverage map and its own random stream, and the maps are merged afterwards, so the
// result does not depend on worker count or scheduling.
inline CampaignResult run_campaign(const Ensemble& ens, std::span<const Sample> seeds,
                                   std::span<const std::size_t> seed_ids, const GenerationConfig& cfg,
                                   std::size_t workers = 1) {
  cfg.validate();
  if (seed_ids.size() != seeds.size()) throw UsageError("need one id per seed");
  CampaignResult r;
  r.coverage = EnsembleCoverage(ens.members(), cfg.threshold);
  r.stats.seeds = seeds.size();
  std::vector<std::optional<CornerCase>> found(seeds.size());
  r.seed_coverage.assign(seeds.size(), r.coverage);
  r.stats.first_divergence_ms.assign(seeds.size(), std::nullopt);
  parallel_for(seeds.size(), workers, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    found[i] = generate_from_seed(ens, seeds[i], seed_ids[i], cfg, &r.seed_coverage[i]);
    if (found[i])
      r.stats.first_divergence_ms[i] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  });
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    r.coverage.merge(r.seed_coverage[i]);
    r.stats.iterations.push_back(found[i] ? found[i]->iterations : cfg.max_iters + 1);
    if (found[i]) r.corpus.push_back(std::move(*found[i]));
  }
  std::stable_sort(r.corpus.begin(), r.corpus.end(),
                   [](const CornerCase& a, const CornerCase& b) { return a.seed_id < b.seed_id; });
  r.stats.corner_cases = r.corpus.size();
  if (!seeds.empty())
    r.stats.conversion = static_cast<double>(r.corpus.size()) / static_cast<double>(seeds.size());
  r.stats.coverage = r.coverage.ratio();
  return r;
}

}  // namespace dprobe
