#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprobe/error.hpp"
#include "dprobe/generator.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/rng.hpp"
#include "dprobe/train.hpp"
#include "dprobe/transforms.hpp"

namespace dprobe {

enum class Provenance { corner_case, seed_already_diverged, control_random_original, control_random_transform };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::corner_case: return "corner_case";
    case Provenance::seed_already_diverged: return "seed_already_diverged";
    case Provenance::control_random_original: return "control_random_original";
    case Provenance::control_random_transform: return "control_random_transform";
  }
  return "?";
}

struct AugmentedEntry {
  Tensor image;
  std::size_t label = 0;
  Provenance provenance = Provenance::corner_case;
};

struct AugmentedSet {
  std::vector<AugmentedEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<Sample> samples() const {
    std::vector<Sample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back({e.image, e.label});
    return out;
  }
};

// One entry per corner case, labelled with its seed's original label. `seed_pool` is the
// set the campaign drew seeds from; seed_id indexes into it and is cross-checked.
inline AugmentedSet build_augmented(std::span<const CornerCase> corpus, std::span<const Sample> seed_pool) {
  AugmentedSet set;
  for (const CornerCase& cc : corpus) {
    const std::string id = "corner case for seed " + std::to_string(cc.seed_id);
    if (cc.seed_id >= seed_pool.size()) throw LoadError(LoadErrorKind::corrupt, id + ": seed not in the pool");
    if (seed_pool[cc.seed_id].label != cc.original_label)
      throw LoadError(LoadErrorKind::corrupt, id + ": original label disagrees with the seed");
    if (cc.image.shape() != seed_pool[cc.seed_id].image.shape())
      throw LoadError(LoadErrorKind::corrupt, id + ": image shape differs from the seed");
    set.entries.push_back({cc.image, seed_pool[cc.seed_id].label,
                           cc.iterations == 0 ? Provenance::seed_already_diverged : Provenance::corner_case});
  }
  return set;
}

enum class ControlKind { random_original, random_transform };

inline const char* to_string(ControlKind k) {
  return k == ControlKind::random_original ? "random_original" : "random_transform";
}

// Ranges for the random-transform control; each parameter is drawn uniformly.
struct ControlRanges {
  double max_rotation_deg = 15.0;
  double max_shift = 0.10;  // fraction of the image side
  double min_zoom = 0.9;
  double max_zoom = 1.1;
};

// random_original: `size` distinct images of `pool`, unchanged, with their labels.
// random_transform: `size` images of `pool` drawn with replacement, each warped by a
// random rotation, shift and zoom about the image centre.
// `sources`, when given, receives the pool index behind every entry.
inline AugmentedSet build_control(ControlKind kind, std::size_t size, std::span<const Sample> pool, Rng& rng,
                                  const ControlRanges& ranges = {}, std::vector<std::size_t>* sources = nullptr) {
  AugmentedSet set;
  if (size == 0) return set;
  if (pool.empty()) throw UsageError("control augmentation needs a nonempty pool");
  if (kind == ControlKind::random_original) {
    if (size > pool.size())
      throw UsageError("control size " + std::to_string(size) + " exceeds pool of " + std::to_string(pool.size()));
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    for (std::size_t k = 0; k < size; ++k) {
      set.entries.push_back({pool[idx[k]].image, pool[idx[k]].label, Provenance::control_random_original});
      if (sources) sources->push_back(idx[k]);
    }
    return set;
  }
  constexpr double kPi = 3.14159265358979323846;
  for (std::size_t k = 0; k < size; ++k) {
    const auto src = static_cast<std::size_t>(rng.below(pool.size()));
    if (sources) sources->push_back(src);
    const Sample& s = pool[src];
    const double H = static_cast<double>(s.image.dim(0)), W = static_cast<double>(s.image.dim(1));
    const double angle = rng.uniform(-ranges.max_rotation_deg, ranges.max_rotation_deg) * kPi / 180.0;
    const double tx = rng.uniform(-ranges.max_shift, ranges.max_shift) * W;
    const double ty = rng.uniform(-ranges.max_shift, ranges.max_shift) * H;
    const double zoom = rng.uniform(ranges.min_zoom, ranges.max_zoom);
    const Affine a =
        Affine::translation(tx, ty).after(Affine::rotation_scale(angle, zoom, (W - 1) / 2.0, (H - 1) / 2.0));
    set.entries.push_back({apply_transform(s.image, a), s.label, Provenance::control_random_transform});
  }
  return set;
}

// (after - before) / before as a percentage; undefined when before is zero.
inline std::optional<double> relative_improvement(double before, double after) {
  if (before == 0.0) return std::nullopt;
  return (after - before) / before * 100.0;
}

struct ModelRetrain {
  std::string name;
  double eval_before = 0.0;  // accuracy on the evaluation (corner-case) set
  double eval_after = 0.0;
  double test_before = 0.0;  // accuracy on the original test set
  double test_after = 0.0;
  std::optional<double> improvement;  // percent, relative, on the evaluation set
  std::vector<double> epoch_losses;
};

struct RetrainReport {
  std::string strategy;
  std::size_t train_size = 0;
  std::size_t augmented_size = 0;
  std::size_t eval_size = 0;
  std::size_t test_size = 0;
  std::size_t epochs = 0;
  std::array<ModelRetrain, Ensemble::kSize> models;
};

struct RetrainOutcome {
  Ensemble ensemble;
  RetrainReport report;
};

// Continues training every model from its current weights on train + augmented, then
// scores each one on `eval` (the augmented set itself when empty) and on `test`.
// Model i shuffles with derive_seed(cfg.seed, i) whatever the augmentation, so two
// strategies with the same config differ only in their data.
inline RetrainOutcome retrain_and_eval(const Ensemble& ensemble, std::span<const Sample> train,
                                       const AugmentedSet& augmented, std::span<const Sample> test,
                                       const TrainConfig& cfg, std::span<const Sample> eval = {},
                                       std::string strategy = "corner_cases", std::size_t workers = 1) {
  if (train.empty() && augmented.empty()) throw UsageError("retrain_and_eval: nothing to train on");
  std::vector<Sample> data(train.begin(), train.end());
  const auto aug = augmented.samples();
  data.insert(data.end(), aug.begin(), aug.end());
  if (eval.empty()) eval = aug;

  RetrainOutcome out;
  RetrainReport& rep = out.report;
  rep.strategy = std::move(strategy);
  rep.train_size = train.size();
  rep.augmented_size = augmented.size();
  rep.eval_size = eval.size();
  rep.test_size = test.size();
  rep.epochs = cfg.epochs;

  std::array<Model, Ensemble::kSize> models;
  parallel_for(Ensemble::kSize, workers, [&](std::size_t i) {
    const Model& m = ensemble[i];
    ModelRetrain& r = rep.models[i];
    r.name = m.name();
    r.eval_before = eval.empty() ? 0.0 : accuracy(m, eval);
    r.test_before = test.empty() ? 0.0 : accuracy(m, test);
    TrainConfig tc = cfg;
    tc.seed = derive_seed(cfg.seed, i);
    TrainResult t = sgd_train(m, data, tc);
    r.epoch_losses = t.epoch_losses;
    r.eval_after = eval.empty() ? 0.0 : accuracy(t.model, eval);
    r.test_after = test.empty() ? 0.0 : accuracy(t.model, test);
    r.improvement = relative_improvement(r.eval_before, r.eval_after);
    models[i] = std::move(t.model);
  });
  out.ensemble = Ensemble(std::move(models));
  return out;
}

inline nlohmann::json to_json(const RetrainReport& r) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models)
    models.push_back({{"name", m.name},
                      {"eval_accuracy_before", m.eval_before},
                      {"eval_accuracy_after", m.eval_after},
                      {"test_accuracy_before", m.test_before},
                      {"test_accuracy_after", m.test_after},
                      {"relative_improvement_pct", m.improvement ? nlohmann::json(*m.improvement) : nlohmann::json()},
                      {"epoch_losses", m.epoch_losses}});
  return {{"strategy", r.strategy}, {"train_size", r.train_size}, {"augmented_size", r.augmented_size},
          {"eval_size", r.eval_size}, {"test_size", r.test_size},     {"epochs", r.epochs},
          {"models", models}};
}

inline std::string format_table(std::span<const RetrainReport> reports) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-16s %10s %10s %10s %10s %10s\n", "strategy", "model", "eval_pre", "eval_post",
                "gain_%", "test_pre", "test_post");
  out += buf;
  for (const auto& r : reports)
    for (const auto& m : r.models) {
      char gain[32];
      if (m.improvement)
        std::snprintf(gain, sizeof gain, "%.1f", *m.improvement);
      else
        std::snprintf(gain, sizeof gain, "n/a");
      std::snprintf(buf, sizeof buf, "%-18s %-16s %9.1f%% %9.1f%% %10s %9.1f%% %9.1f%%\n", r.strategy.c_str(),
                    m.name.c_str(), 100 * m.eval_before, 100 * m.eval_after, gain, 100 * m.test_before,
                    100 * m.test_after);
      out += buf;
    }
  return out;
}

struct AugmentExperiment {
  std::vector<RetrainReport> reports;  // corner_cases first, then the requested controls
  std::vector<Ensemble> ensembles;
  std::size_t excluded_from_test = 0;
};

// Retrains the ensemble once on the corner cases and once per control, all with the same
// budget, and scores every strategy on the corner-case set and on the test pool with the
// seed images removed. Control images taken from the pool are removed from the test
// split as well so no strategy is scored on images it trained on.
inline AugmentExperiment augment_experiment(const Ensemble& ensemble, std::span<const Sample> train,
                                            std::span<const Sample> seed_pool, std::span<const CornerCase> corpus,
                                            std::span<const ControlKind> controls, const TrainConfig& cfg,
                                            std::uint64_t control_seed, std::size_t workers = 1) {
  const AugmentedSet corner = build_augmented(corpus, seed_pool);
  if (corner.empty()) throw UsageError("augment-retrain needs a nonempty corpus");
  std::vector<bool> used(seed_pool.size(), false);
  for (const CornerCase& cc : corpus) used[cc.seed_id] = true;

  std::vector<Sample> control_pool;
  std::vector<std::size_t> control_pool_ids;
  for (std::size_t i = 0; i < seed_pool.size(); ++i)
    if (!used[i]) {
      control_pool.push_back(seed_pool[i]);
      control_pool_ids.push_back(i);
    }

  std::vector<std::pair<std::string, AugmentedSet>> strategies{{"corner_cases", corner}};
  for (ControlKind k : controls) {
    Rng rng(derive_seed(control_seed, static_cast<std::uint64_t>(k)));
    if (k == ControlKind::random_original) {
      std::vector<std::size_t> picked;
      strategies.emplace_back(to_string(k), build_control(k, corner.size(), control_pool, rng, {}, &picked));
      for (std::size_t p : picked) used[control_pool_ids[p]] = true;
    } else {
      strategies.emplace_back(to_string(k), build_control(k, corner.size(), train, rng));
    }
  }

  std::vector<Sample> test;
  for (std::size_t i = 0; i < seed_pool.size(); ++i)
    if (!used[i]) test.push_back(seed_pool[i]);
  const auto eval = corner.samples();

  AugmentExperiment ex;
  ex.excluded_from_test = seed_pool.size() - test.size();
  for (auto& [name, set] : strategies) {
    auto o = retrain_and_eval(ensemble, train, set, test, cfg, eval, name, workers);
    ex.reports.push_back(std::move(o.report));
    ex.ensembles.push_back(std::move(o.ensemble));
  }
  return ex;
}

}  // namespace dprobe
