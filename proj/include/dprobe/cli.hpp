#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dprobe/augmentation.hpp"
#include "dprobe/corpus_io.hpp"
#include "dprobe/coverage.hpp"
#include "dprobe/dataset.hpp"
#include "dprobe/error.hpp"
#include "dprobe/generator.hpp"
#include "dprobe/image_io.hpp"
#include "dprobe/manifest.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/sweep.hpp"
#include "dprobe/weights_io.hpp"

namespace dprobe {

// Every option of every subcommand. The config file and the manifest use the same
// keys as the long flags, without the leading dashes.
struct RunConfig {
  std::string dataset = "digits";
  std::string format = "builtin_synthetic";
  std::size_t synthetic_train = 3000;
  std::size_t synthetic_test = 1000;
  std::uint64_t data_seed = 1;
  std::vector<std::string> models{"lenet1", "lenet4", "lenet5"};
  std::size_t epochs = 8;
  double lr = 0.03;
  std::size_t batch_size = 32;

  double lambda1 = 2.5;
  double lambda2 = 2.0;
  double step = 10.0;  // grey levels of the 0-255 scale per unit of normalised gradient
  double threshold = 0.5;
  std::size_t max_iters = 200;
  std::string constraint = "occl_rect";
  std::string policy = "least_confident";
  std::size_t coverage_model = 0;
  std::string mask_dir = "assets/masks";
  std::size_t seeds = 100;
  std::size_t workers = 1;
  std::uint64_t rng_seed = 1;
  std::string out = "out";

  std::string weights;
  std::string corpus;
  std::string control = "both";
  std::size_t retrain_epochs = 3;
  double retrain_lr = 0.01;

  std::vector<double> lambda1_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  std::vector<double> lambda2_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  std::size_t repetitions = 10;
  std::vector<double> t_grid{0.001, 0.01, 0.05, 0.1, 0.5, 0.99, 1.0};
  std::vector<std::size_t> seed_grid{10, 20, 30, 100};
};

namespace detail {

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += format_number(v[i]);
    else if constexpr (std::is_arithmetic_v<T>)
      s += std::to_string(v[i]);
    else
      s += v[i];
  }
  return s;
}

inline std::string config_text(const RunConfig& c) {
  std::ostringstream o;
  auto kv = [&](const char* k, const std::string& v) { o << k << "=" << v << "\n"; };
  kv("dataset", "\"" + c.dataset + "\"");
  kv("format", c.format);
  kv("synthetic-train", std::to_string(c.synthetic_train));
  kv("synthetic-test", std::to_string(c.synthetic_test));
  kv("data-seed", std::to_string(c.data_seed));
  kv("models", join(c.models));
  kv("epochs", std::to_string(c.epochs));
  kv("lr", format_number(c.lr));
  kv("batch-size", std::to_string(c.batch_size));
  kv("lambda1", format_number(c.lambda1));
  kv("lambda2", format_number(c.lambda2));
  kv("step", format_number(c.step));
  kv("threshold", format_number(c.threshold));
  kv("max-iters", std::to_string(c.max_iters));
  kv("constraint", "\"" + c.constraint + "\"");
  kv("policy", c.policy);
  kv("coverage-model", std::to_string(c.coverage_model));
  kv("mask-dir", "\"" + c.mask_dir + "\"");
  kv("seeds", std::to_string(c.seeds));
  kv("rng-seed", std::to_string(c.rng_seed));
  if (!c.weights.empty()) kv("weights", "\"" + c.weights + "\"");
  if (!c.corpus.empty()) kv("corpus", "\"" + c.corpus + "\"");
  kv("control", c.control);
  kv("retrain-epochs", std::to_string(c.retrain_epochs));
  kv("retrain-lr", format_number(c.retrain_lr));
  kv("lambda1-grid", join(c.lambda1_grid));
  kv("lambda2-grid", join(c.lambda2_grid));
  kv("repetitions", std::to_string(c.repetitions));
  kv("t-grid", join(c.t_grid));
  kv("seed-grid", join(c.seed_grid));
  return o.str();
}

inline void add_options(CLI::App& app, RunConfig& c) {
  app.add_option("--dataset", c.dataset, "dataset directory, or digits|signs for the builtin generator")
      ->capture_default_str();
  app.add_option("--format", c.format, "idx | image_dir_csv | builtin_synthetic")->capture_default_str();
  app.add_option("--synthetic-train", c.synthetic_train, "builtin dataset: training images")->capture_default_str();
  app.add_option("--synthetic-test", c.synthetic_test, "builtin dataset: test images")->capture_default_str();
  app.add_option("--data-seed", c.data_seed, "builtin dataset: generator seed")->capture_default_str();
  app.add_option("--models", c.models, "three variants out of lenet1, lenet4, lenet5")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  app.add_option("--epochs", c.epochs, "training epochs")->capture_default_str();
  app.add_option("--lr", c.lr, "training learning rate")->capture_default_str();
  app.add_option("--batch-size", c.batch_size, "training minibatch size")->capture_default_str();
  app.add_option("--lambda1", c.lambda1, "weight of the deviating model's confidence")->capture_default_str();
  app.add_option("--lambda2", c.lambda2, "weight of the neuron-coverage term")->capture_default_str();
  app.add_option("--step", c.step, "ascent step in grey levels (0-255 scale)")->capture_default_str();
  app.add_option("--threshold", c.threshold, "neuron activation threshold t in [0, 1]")->capture_default_str();
  app.add_option("--max-iters", c.max_iters, "ascent iterations per seed")->capture_default_str();
  app.add_option("--constraint", c.constraint, "light|contrast|affine|blur|occl_rect|occl_dots|overlay:<mask>")
      ->capture_default_str();
  app.add_option("--policy", c.policy, "deviating model: least_confident | round_robin")->capture_default_str();
  app.add_option("--coverage-model", c.coverage_model, "ensemble member the coverage term targets")
      ->capture_default_str();
  app.add_option("--mask-dir", c.mask_dir, "directory searched for overlay:<mask>.png")->capture_default_str();
  app.add_option("--seeds", c.seeds, "seed images drawn from the test split")->capture_default_str();
  app.add_option("--workers", c.workers, "worker threads")->capture_default_str();
  app.add_option("--rng-seed", c.rng_seed, "seed for seed selection, neuron targets and training order")
      ->capture_default_str();
  app.add_option("--out", c.out, "output directory")->capture_default_str();
  app.add_option("--weights", c.weights, "directory of trained model_<i>_<variant>.dprb files");
  app.add_option("--corpus", c.corpus, "corpus directory for augment-retrain");
  app.add_option("--control", c.control, "none | random_original | random_transform | both")->capture_default_str();
  app.add_option("--retrain-epochs", c.retrain_epochs, "epochs of augmenting training")->capture_default_str();
  app.add_option("--retrain-lr", c.retrain_lr, "learning rate of augmenting training")->capture_default_str();
  app.add_option("--lambda1-grid", c.lambda1_grid, "sweep-lambda columns")->delimiter(',')->capture_default_str();
  app.add_option("--lambda2-grid", c.lambda2_grid, "sweep-lambda rows")->delimiter(',')->capture_default_str();
  app.add_option("--repetitions", c.repetitions, "sweep-lambda repetitions per cell")->capture_default_str();
  app.add_option("--t-grid", c.t_grid, "sweep-threshold thresholds")->delimiter(',')->capture_default_str();
  app.add_option("--seed-grid", c.seed_grid, "sweep-seeds seed counts")->delimiter(',')->capture_default_str();
}

struct Context {
  RunConfig cfg;
  std::string command;
  std::filesystem::path out;
  Manifest manifest;
  std::ostream& log;
};

inline void record_input(Context& ctx, const std::filesystem::path& p) {
  const nlohmann::json hashes = hash_inputs(p);
  for (const auto& [k, v] : hashes.items()) ctx.manifest.inputs[k] = v;
}

inline Dataset dataset_for(Context& ctx) {
  DatasetSpec spec;
  spec.path = ctx.cfg.dataset;
  spec.format = parse_format(ctx.cfg.format);
  spec.synthetic_train = ctx.cfg.synthetic_train;
  spec.synthetic_test = ctx.cfg.synthetic_test;
  spec.synthetic_seed = ctx.cfg.data_seed;
  if (spec.format != DatasetFormat::builtin_synthetic) {
    if (!std::filesystem::exists(spec.path)) throw LoadError(LoadErrorKind::missing_file, spec.path);
    record_input(ctx, spec.path);
  }
  Dataset d = load_dataset(spec);
  ctx.log << "dataset: " << d.train.size() << " train, " << d.test.size() << " test, images "
          << shape_str(d.train[0].image.shape()) << "\n";
  return d;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.learning_rate = c.lr;
  t.batch_size = c.batch_size;
  t.seed = c.rng_seed;
  return t;
}

inline std::filesystem::path weight_file(const std::filesystem::path& dir, std::size_t i, const std::string& variant) {
  return dir / ("model_" + std::to_string(i) + "_" + variant + ".dprb");
}

inline Ensemble load_ensemble(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError(LoadErrorKind::missing_file, dir.string());
  std::array<Model, Ensemble::kSize> models;
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) {
    const std::regex pat("model_" + std::to_string(i) + "_.*\\.dprb");
    std::vector<std::filesystem::path> hits;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (std::regex_match(e.path().filename().string(), pat)) hits.push_back(e.path());
    if (hits.size() != 1)
      throw LoadError(LoadErrorKind::count_mismatch,
                      dir.string() + ": expected one model_" + std::to_string(i) + "_*.dprb, found " +
                          std::to_string(hits.size()));
    models[i] = load_weights(hits[0]);
  }
  return Ensemble(std::move(models));
}

inline void save_ensemble(const Ensemble& ens, const std::array<Variant, Ensemble::kSize>& variants,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) save_weights(ens[i], weight_file(dir, i, to_string(variants[i])));
}

inline std::array<Variant, Ensemble::kSize> variants_of(const RunConfig& c) {
  if (c.models.size() != Ensemble::kSize) throw UsageError("--models needs exactly three variants");
  return {parse_variant(c.models[0]), parse_variant(c.models[1]), parse_variant(c.models[2])};
}

inline TrainedEnsemble train_and_save(Context& ctx, const Dataset& d) {
  EnsembleConfig ec;
  ec.variants = variants_of(ctx.cfg);
  ec.train = train_config(ctx.cfg);
  ec.seed = ctx.cfg.rng_seed;
  ec.workers = ctx.cfg.workers;
  ctx.log << "training " << join(ctx.cfg.models) << " for " << ec.train.epochs << " epochs\n";
  TrainedEnsemble te = train_ensemble(d.train, d.test, ec);
  save_ensemble(te.ensemble, ec.variants, ctx.out / "weights");
  for (const auto& r : te.report)
    ctx.log << "  " << r.name << ": train " << 100 * r.train_accuracy << "%, test " << 100 * r.test_accuracy << "%\n";
  return te;
}

// Loads --weights, or trains (and saves) an ensemble when none is given.
inline Ensemble ensemble_for(Context& ctx, const Dataset& d) {
  Ensemble ens;
  if (!ctx.cfg.weights.empty()) {
    record_input(ctx, ctx.cfg.weights);
    ens = load_ensemble(ctx.cfg.weights);
  } else {
    ens = train_and_save(ctx, d).ensemble;
  }
  if (ens.input_shape() != d.test[0].image.shape())
    throw ShapeError("models expect " + shape_str(ens.input_shape()) + " but the dataset has " +
                     shape_str(d.test[0].image.shape()));
  return ens;
}

inline GenerationConfig generation_config(Context& ctx, const Shape& image_shape) {
  const RunConfig& c = ctx.cfg;
  GenerationConfig g;
  g.lambda1 = c.lambda1;
  g.lambda2 = c.lambda2;
  g.step = c.step / 255.0;
  g.threshold = c.threshold;
  g.max_iters = c.max_iters;
  g.constraint = parse_constraint(c.constraint);
  g.policy = parse_policy(c.policy);
  g.coverage_model = c.coverage_model;
  g.rng_seed = c.rng_seed;
  if (g.constraint.family == Family::overlay) {
    std::filesystem::path p = g.constraint.mask_name;
    if (p.extension() != ".png") p = std::filesystem::path(c.mask_dir) / (g.constraint.mask_name + ".png");
    record_input(ctx, p);
    g.constraint.mask = std::make_shared<OverlayMask>(
        OverlayMask::from_source(g.constraint.mask_name, read_png(p), image_shape[0], image_shape[1], image_shape[2]));
  }
  g.validate();
  return g;
}

// Seeds are a seeded random selection of test-split indices; the index is the seed id.
inline std::vector<std::size_t> select_seed_ids(std::size_t pool, std::size_t n, std::uint64_t rng_seed) {
  if (n > pool)
    throw UsageError("asked for " + std::to_string(n) + " seeds but the test split has " + std::to_string(pool));
  std::vector<std::size_t> ids(pool);
  for (std::size_t i = 0; i < pool; ++i) ids[i] = i;
  Rng rng(derive_seed(rng_seed, 0x5eed));
  rng.shuffle(ids);
  ids.resize(n);
  return ids;
}

struct SeedPick {
  std::vector<Sample> seeds;
  std::vector<std::size_t> ids;
};

inline SeedPick pick_seeds(const Dataset& d, std::size_t n, std::uint64_t rng_seed) {
  SeedPick p;
  p.ids = select_seed_ids(d.test.size(), n, rng_seed);
  for (std::size_t id : p.ids) p.seeds.push_back(d.test[id]);
  return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  write_file_bytes(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline void write_sweep(Context& ctx, const SweepReport& r, const std::string& stem) {
  write_text(ctx.out / "reports" / (stem + ".csv"), to_csv(r));
  write_json(ctx.out / "reports" / (stem + ".json"), to_json(r));
  std::cout << format_table(r);
}

inline int cmd_train(Context& ctx) {
  const Dataset d = dataset_for(ctx);
  const TrainedEnsemble te = train_and_save(ctx, d);
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < Ensemble::kSize; ++i)
    models.push_back({{"name", te.report[i].name},
                      {"file", weight_file("weights", i, te.report[i].name).generic_string()},
                      {"train_accuracy", te.report[i].train_accuracy},
                      {"test_accuracy", te.report[i].test_accuracy},
                      {"epoch_losses", te.report[i].epoch_losses}});
  write_json(ctx.out / "reports" / "train.json", {{"models", models}});
  for (const auto& r : te.report)
    std::printf("%-8s train %6.2f%%  test %6.2f%%\n", r.name.c_str(), 100 * r.train_accuracy, 100 * r.test_accuracy);
  return 0;
}

inline int cmd_generate(Context& ctx) {
  const Dataset d = dataset_for(ctx);
  const Ensemble ens = ensemble_for(ctx, d);
  const GenerationConfig g = generation_config(ctx, ens.input_shape());
  const SeedPick s = pick_seeds(d, ctx.cfg.seeds, ctx.cfg.rng_seed);
  ctx.log << "generating from " << s.seeds.size() << " seeds with " << g.constraint.name() << "\n";
  const CampaignResult r = run_campaign(ens, s.seeds, s.ids, g, ctx.cfg.workers);
  write_corpus(ctx.out / "corpus", r.corpus);
  write_json(ctx.out / "reports" / "coverage.json", to_json(r.coverage));

  nlohmann::json per_seed = nlohmann::json::array();
  std::string csv = "seed_id,iterations,diverged,first_divergence_ms\n";
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    const bool hit = r.stats.first_divergence_ms[i].has_value();
    per_seed.push_back({{"seed_id", s.ids[i]},
                        {"iterations", hit ? nlohmann::json(r.stats.iterations[i]) : nlohmann::json()},
                        {"first_divergence_ms", hit ? nlohmann::json(*r.stats.first_divergence_ms[i]) : nlohmann::json()}});
    csv += std::to_string(s.ids[i]) + "," + (hit ? std::to_string(r.stats.iterations[i]) : "") + "," +
           (hit ? "1" : "0") + "," + (hit ? format_number(*r.stats.first_divergence_ms[i]) : "") + "\n";
  }
  write_json(ctx.out / "reports" / "campaign.json",
             {{"seeds", r.stats.seeds},
              {"corner_cases", r.stats.corner_cases},
              {"conversion", r.stats.conversion ? nlohmann::json(*r.stats.conversion) : nlohmann::json()},
              {"coverage", r.stats.coverage},
              {"constraint", g.constraint.name()},
              {"per_seed", per_seed}});
  write_text(ctx.out / "reports" / "campaign.csv", csv);
  ctx.manifest.outputs = hash_inputs(ctx.out / "corpus");
  char conv[16] = "n/a";
  if (r.stats.conversion) std::snprintf(conv, sizeof conv, "%.1f%%", 100 * *r.stats.conversion);
  std::printf("seeds %zu  corner cases %zu  conversion %s  coverage %.2f%%\n", r.stats.seeds, r.stats.corner_cases, conv,
              100 * r.stats.coverage);
  return 0;
}

inline int cmd_sweep_lambda(Context& ctx) {
  const Dataset d = dataset_for(ctx);
  const Ensemble ens = ensemble_for(ctx, d);
  const GenerationConfig g = generation_config(ctx, ens.input_shape());
  const SeedPick s = pick_seeds(d, ctx.cfg.seeds, ctx.cfg.rng_seed);
  write_sweep(ctx,
              sweep_lambda(ens, {s.seeds, s.ids}, g, ctx.cfg.lambda1_grid, ctx.cfg.lambda2_grid, ctx.cfg.repetitions,
                           ctx.cfg.workers),
              "sweep_lambda");
  return 0;
}

inline int cmd_sweep_threshold(Context& ctx) {
  const Dataset d = dataset_for(ctx);
  const Ensemble ens = ensemble_for(ctx, d);
  const GenerationConfig g = generation_config(ctx, ens.input_shape());
  const SeedPick s = pick_seeds(d, ctx.cfg.seeds, ctx.cfg.rng_seed);
  write_sweep(ctx, sweep_threshold(ens, {s.seeds, s.ids}, g, ctx.cfg.t_grid, ctx.cfg.workers), "sweep_threshold");
  return 0;
}

inline int cmd_sweep_seeds(Context& ctx) {
  const Dataset d = dataset_for(ctx);
  const Ensemble ens = ensemble_for(ctx, d);
  const GenerationConfig g = generation_config(ctx, ens.input_shape());
  if (ctx.cfg.seed_grid.empty()) throw UsageError("sweep-seeds needs a nonempty --seed-grid");
  const std::size_t most = *std::max_element(ctx.cfg.seed_grid.begin(), ctx.cfg.seed_grid.end());
  const SeedPick s = pick_seeds(d, most, ctx.cfg.rng_seed);
  std::vector<std::string> warnings;
  const SweepReport r = sweep_seeds(ens, {s.seeds, s.ids}, g, ctx.cfg.seed_grid, ctx.cfg.workers, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  write_sweep(ctx, r, "sweep_seeds");
  return 0;
}

inline std::vector<ControlKind> controls_of(const std::string& s) {
  if (s == "none") return {};
  if (s == "random_original") return {ControlKind::random_original};
  if (s == "random_transform") return {ControlKind::random_transform};
  if (s == "both") return {ControlKind::random_original, ControlKind::random_transform};
  throw UsageError("unknown --control '" + s + "' (expected none, random_original, random_transform or both)");
}

inline int cmd_augment_retrain(Context& ctx) {
  if (ctx.cfg.corpus.empty()) throw UsageError("augment-retrain needs --corpus");
  const auto controls = controls_of(ctx.cfg.control);
  const Dataset d = dataset_for(ctx);
  const Ensemble ens = ensemble_for(ctx, d);
  record_input(ctx, ctx.cfg.corpus);
  const auto corpus = read_corpus(ctx.cfg.corpus);
  ctx.log << "retraining on " << corpus.size() << " corner cases\n";
  TrainConfig tc = train_config(ctx.cfg);
  tc.epochs = ctx.cfg.retrain_epochs;
  tc.learning_rate = ctx.cfg.retrain_lr;
  const AugmentExperiment ex =
      augment_experiment(ens, d.train, d.test, corpus, controls, tc, ctx.cfg.rng_seed, ctx.cfg.workers);
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : ex.reports) reports.push_back(to_json(r));
  const std::string table = format_table(ex.reports);
  write_json(ctx.out / "reports" / "retrain.json",
             {{"excluded_from_test", ex.excluded_from_test}, {"strategies", reports}});
  write_text(ctx.out / "reports" / "retrain.txt", table);
  save_ensemble(ex.ensembles.front(), variants_of(ctx.cfg), ctx.out / "weights_retrained");
  std::cout << table;
  return 0;
}

// Prints every report found under <out>/reports.
inline int cmd_report(Context& ctx) {
  const auto dir = ctx.out / "reports";
  if (!std::filesystem::is_directory(dir)) throw LoadError(LoadErrorKind::missing_file, dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto bytes = read_file_bytes(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(LoadErrorKind::corrupt, f.string() + ": " + e.what());
    }
    std::cout << "== " << f.filename().string() << "\n";
    if (j.contains("sweep")) {
      std::cout << format_table(sweep_from_json(j));
    } else if (j.contains("strategies")) {
      const auto t = read_file_bytes(dir / "retrain.txt");
      std::cout << std::string(t.begin(), t.end());
    } else if (j.contains("per_seed")) {
      std::cout << "seeds " << j["seeds"] << ", corner cases " << j["corner_cases"] << ", conversion "
                << j["conversion"] << ", coverage " << j["coverage"] << "\n";
    } else if (j.contains("total_neurons")) {
      std::cout << "neurons " << j["total_neurons"] << ", activated " << j["activated"] << ", ratio " << j["ratio"]
                << " at t=" << j["threshold"] << "\n";
    } else {
      std::cout << j.dump(2) << "\n";
    }
  }
  return 0;
}

}  // namespace detail

// Returns the process exit code: 0 success, 1 usage error (help printed), 2 runtime failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& log = std::cerr) {
  RunConfig cfg;
  CLI::App app{"Differential, coverage-guided corner-case generation for small image classifiers", "dprobe"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.allow_config_extras(false);
  app.set_config("--config", "", "flat key=value file; flags win over it");
  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "replay the options recorded in a manifest.json");
  detail::add_options(app, cfg);
  const std::vector<std::pair<const char*, const char*>> commands{
      {"train", "train the three-model ensemble"},
      {"generate", "run a generation campaign and write the corpus"},
      {"sweep-lambda", "runtime to first divergence over a lambda1 x lambda2 grid"},
      {"sweep-threshold", "coverage as a function of the activation threshold"},
      {"sweep-seeds", "coverage as a function of the number of seeds"},
      {"augment-retrain", "retrain on a corpus and compare against control augmentations"},
      {"report", "print the reports of an output directory"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  if (argc <= 1) {
    std::cout << app.help();
    return 1;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  // A manifest becomes a config file; flags on the command line still win.
  std::filesystem::path replay_config;
  for (std::size_t i = 0; i + 1 < args.size(); ++i)
    if (args[i] == "--manifest") {
      try {
        const Manifest m = read_manifest(args[i + 1]);
        if (std::find(args.begin(), args.end(), "--config") != args.end()) {
          std::cerr << "error: --manifest and --config are mutually exclusive\n";
          return 1;
        }
        if (std::find(args.begin(), args.end(), m.command) == args.end()) args.insert(args.begin(), m.command);
        replay_config = std::filesystem::temp_directory_path() /
                        ("dprobe_manifest_" +
                         std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()) + ".cfg");
        detail::write_text(replay_config, m.config);
        args.push_back("--config");
        args.push_back(replay_config.string());
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      break;
    }

  struct RemoveOnExit {
    std::filesystem::path p;
    ~RemoveOnExit() {
      std::error_code ec;
      if (!p.empty()) std::filesystem::remove(p, ec);
    }
  } cleanup{replay_config};

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.get_formatter()->make_help(&app, "", CLI::AppFormatMode::Normal);
    return 1;
  }

  detail::Context ctx{cfg, app.get_subcommands().front()->get_name(), cfg.out, {}, log};
  ctx.manifest.command = ctx.command;
  ctx.manifest.config = detail::config_text(cfg);
  try {
    std::filesystem::create_directories(ctx.out);
    int rc = 0;
    if (ctx.command == "train") rc = detail::cmd_train(ctx);
    else if (ctx.command == "generate") rc = detail::cmd_generate(ctx);
    else if (ctx.command == "sweep-lambda") rc = detail::cmd_sweep_lambda(ctx);
    else if (ctx.command == "sweep-threshold") rc = detail::cmd_sweep_threshold(ctx);
    else if (ctx.command == "sweep-seeds") rc = detail::cmd_sweep_seeds(ctx);
    else if (ctx.command == "augment-retrain") rc = detail::cmd_augment_retrain(ctx);
    else if (ctx.command == "report") rc = detail::cmd_report(ctx);
    // report only reads; its manifest would overwrite the run it is describing
    if (ctx.command != "report") write_manifest(ctx.out / "manifest.json", ctx.manifest);
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dprobe
