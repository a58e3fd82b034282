// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "dprobe.hpp"
#include "dprobe/cli.hpp"
#include "support.hpp"

using namespace dprobe;
using namespace dprobe::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Result {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

struct Fixture {
  Dataset data;
  Ensemble ensemble;
  double train_seconds = 0.0;
  std::array<double, Ensemble::kSize> test_accuracy{};
  std::size_t workers = 1;
};

std::string trim_separator(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == ';')) s.pop_back();
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dprobe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Coverage trend checks shared by every campaign.
void check_coverage_trends(const CampaignResult& camp, const std::string& name, Result& r, std::string& summary) {
  r.require(camp.coverage.ratio_at(1.0) == 0.0, name + ": coverage at t=1 is not 0");
  double prev = 2.0;
  for (int k = 0; k <= 100; ++k) {
    const double v = camp.coverage.ratio_at(k / 100.0);
    if (v > prev) r.require(false, name + ": coverage rises with t at t=" + fmt("%.2f", k / 100.0));
    prev = v;
  }
  EnsembleCoverage acc = camp.seed_coverage.empty() ? camp.coverage : camp.seed_coverage[0];
  double last = 0.0;
  for (std::size_t i = 0; i < camp.seed_coverage.size(); ++i) {
    acc.merge(camp.seed_coverage[i]);
    if (acc.ratio() < last) r.require(false, name + ": coverage falls after seed " + std::to_string(i));
    last = acc.ratio();
  }
  r.require(acc == camp.coverage, name + ": merged seed maps differ from the campaign map");
  summary += name + " coverage t=0.1 " + fmt("%.2f%%", 100 * camp.coverage.ratio_at(0.1)) + " t=0.5 " +
             fmt("%.2f%%", 100 * camp.coverage.ratio_at(0.5)) + " t=1 " +
             fmt("%.2f%%", 100 * camp.coverage.ratio_at(1.0)) + "; ";
}

Result criterion_gradients() {
  Result r;
  Rng rng(20240601);
  std::size_t nets = 0, redrawn = 0;
  double worst_in = 0.0, worst_param = 0.0;
  while (nets < 25) {
    const Model m = random_small_model(rng);
    std::size_t hidden = 0;
    while (m.spec().layers[hidden].kind != LayerKind::relu) ++hidden;
    const Tensor w = random_tensor({m.classes()}, rng);
    const Tensor u = random_tensor(m.output_shapes()[hidden], rng);
    for (int attempt = 0; attempt < 20; ++attempt) {
      const Tensor x = random_tensor(m.input_shape(), rng, 0.0, 1.0);
      const auto c = check_gradients(m, x, rng.below(m.classes()), w, hidden, u);
      if (!c.smooth) {
        ++redrawn;
        continue;
      }
      worst_in = std::max(worst_in, c.input_error);
      worst_param = std::max(worst_param, c.param_error);
      ++nets;
      break;
    }
  }
  r.require(worst_in < 1e-4, "input gradient error " + fmt("%.2e", worst_in));
  r.require(worst_param < 1e-4, "parameter gradient error " + fmt("%.2e", worst_param));
  r.detail = std::to_string(nets) + " nets, max rel err input " + fmt("%.2e", worst_in) + " params " +
             fmt("%.2e", worst_param) + ", " + std::to_string(redrawn) + " kink points redrawn" +
             (r.pass ? "" : " | " + r.detail);
  return r;
}

Result criterion_objectives() {
  Result r;
  struct F {
    double a, b, c;
    std::size_t j;
    double l1, expected;
  };
  const std::vector<F> fixtures{
      {0.9, 0.8, 0.6, 2, 1.0, 1.1},   {0.9, 0.8, 0.6, 2, 2.5, 0.2},    {0.9, 0.8, 0.6, 0, 1.0, 0.5},
      {0.9, 0.8, 0.6, 1, 2.5, -0.5},  {1.0, 1.0, 1.0, 0, 0.0, 2.0},    {0.0, 0.0, 0.0, 1, 2.5, 0.0},
      {0.5, 0.5, 0.5, 2, 2.0, 0.0},   {0.2, 0.7, 0.1, 2, 3.0, 0.6},    {0.25, 0.25, 1.0, 2, 0.5, 0.0},
      {0.3, 0.6, 0.9, 0, 1.5, 1.05},
  };
  for (const auto& f : fixtures) {
    const std::array<Tensor, 3> p{Tensor::vector({f.a, 1 - f.a}), Tensor::vector({f.b, 1 - f.b}),
                                  Tensor::vector({f.c, 1 - f.c})};
    const double v = obj_differential(p, 0, f.j, f.l1);
    r.require(std::abs(v - f.expected) < 1e-12, "fixture gave " + fmt("%.6f", v));
  }
  r.require(std::abs(obj_joint(1.1, 0.4, 2.0) - 1.9) < 1e-12, "joint fixture 1.1 + 2 * 0.4");
  r.require(std::abs(obj_joint(0.2, 0.25, 2.0) - 0.7) < 1e-12, "joint fixture 0.2 + 2 * 0.25");

  // Identical members: with lambda1 = 2 the two agreeing terms cancel the deviating one.
  const Model m = toy_model(1.0, 0.5, 0.0);
  const Ensemble same({m, m, m});
  Rng rng(3);
  std::size_t emitted = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor x = random_tensor({4, 4, 1}, rng, 0, 1);
    const auto e = detail::evaluate(same, x);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 3; ++j)
        r.require(obj_differential(e.probs, c, j, 2.0) == 0.0, "identical models give a nonzero objective");
    for (double l1 : {0.5, 2.0, 2.5}) {
      GenerationConfig cfg;
      cfg.lambda1 = l1;
      cfg.max_iters = 50;
      EnsembleCoverage cov(same.members(), cfg.threshold);
      emitted += generate_from_seed(same, {x, 0}, static_cast<std::size_t>(i), cfg, &cov).has_value();
    }
  }
  r.require(emitted == 0, std::to_string(emitted) + " corner cases from identical models");
  if (r.pass) r.detail = std::to_string(fixtures.size() + 2) + " fixtures exact, identical models emit nothing";
  return r;
}

Result criterion_ascent() {
  Result r;
  const Ensemble ens = toy_ensemble();
  std::string summary;
  for (double v : {128.0 / 255.0, 0.7, 0.9}) {
    const auto c = brightness_step_check(ens, {Tensor({4, 4, 1}, v), 0}, GenerationConfig{});
    r.require(!c.sweep.empty(), "seed already diverged");
    if (c.sweep.empty()) continue;
    r.require(c.step_value > c.seed_value, "first step lowers the objective");
    r.require((c.step_bias > 0) == (c.sweep_slope > 0), "first step goes downhill on the brightness sweep");
    summary += fmt("seed %.2f: ", v) + fmt("b=%+.4f ", c.step_bias) + fmt("obj %.4f", c.seed_value) +
               fmt(" -> %.4f", c.step_value) + fmt(", sweep slope %+.3f; ", c.sweep_slope);
  }
  r.detail = trim_separator(summary) + (r.pass ? "" : " | " + r.detail);
  return r;
}

Result criterion_transforms() {
  Result r;
  Rng rng(7);
  for (double s : {1e-3, 0.1, 0.5, 1.0, 2.0, 10.0, 1e3})
    r.require(std::abs(gaussian_kernel(s).sum() - 1.0) <= 1e-12, "kernel sum off for sigma " + fmt("%g", s));
  double blur_err = 0.0;
  for (double s : {0.3, 0.8, 1.5, 4.0}) {
    const Tensor img = random_tensor({9, 7, 3}, rng, 0, 1);
    const Tensor got = apply_transform(img, GaussianBlur{s, 3});
    // Direct convolution with the unnormalised weights divided through at the end.
    double w[9], total = 0.0;
    for (int k = 0; k < 9; ++k) total += w[k] = std::exp(-((k / 3 - 1) * (k / 3 - 1) + (k % 3 - 1) * (k % 3 - 1)) / (2 * s * s));
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 7; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int k = 0; k < 9; ++k) {
            const long sy = std::clamp(static_cast<long>(y) + k / 3 - 1, 0L, 8L);
            const long sx = std::clamp(static_cast<long>(x) + k % 3 - 1, 0L, 6L);
            acc += w[k] / total * img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
          }
          blur_err = std::max(blur_err, std::abs(acc - got.at(y, x, c)));
        }
  }
  r.require(blur_err < 1e-14, "blur differs from the convolution oracle by " + fmt("%.2e", blur_err));

  std::size_t identity_fail = 0;
  for (std::size_t C : {1u, 3u}) {
    const Tensor img = quantize8(random_tensor({8, 8, C}, rng, 0, 1));
    Tensor src({4, 4, 4}, 0.5);
    auto mask = std::make_shared<const OverlayMask>(OverlayMask::from_source("m", src, 8, 8, C));
    const std::vector<TransformSpec> neutral{BrightnessContrast{}, Affine{}, GaussianBlur{kMinSigma, 3},
                                             OcclusionRect{0, 0, 2, 2, Tensor({2, 2, C})},
                                             OcclusionDots{3, DotColor::white, {}},
                                             Overlay{mask, 0.0, std::vector<bool>(64, true)}};
    for (const auto& spec : neutral) identity_fail += !(apply_transform(img, spec) == img);
  }
  r.require(identity_fail == 0, std::to_string(identity_fail) + " neutral specs changed the image");

  std::size_t out_of_range = 0;
  const char* names[] = {"light", "contrast", "affine", "blur", "occl_rect", "occl_dots", "overlay:m"};
  for (int i = 0; i < 500; ++i) {
    const std::size_t C = i % 2 ? 3 : 1;
    const Tensor img = random_tensor({8, 8, C}, rng, 0, 1);
    Constraint c = parse_constraint(names[i % 7]);
    c.mask = std::make_shared<const OverlayMask>(
        OverlayMask::from_source("m", random_tensor({5, 5, 4}, rng, 0, 1), 8, 8, C));
    const Tensor out =
        apply_transform(img, constrain_gradient(random_tensor({8, 8, C}, rng, -30, 30), img, c, rng.uniform(0.01, 3)));
    out_of_range += out.min() < 0.0 || out.max() > 1.0;
  }
  r.require(out_of_range == 0, std::to_string(out_of_range) + " outputs left [0, 1]");
  if (r.pass) r.detail = "blur max diff " + fmt("%.1e", blur_err) + ", 12 neutral specs exact, 500 outputs in range";
  return r;
}

Fixture make_fixture() {
  Fixture f;
  f.workers = default_workers();
  f.data = load_dataset(DatasetSpec{});
  const auto t0 = Clock::now();
  EnsembleConfig cfg;
  cfg.workers = f.workers;
  const TrainedEnsemble te = train_ensemble(f.data.train, f.data.test, cfg);
  f.train_seconds = seconds_since(t0);
  f.ensemble = te.ensemble;
  for (std::size_t i = 0; i < Ensemble::kSize; ++i) f.test_accuracy[i] = te.report[i].test_accuracy;
  return f;
}

SeedSet seeds_of(const Fixture& f, std::size_t n, std::vector<Sample>& seeds, std::vector<std::size_t>& ids) {
  ids = detail::select_seed_ids(f.data.test.size(), n, 1);
  seeds.clear();
  for (std::size_t id : ids) seeds.push_back(f.data.test[id]);
  return {seeds, ids};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Result>> results;
  std::vector<double> times;
  auto record = [&](const std::string& name, const std::function<Result()>& fn) {
    const auto t0 = Clock::now();
    Result r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    const double s = seconds_since(t0);
    std::printf("%s %s (%.1fs): %s\n", name.c_str(), r.pass ? "PASS" : "FAIL", s, r.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(name, r);
    times.push_back(s);
  };

  record("criterion 1 gradient oracle", criterion_gradients);
  record("criterion 3 objective arithmetic", criterion_objectives);
  record("criterion 4 ascent sanity", criterion_ascent);
  record("criterion 7 transform correctness", criterion_transforms);

  Fixture fx;
  CampaignResult conversion_run;
  record("criterion 5 conversion", [&] {
    Result r;
    fx = make_fixture();
    std::vector<Sample> seeds;
    std::vector<std::size_t> ids;
    const SeedSet s = seeds_of(fx, 100, seeds, ids);
    const auto t0 = Clock::now();
    conversion_run = run_campaign(fx.ensemble, s.seeds, s.ids, GenerationConfig{}, fx.workers);
    const double gen = seconds_since(t0);
    const double conv = conversion_run.stats.conversion.value_or(0.0);
    std::size_t pre = 0;
    for (const auto& cc : conversion_run.corpus) pre += cc.iterations == 0;
    r.require(conv >= 0.5, "conversion " + fmt("%.1f%%", 100 * conv) + " below 50%");
    r.require(fx.train_seconds + gen < 600, "training plus campaign took " + fmt("%.0fs", fx.train_seconds + gen));
    r.detail = fmt("conversion %.1f%%", 100 * conv) + " (" + std::to_string(conversion_run.corpus.size()) +
               "/100, " + std::to_string(pre) + " already diverged), test acc " +
               fmt("%.1f/", 100 * fx.test_accuracy[0]) + fmt("%.1f/", 100 * fx.test_accuracy[1]) +
               fmt("%.1f%%", 100 * fx.test_accuracy[2]) + ", train " + fmt("%.0fs", fx.train_seconds) +
               ", campaign " + fmt("%.0fs", gen) + " with " + std::to_string(fx.workers) + " worker(s)" +
               (r.pass ? "" : " | " + r.detail);
    return r;
  });

  record("criterion 2 coverage trends", [&] {
    Result r;
    std::string summary;
    check_coverage_trends(conversion_run, "occl_rect campaign", r, summary);
    std::vector<Sample> seeds;
    std::vector<std::size_t> ids;
    const SeedSet s = seeds_of(fx, 30, seeds, ids);
    GenerationConfig cfg;
    cfg.constraint = parse_constraint("light");
    const auto sweep_t = sweep_threshold(fx.ensemble, s, cfg, {0.001, 0.01, 0.05, 0.1, 0.5, 0.99, 1.0}, fx.workers);
    for (std::size_t i = 1; i < sweep_t.cells.size(); ++i)
      r.require(*sweep_t.cells[i] <= *sweep_t.cells[i - 1], "threshold sweep rises");
    r.require(*sweep_t.cells.back() == 0.0, "threshold sweep at t=1 is " + fmt("%.4f", *sweep_t.cells.back()));
    const auto sweep_n = sweep_seeds(fx.ensemble, s, cfg, {0, 10, 20, 30}, fx.workers);
    for (std::size_t i = 1; i < sweep_n.cells.size(); ++i)
      r.require(*sweep_n.cells[i] >= *sweep_n.cells[i - 1], "seed sweep falls");
    summary += "light sweeps t=1 " + fmt("%.2f%%", *sweep_t.cells.back()) + ", seeds 10/20/30 " +
               fmt("%.2f/", *sweep_n.cells[1]) + fmt("%.2f/", *sweep_n.cells[2]) + fmt("%.2f%%", *sweep_n.cells[3]);
    r.detail = summary + (r.pass ? "" : " | " + r.detail);
    return r;
  });

  record("criterion 6 retraining improvement", [&] {
    Result r;
    std::vector<Sample> seeds;
    std::vector<std::size_t> ids;
    const SeedSet s = seeds_of(fx, 120, seeds, ids);
    GenerationConfig cfg;
    cfg.constraint = parse_constraint("occl_dots");
    cfg.policy = DeviatingPolicy::round_robin;
    const auto camp = run_campaign(fx.ensemble, s.seeds, s.ids, cfg, fx.workers);
    r.require(camp.corpus.size() >= 100, "corpus has only " + std::to_string(camp.corpus.size()) + " cases");
    TrainConfig tc;
    tc.epochs = 3;
    tc.learning_rate = 0.01;
    const std::vector<ControlKind> controls{ControlKind::random_original, ControlKind::random_transform};
    const auto ex = augment_experiment(fx.ensemble, fx.data.train, fx.data.test, camp.corpus, controls, tc, 1,
                                       fx.workers);
    const auto& cc = ex.reports[0];
    std::string summary = std::to_string(camp.corpus.size()) + " cases; ";
    for (std::size_t i = 0; i < Ensemble::kSize; ++i) {
      const auto& m = cc.models[i];
      const double gain = m.improvement.value_or(0.0);
      r.require(m.improvement && gain >= 25.0, m.name + " gains only " + fmt("%.1f%%", gain));
      for (std::size_t k = 1; k < ex.reports.size(); ++k)
        r.require(m.eval_after > ex.reports[k].models[i].eval_after,
                  m.name + " does not beat " + ex.reports[k].strategy);
      const double drop = 100 * (m.test_before - m.test_after);
      r.require(drop <= 2.0, m.name + " loses " + fmt("%.2f test points", drop));
      summary += m.name + fmt(" %.1f", 100 * m.eval_before) + fmt("->%.1f%%", 100 * m.eval_after) +
                 fmt(" (+%.1f%%", gain) + fmt(", controls %.1f", 100 * ex.reports[1].models[i].eval_after) +
                 fmt("/%.1f%%", 100 * ex.reports[2].models[i].eval_after) + fmt(", test %+.2f); ", -drop);
    }
    std::printf("%s", format_table(ex.reports).c_str());
    r.detail = trim_separator(summary) + (r.pass ? "" : " | " + r.detail);
    return r;
  });

  record("criterion 8 replay determinism", [&] {
    Result r;
    const auto root = temp_dir("acceptance_replay");
    save_weights(fx.ensemble[0], root / "weights" / "model_0_lenet1.dprb");
    save_weights(fx.ensemble[1], root / "weights" / "model_1_lenet4.dprb");
    save_weights(fx.ensemble[2], root / "weights" / "model_2_lenet5.dprb");
    // Generation always runs threaded and the replay single-threaded, whatever the core count.
    const std::string workers = std::to_string(std::max<std::size_t>(fx.workers, 4));
    std::size_t cases = 0, files = 0;
    for (const char* constraint : {"occl_rect", "light"}) {
      const auto a = root / (std::string(constraint) + "_a"), b = root / (std::string(constraint) + "_b");
      const int rc = run_cli({"generate", "--weights", (root / "weights").string(), "--seeds", "40", "--constraint",
                              constraint, "--workers", workers, "--out", a.string()});
      r.require(rc == 0, std::string("generate exited ") + std::to_string(rc));
      const int rc2 = run_cli({"--manifest", (a / "manifest.json").string(), "--workers", "1", "--out", b.string()});
      r.require(rc2 == 0, std::string("replay exited ") + std::to_string(rc2));
      if (rc || rc2) continue;
      for (const auto& e : std::filesystem::directory_iterator(a / "corpus")) {
        ++files;
        r.require(read_all(e.path()) == read_all(b / "corpus" / e.path().filename()),
                  e.path().filename().string() + " differs on replay");
      }
      for (const auto& cc : read_corpus(b / "corpus")) {
        ++cases;
        for (std::size_t i = 0; i < Ensemble::kSize; ++i)
          r.require(predict_label(fx.ensemble[i], cc.image).label == cc.labels[i],
                    "case " + std::to_string(cc.seed_id) + " replays to a different label");
      }
    }
    r.detail = std::to_string(files) + " corpus files byte-identical between " + workers + " and 1 worker(s), " + std::to_string(cases) +
               " cases replay to their labels" + (r.pass ? "" : " | " + r.detail);
    return r;
  });

  std::size_t passed = 0;
  for (const auto& [name, r] : results) passed += r.pass;
  double total = 0.0;
  for (double t : times) total += t;
  std::printf("%zu/%zu criteria passed in %.0fs\n", passed, results.size(), total);
  return passed == results.size() ? 0 : 1;
}
