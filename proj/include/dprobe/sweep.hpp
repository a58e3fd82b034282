#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprobe/coverage.hpp"
#include "dprobe/error.hpp"
#include "dprobe/generator.hpp"
#include "dprobe/model_zoo.hpp"
#include "dprobe/parallel.hpp"

namespace dprobe {

// Shortest text that parses back to exactly v.
inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct SweepAxis {
  std::string name;
  std::vector<std::string> labels;
  friend bool operator==(const SweepAxis&, const SweepAxis&) = default;
};

// A rows x cols grid of measurements. A cell without a value failed (for runtime
// sweeps: no seed diverged within the budget).
struct SweepReport {
  std::string sweep;
  std::string unit;
  std::size_t repetitions = 1;
  std::string aggregation;
  bool highlight_minima = false;
  SweepAxis rows;
  SweepAxis cols;
  std::vector<std::optional<double>> cells;  // row-major
  std::vector<std::string> notes;

  std::optional<double>& at(std::size_t r, std::size_t c) { return cells.at(r * cols.labels.size() + c); }
  const std::optional<double>& at(std::size_t r, std::size_t c) const { return cells.at(r * cols.labels.size() + c); }

  // Column of each row's smallest filled cell; none for rows with fewer than two
  // filled cells or when highlighting is off.
  std::vector<std::optional<std::size_t>> row_minima() const {
    std::vector<std::optional<std::size_t>> out(rows.labels.size());
    if (!highlight_minima) return out;
    for (std::size_t r = 0; r < rows.labels.size(); ++r) {
      std::size_t filled = 0;
      for (std::size_t c = 0; c < cols.labels.size(); ++c)
        if (at(r, c)) {
          ++filled;
          if (!out[r] || *at(r, c) < *at(r, *out[r])) out[r] = c;
        }
      if (filled < 2) out[r].reset();
    }
    return out;
  }

  std::vector<std::optional<std::size_t>> col_minima() const {
    std::vector<std::optional<std::size_t>> out(cols.labels.size());
    if (!highlight_minima) return out;
    for (std::size_t c = 0; c < cols.labels.size(); ++c) {
      std::size_t filled = 0;
      for (std::size_t r = 0; r < rows.labels.size(); ++r)
        if (at(r, c)) {
          ++filled;
          if (!out[c] || *at(r, c) < *at(*out[c], c)) out[c] = r;
        }
      if (filled < 2) out[c].reset();
    }
    return out;
  }

  friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

inline nlohmann::json to_json(const SweepReport& r) {
  using nlohmann::json;
  json cells = json::array();
  for (std::size_t i = 0; i < r.rows.labels.size(); ++i) {
    json row = json::array();
    for (std::size_t c = 0; c < r.cols.labels.size(); ++c) row.push_back(r.at(i, c) ? json(*r.at(i, c)) : json());
    cells.push_back(row);
  }
  auto idx = [](const std::vector<std::optional<std::size_t>>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(x ? json(*x) : json());
    return a;
  };
  return {{"sweep", r.sweep},
          {"unit", r.unit},
          {"repetitions", r.repetitions},
          {"aggregation", r.aggregation},
          {"highlight_minima", r.highlight_minima},
          {"rows", {{"name", r.rows.name}, {"labels", r.rows.labels}}},
          {"cols", {{"name", r.cols.name}, {"labels", r.cols.labels}}},
          {"cells", cells},
          {"row_minima", idx(r.row_minima())},
          {"col_minima", idx(r.col_minima())},
          {"notes", r.notes}};
}

inline SweepReport sweep_from_json(const nlohmann::json& j) {
  SweepReport r;
  try {
    r.sweep = j.at("sweep").get<std::string>();
    r.unit = j.at("unit").get<std::string>();
    r.repetitions = j.at("repetitions").get<std::size_t>();
    r.aggregation = j.at("aggregation").get<std::string>();
    r.highlight_minima = j.at("highlight_minima").get<bool>();
    r.rows = {j.at("rows").at("name").get<std::string>(), j.at("rows").at("labels").get<std::vector<std::string>>()};
    r.cols = {j.at("cols").at("name").get<std::string>(), j.at("cols").at("labels").get<std::vector<std::string>>()};
    const auto& cells = j.at("cells");
    if (cells.size() != r.rows.labels.size()) throw LoadError(LoadErrorKind::count_mismatch, "sweep rows");
    for (const auto& row : cells) {
      if (row.size() != r.cols.labels.size()) throw LoadError(LoadErrorKind::count_mismatch, "sweep columns");
      for (const auto& v : row) r.cells.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    r.notes = j.value("notes", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::corrupt, std::string("sweep report: ") + e.what());
  }
  return r;
}

// Header lines "# key=value", then "<rows>\<cols>,<col labels...>", then one line per
// row. Failed cells read "failed". Numbers are written in shortest round-trip form.
inline std::string to_csv(const SweepReport& r) {
  std::string out = "# sweep=" + r.sweep + "\n# unit=" + r.unit + "\n# repetitions=" + std::to_string(r.repetitions) +
                    "\n# aggregation=" + r.aggregation + "\n# highlight_minima=" + (r.highlight_minima ? "1" : "0") +
                    "\n";
  for (const auto& n : r.notes) out += "# note=" + n + "\n";
  out += r.rows.name + "\\" + r.cols.name;
  for (const auto& l : r.cols.labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < r.rows.labels.size(); ++i) {
    out += r.rows.labels[i];
    for (std::size_t c = 0; c < r.cols.labels.size(); ++c)
      out += "," + (r.at(i, c) ? format_number(*r.at(i, c)) : std::string("failed"));
    out += "\n";
  }
  return out;
}

inline SweepReport sweep_from_csv(const std::string& text) {
  SweepReport r;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) parts.push_back(cur);
    if (!s.empty() && s.back() == ',') parts.emplace_back();
    return parts;
  };
  bool header = false;
  try {
    while (std::getline(in, line)) {
      if (line.rfind("# ", 0) == 0) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw LoadError(LoadErrorKind::corrupt, "sweep csv: bad header line");
        const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
        if (key == "sweep") r.sweep = value;
        else if (key == "unit") r.unit = value;
        else if (key == "repetitions") r.repetitions = std::stoul(value);
        else if (key == "aggregation") r.aggregation = value;
        else if (key == "highlight_minima") r.highlight_minima = value == "1";
        else if (key == "note") r.notes.push_back(value);
        continue;
      }
      if (line.empty()) continue;
      auto parts = split(line);
      if (!header) {
        const auto slash = parts[0].find('\\');
        if (slash == std::string::npos) throw LoadError(LoadErrorKind::corrupt, "sweep csv: missing axis header");
        r.rows.name = parts[0].substr(0, slash);
        r.cols.name = parts[0].substr(slash + 1);
        r.cols.labels.assign(parts.begin() + 1, parts.end());
        header = true;
        continue;
      }
      if (parts.size() != r.cols.labels.size() + 1)
        throw LoadError(LoadErrorKind::count_mismatch, "sweep csv: row width differs from header");
      r.rows.labels.push_back(parts[0]);
      for (std::size_t c = 1; c < parts.size(); ++c)
        r.cells.push_back(parts[c] == "failed" ? std::nullopt : std::optional<double>(std::stod(parts[c])));
    }
  } catch (const std::logic_error& e) {
    throw LoadError(LoadErrorKind::corrupt, std::string("sweep csv: ") + e.what());
  }
  if (!header) throw LoadError(LoadErrorKind::truncated, "sweep csv: no table");
  return r;
}

// Human-readable grid; row and column minima are marked with * and + respectively.
inline std::string format_table(const SweepReport& r) {
  const auto rmin = r.row_minima();
  const auto cmin = r.col_minima();
  bool marked = false;
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-14s", (r.rows.name + "\\" + r.cols.name).c_str());
  out += buf;
  for (const auto& l : r.cols.labels) {
    std::snprintf(buf, sizeof buf, " %12s", l.c_str());
    out += buf;
  }
  out += "\n";
  for (std::size_t i = 0; i < r.rows.labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-14s", r.rows.labels[i].c_str());
    out += buf;
    for (std::size_t c = 0; c < r.cols.labels.size(); ++c) {
      std::string cell = "failed";
      if (r.at(i, c)) {
        std::snprintf(buf, sizeof buf, "%.2f", *r.at(i, c));
        cell = buf;
      }
      if (rmin[i] == c) cell += "*";
      if (cmin[c] == i) cell += "+";
      marked = marked || rmin[i] == c || cmin[c] == i;
      std::snprintf(buf, sizeof buf, " %12s", cell.c_str());
      out += buf;
    }
    out += "\n";
  }
  out += "unit: " + r.unit + ", " + std::to_string(r.repetitions) + " repetition(s), " + r.aggregation + "\n";
  if (marked) out += "* row minimum, + column minimum\n";
  for (const auto& n : r.notes) out += "note: " + n + "\n";
  return out;
}

// Mean after dropping one smallest and one largest sample; plain mean below three samples.
inline double trimmed_mean(std::vector<double> v) {
  if (v.empty()) throw UsageError("trimmed_mean of no samples");
  std::sort(v.begin(), v.end());
  std::size_t lo = 0, hi = v.size();
  if (v.size() >= 3) {
    ++lo;
    --hi;
  }
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / static_cast<double>(hi - lo);
}

struct SeedSet {
  std::span<const Sample> seeds;
  std::span<const std::size_t> ids;
};

// Wall-clock ms from the start of a pass over the seeds until the first seed turns into
// a generated corner case. Seeds the ensemble already disagrees on are skipped. Returns
// nullopt when no seed diverges within the budget.
inline std::optional<double> time_to_first_divergence(const Ensemble& ens, const SeedSet& s,
                                                      const GenerationConfig& cfg) {
  std::vector<std::size_t> agreeing;
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    std::array<std::size_t, Ensemble::kSize> labels{};
    for (std::size_t m = 0; m < Ensemble::kSize; ++m) labels[m] = predict(ens[m], quantize8(s.seeds[i].image));
    if (!detect_divergence(labels)) agreeing.push_back(i);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i : agreeing) {
    EnsembleCoverage cov(ens.members(), cfg.threshold);
    if (generate_from_seed(ens, s.seeds[i], s.ids[i], cfg, &cov))
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return std::nullopt;
}

inline std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Rows are lambda2, columns lambda1. Each cell is the trimmed mean over `repetitions`
// timings; a cell fails if any repetition finds no divergence. Cells run on separate
// workers, each cell single-threaded.
inline SweepReport sweep_lambda(const Ensemble& ens, const SeedSet& seeds, const GenerationConfig& base,
                                const std::vector<double>& lambda1, const std::vector<double>& lambda2,
                                std::size_t repetitions = 10, std::size_t workers = 1) {
  if (lambda1.empty() || lambda2.empty()) throw UsageError("sweep-lambda needs nonempty lambda1 and lambda2 grids");
  if (repetitions == 0) throw UsageError("sweep-lambda needs at least one repetition");
  base.validate();
  SweepReport r;
  r.sweep = "lambda";
  r.unit = "ms";
  r.repetitions = repetitions;
  r.aggregation = "trimmed_mean";
  r.highlight_minima = true;
  r.rows.name = "lambda2";
  r.cols.name = "lambda1";
  for (double v : lambda2) r.rows.labels.push_back(format_number(v));
  for (double v : lambda1) r.cols.labels.push_back(format_number(v));
  r.cells.assign(lambda1.size() * lambda2.size(), std::nullopt);
  parallel_for(r.cells.size(), workers, [&](std::size_t k) {
    GenerationConfig cfg = base;
    cfg.lambda2 = lambda2[k / lambda1.size()];
    cfg.lambda1 = lambda1[k % lambda1.size()];
    cfg.validate();
    std::vector<double> samples;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto ms = time_to_first_divergence(ens, seeds, cfg);
      if (!ms) return;
      samples.push_back(*ms);
    }
    r.cells[k] = trimmed_mean(samples);
  });
  return r;
}

// Ensemble coverage (percent) at each threshold, read off one campaign's recorded peak
// activations. Thresholds are reported in ascending order.
inline SweepReport sweep_threshold(const Ensemble& ens, const SeedSet& seeds, const GenerationConfig& cfg,
                                   const std::vector<double>& thresholds, std::size_t workers = 1) {
  if (thresholds.empty()) throw UsageError("sweep-threshold needs a nonempty threshold grid");
  for (double t : thresholds)
    if (!(t >= 0.0 && t <= 1.0)) throw UsageError("thresholds must lie in [0, 1]");
  const auto ts = sorted_unique(thresholds);
  const auto camp = run_campaign(ens, seeds.seeds, seeds.ids, cfg, workers);
  SweepReport r;
  r.sweep = "threshold";
  r.unit = "coverage_pct";
  r.aggregation = "single_campaign";
  r.rows = {"metric", {"coverage"}};
  r.cols.name = "t";
  for (double t : ts) {
    r.cols.labels.push_back(format_number(t));
    r.cells.push_back(100.0 * camp.coverage.ratio_at(t));
  }
  r.notes.push_back("campaign threshold " + format_number(cfg.threshold) + ", " + std::to_string(seeds.seeds.size()) +
                    " seeds, " + std::to_string(camp.corpus.size()) + " corner cases");
  if (ts.size() != thresholds.size()) r.notes.push_back("duplicate thresholds removed");
  return r;
}

// Ensemble coverage (percent) after the first n seeds, for each requested n. One
// campaign over the largest prefix; smaller counts merge the per-seed maps of their
// prefix. Duplicate counts are dropped with a warning note.
inline SweepReport sweep_seeds(const Ensemble& ens, const SeedSet& pool, const GenerationConfig& cfg,
                               const std::vector<std::size_t>& counts, std::size_t workers = 1,
                               std::vector<std::string>* warnings = nullptr) {
  if (counts.empty()) throw UsageError("sweep-seeds needs a nonempty seed-count grid");
  std::vector<std::size_t> cs = counts;
  std::sort(cs.begin(), cs.end());
  cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  if (cs.back() > pool.seeds.size())
    throw UsageError("seed count " + std::to_string(cs.back()) + " exceeds the " + std::to_string(pool.seeds.size()) +
                     " available seeds");
  SweepReport r;
  r.sweep = "seeds";
  r.unit = "coverage_pct";
  r.aggregation = "prefix_union";
  r.rows = {"metric", {"coverage"}};
  r.cols.name = "seeds";
  if (cs.size() != counts.size()) {
    const std::string w = "duplicate seed counts removed";
    r.notes.push_back(w);
    if (warnings) warnings->push_back(w);
  }
  const auto camp = run_campaign(ens, pool.seeds.first(cs.back()), pool.ids.first(cs.back()), cfg, workers);
  EnsembleCoverage acc(ens.members(), cfg.threshold);
  std::size_t done = 0;
  for (std::size_t n : cs) {
    for (; done < n; ++done) acc.merge(camp.seed_coverage[done]);
    r.cols.labels.push_back(std::to_string(n));
    r.cells.push_back(100.0 * acc.ratio());
  }
  return r;
}

}  // namespace dprobe
