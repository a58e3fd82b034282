#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dprobe/error.hpp"
#include "dprobe/generator.hpp"
#include "dprobe/image_io.hpp"

// Corpus directory layout: case_<seed_id>.png per corner case plus corpus.jsonl, one
// JSON record per line in seed_id order.
namespace dprobe {

inline constexpr const char* kCorpusIndex = "corpus.jsonl";

inline std::string case_file_name(std::size_t seed_id) { return "case_" + std::to_string(seed_id) + ".png"; }

inline nlohmann::json corpus_record(const CornerCase& cc) {
  return {{"seed_id", cc.seed_id},
          {"original_label", cc.original_label},
          {"labels", cc.labels},
          {"deviating", cc.deviating},
          {"target_model", cc.target_model},
          {"iterations", cc.iterations},
          {"constraint", cc.constraint},
          {"objective", cc.objective},
          {"image_file", case_file_name(cc.seed_id)}};
}

inline void write_corpus(const std::filesystem::path& dir, std::span<const CornerCase> corpus) {
  std::filesystem::create_directories(dir);
  std::string index;
  for (const CornerCase& cc : corpus) {
    write_png(dir / case_file_name(cc.seed_id), cc.image);
    index += corpus_record(cc).dump() + "\n";
  }
  std::ofstream out(dir / kCorpusIndex, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / kCorpusIndex).string());
  out << index;
}

// Images come back from the PNGs; probabilities and transform trails are not stored.
inline std::vector<CornerCase> read_corpus(const std::filesystem::path& dir) {
  const auto index_path = dir / kCorpusIndex;
  std::ifstream in(index_path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::missing_file, index_path.string());
  std::vector<CornerCase> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = index_path.string() + ":" + std::to_string(line_no);
    CornerCase cc;
    std::string image_file;
    try {
      const auto j = nlohmann::json::parse(line);
      cc.seed_id = j.at("seed_id").get<std::size_t>();
      cc.original_label = j.at("original_label").get<std::size_t>();
      const auto labels = j.at("labels").get<std::vector<std::size_t>>();
      if (labels.size() != Ensemble::kSize) throw LoadError(LoadErrorKind::corrupt, where + ": expected three labels");
      std::copy(labels.begin(), labels.end(), cc.labels.begin());
      cc.deviating = j.at("deviating").get<std::vector<std::size_t>>();
      cc.target_model = j.value("target_model", std::size_t{0});
      cc.iterations = j.at("iterations").get<std::size_t>();
      cc.constraint = j.at("constraint").get<std::string>();
      cc.objective = j.at("objective").get<double>();
      image_file = j.at("image_file").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(LoadErrorKind::corrupt, where + ": " + e.what());
    }
    if (!detect_divergence(cc.labels)) throw LoadError(LoadErrorKind::corrupt, where + ": labels do not diverge");
    if (image_file.empty() || std::filesystem::path(image_file).has_parent_path())
      throw LoadError(LoadErrorKind::corrupt, where + ": bad image_file");
    cc.image = read_png(dir / image_file);
    out.push_back(std::move(cc));
  }
  return out;
}

}  // namespace dprobe
