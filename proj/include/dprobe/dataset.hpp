#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/image_io.hpp"
#include "dprobe/network.hpp"
#include "dprobe/synthetic.hpp"
#include "dprobe/weights_io.hpp"

namespace dprobe {

// ---------------------------------------------------------------------------
// IDX: big-endian u32 magic (0x00000803 for u8 images with 3 dims, 0x00000801 for
// u8 labels), big-endian u32 dims, then unsigned bytes in row-major order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& source) {
  if (at + 4 > b.size()) throw LoadError(LoadErrorKind::truncated, source + ": header cut short");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

// Images come back as (N, H, W, 1) with values k / 255.
inline Tensor decode_idx_images(const std::vector<std::uint8_t>& b, const std::string& source = "<memory>") {
  const std::uint32_t magic = detail::read_be32(b, 0, source);
  if (magic != kIdxImagesMagic) throw LoadError(LoadErrorKind::bad_magic, source + ": not an IDX image file");
  const std::size_t n = detail::read_be32(b, 4, source), h = detail::read_be32(b, 8, source),
                    w = detail::read_be32(b, 12, source);
  if (n == 0 || h == 0 || w == 0) throw LoadError(LoadErrorKind::corrupt, source + ": zero dimension");
  const std::size_t need = 16 + n * h * w;
  if (b.size() < need) throw LoadError(LoadErrorKind::truncated, source + ": pixel data cut short");
  if (b.size() > need) throw LoadError(LoadErrorKind::corrupt, source + ": trailing bytes");
  Tensor t({n, h, w, 1});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = from_byte(b[16 + i]);
  return t;
}

inline std::vector<std::size_t> decode_idx_labels(const std::vector<std::uint8_t>& b,
                                                  const std::string& source = "<memory>") {
  const std::uint32_t magic = detail::read_be32(b, 0, source);
  if (magic != kIdxLabelsMagic) throw LoadError(LoadErrorKind::bad_magic, source + ": not an IDX label file");
  const std::size_t n = detail::read_be32(b, 4, source);
  if (b.size() < 8 + n) throw LoadError(LoadErrorKind::truncated, source + ": label data cut short");
  if (b.size() > 8 + n) throw LoadError(LoadErrorKind::corrupt, source + ": trailing bytes");
  return {b.begin() + 8, b.end()};
}

inline std::vector<std::uint8_t> encode_idx_images(const Tensor& images) {
  if (images.rank() != 4 || images.dim(3) != 1) throw ShapeError("IDX images must be (N, H, W, 1)");
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxImagesMagic);
  for (std::size_t d = 0; d < 3; ++d) detail::put_be32(b, static_cast<std::uint32_t>(images.dim(d)));
  for (double v : images.data()) b.push_back(to_byte(v));
  return b;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const std::size_t> labels) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxLabelsMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) {
    if (l > 255) throw UsageError("IDX labels must fit in a byte");
    b.push_back(static_cast<std::uint8_t>(l));
  }
  return b;
}

inline std::vector<Sample> idx_samples(const Tensor& images, std::span<const std::size_t> labels,
                                       const std::string& source) {
  if (images.dim(0) != labels.size())
    throw LoadError(LoadErrorKind::count_mismatch, source + ": " + std::to_string(images.dim(0)) + " images but " +
                                                       std::to_string(labels.size()) + " labels");
  const std::size_t h = images.dim(1), w = images.dim(2), per = h * w;
  std::vector<Sample> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tensor img({h, w, 1});
    for (std::size_t k = 0; k < per; ++k) img[k] = images[i * per + k];
    out.push_back({std::move(img), labels[i]});
  }
  return out;
}

inline std::vector<Sample> read_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const Tensor imgs = decode_idx_images(detail::read_file_bytes(images), images.string());
  const auto labs = decode_idx_labels(detail::read_file_bytes(labels), labels.string());
  return idx_samples(imgs, labs, images.string());
}

inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      std::span<const Sample> data) {
  if (data.empty()) throw UsageError("write_idx: no samples");
  const Shape s = data[0].image.shape();
  if (s.size() != 3 || s[2] != 1) throw ShapeError("IDX holds single-channel images only");
  Tensor all({data.size(), s[0], s[1], 1});
  std::vector<std::size_t> labs;
  const std::size_t per = s[0] * s[1];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].image.shape() != s) throw ShapeError("write_idx: images differ in shape");
    for (std::size_t k = 0; k < per; ++k) all[i * per + k] = data[i].image[k];
    labs.push_back(data[i].label);
  }
  detail::write_file_bytes(images, encode_idx_images(all));
  detail::write_file_bytes(labels, encode_idx_labels(labs));
}

// ---------------------------------------------------------------------------
// Dataset sources
// ---------------------------------------------------------------------------

enum class DatasetFormat { idx, image_dir_csv, builtin_synthetic };

inline DatasetFormat parse_format(const std::string& s) {
  if (s == "idx") return DatasetFormat::idx;
  if (s == "image_dir_csv") return DatasetFormat::image_dir_csv;
  if (s == "builtin_synthetic") return DatasetFormat::builtin_synthetic;
  throw UsageError("unknown dataset format '" + s + "' (expected idx, image_dir_csv or builtin_synthetic)");
}

inline const char* to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::idx: return "idx";
    case DatasetFormat::image_dir_csv: return "image_dir_csv";
    case DatasetFormat::builtin_synthetic: return "builtin_synthetic";
  }
  return "?";
}

struct DatasetSpec {
  std::string path = "digits";  // directory, or digits|signs for the builtin generator
  DatasetFormat format = DatasetFormat::builtin_synthetic;
  std::size_t synthetic_train = 3000;
  std::size_t synthetic_test = 1000;
  std::uint64_t synthetic_seed = 1;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Lines of "<image path relative to the csv>,<label>"; a leading "path,label" header is
// skipped. Every image must share the first one's shape.
inline std::vector<Sample> read_image_csv(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw LoadError(LoadErrorKind::missing_file, csv.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("path,", 0) == 0)) continue;
    const auto comma = line.rfind(',');
    const std::string where = csv.string() + ":" + std::to_string(line_no);
    if (comma == std::string::npos) throw LoadError(LoadErrorKind::corrupt, where + ": expected path,label");
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      const long v = std::stol(line.substr(comma + 1), &used);
      if (v < 0 || used != line.size() - comma - 1) throw std::invalid_argument("label");
      label = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw LoadError(LoadErrorKind::corrupt, where + ": bad label");
    }
    Tensor img = read_png(csv.parent_path() / line.substr(0, comma));
    if (!out.empty() && img.shape() != out[0].image.shape())
      throw LoadError(LoadErrorKind::corrupt, where + ": image shape " + shape_str(img.shape()) + " differs from " +
                                                  shape_str(out[0].image.shape()));
    out.push_back({std::move(img), label});
  }
  if (out.empty()) throw LoadError(LoadErrorKind::truncated, csv.string() + ": no samples");
  return out;
}

// idx:               <dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte
// image_dir_csv:     <dir>/train.csv and <dir>/test.csv
// builtin_synthetic: path names the generator (digits or signs)
inline Dataset load_dataset(const DatasetSpec& spec) {
  Dataset d;
  const std::filesystem::path dir = spec.path;
  switch (spec.format) {
    case DatasetFormat::idx:
      d.train = read_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
      d.test = read_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
      break;
    case DatasetFormat::image_dir_csv:
      d.train = read_image_csv(dir / "train.csv");
      d.test = read_image_csv(dir / "test.csv");
      break;
    case DatasetFormat::builtin_synthetic: {
      const auto kind = synthetic::parse_kind(spec.path);
      d.train = synthetic::generate(kind, spec.synthetic_train, derive_seed(spec.synthetic_seed, 0));
      d.test = synthetic::generate(kind, spec.synthetic_test, derive_seed(spec.synthetic_seed, 1));
      break;
    }
  }
  if (d.train.empty() || d.test.empty()) throw LoadError(LoadErrorKind::truncated, spec.path + ": empty split");
  if (d.train[0].image.shape() != d.test[0].image.shape())
    throw LoadError(LoadErrorKind::corrupt, spec.path + ": train and test images differ in shape");
  return d;
}

}  // namespace dprobe
