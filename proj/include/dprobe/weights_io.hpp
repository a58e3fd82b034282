#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/network.hpp"

namespace dprobe {

// Model weights file. All integers are little-endian u32, all reals little-endian f64.
//
//   "DPRB" | version | layer_count | input_rank | input dims...
//   per layer: kind tag | n_ints | ints... | weights... | biases...
//
// ints are (in, out) for dense, (kernel_h, kernel_w, in, out) for conv2d, empty otherwise.
inline constexpr char kWeightsMagic[4] = {'D', 'P', 'R', 'B'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string source) : b_(b), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw LoadError(LoadErrorKind::truncated, source_);
  }
  const std::vector<std::uint8_t>& b_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::missing_file, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const Model& model) {
  detail::ByteWriter w;
  w.raw(kWeightsMagic, 4);
  w.u32(kWeightsVersion);
  const auto& spec = model.spec();
  w.u32(static_cast<std::uint32_t>(spec.layers.size()));
  w.u32(static_cast<std::uint32_t>(spec.input_shape.size()));
  for (std::size_t d : spec.input_shape) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    w.u32(static_cast<std::uint32_t>(l.kind));
    std::vector<std::size_t> ints;
    if (l.kind == LayerKind::dense) ints = {l.in, l.out};
    if (l.kind == LayerKind::conv2d) ints = {l.kernel_h, l.kernel_w, l.in, l.out};
    w.u32(static_cast<std::uint32_t>(ints.size()));
    for (std::size_t v : ints) w.u32(static_cast<std::uint32_t>(v));
    if (l.has_params()) {
      for (double v : model.params()[i].weight.data()) w.f64(v);
      for (double v : model.params()[i].bias.data()) w.f64(v);
    }
  }
  return std::move(w.bytes());
}

inline Model decode_weights(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw LoadError(LoadErrorKind::bad_magic, source);
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw LoadError(LoadErrorKind::corrupt, source + ": unsupported version " + std::to_string(version));
  const std::uint32_t n_layers = r.u32();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw LoadError(LoadErrorKind::corrupt, source + ": implausible input rank");
  // Every layer takes at least eight bytes, so a larger count cannot be genuine.
  if (n_layers > r.remaining() / 8) throw LoadError(LoadErrorKind::truncated, source + ": layer table cut short");
  ModelSpec spec;
  Parameters params(n_layers);
  try {
    for (std::uint32_t i = 0; i < rank; ++i) spec.input_shape.push_back(r.u32());
    for (std::uint32_t i = 0; i < n_layers; ++i) {
      const std::uint32_t tag = r.u32();
      if (tag > static_cast<std::uint32_t>(LayerKind::flatten))
        throw LoadError(LoadErrorKind::corrupt, source + ": unknown layer kind " + std::to_string(tag));
      const std::uint32_t n_ints = r.u32();
      if (n_ints > 4) throw LoadError(LoadErrorKind::corrupt, source + ": too many shape ints");
      std::vector<std::size_t> ints;
      for (std::uint32_t k = 0; k < n_ints; ++k) ints.push_back(r.u32());
      LayerSpec l;
      l.kind = static_cast<LayerKind>(tag);
      const std::size_t expected_ints = l.kind == LayerKind::dense ? 2 : l.kind == LayerKind::conv2d ? 4 : 0;
      if (ints.size() != expected_ints) throw LoadError(LoadErrorKind::corrupt, source + ": wrong shape int count");
      if (l.kind == LayerKind::dense) l = LayerSpec::dense(ints[0], ints[1]);
      if (l.kind == LayerKind::conv2d) l = LayerSpec::conv2d(ints[0], ints[1], ints[2], ints[3]);
      if (l.has_params()) {
        const std::size_t count = shape_size(l.weight_shape()) + l.out;
        if (count > r.remaining() / 8) throw LoadError(LoadErrorKind::truncated, source + ": weights cut short");
        Tensor wt(l.weight_shape()), b(l.bias_shape());
        for (double& v : wt.data()) v = r.f64();
        for (double& v : b.data()) v = r.f64();
        params[i] = {std::move(wt), std::move(b)};
      }
      spec.layers.push_back(l);
    }
  } catch (const ShapeError& e) {
    throw LoadError(LoadErrorKind::corrupt, source + ": " + e.what());
  }
  if (!r.at_end()) throw LoadError(LoadErrorKind::corrupt, source + ": trailing bytes");
  try {
    return Model(std::move(spec), std::move(params));
  } catch (const ShapeError& e) {
    throw LoadError(LoadErrorKind::corrupt, source + ": " + e.what());
  }
}

inline void save_weights(const Model& model, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_weights(model));
}

inline Model load_weights(const std::filesystem::path& path) {
  Model m = decode_weights(detail::read_file_bytes(path), path.string());
  m.set_name(path.stem().string());
  return m;
}

}  // namespace dprobe
