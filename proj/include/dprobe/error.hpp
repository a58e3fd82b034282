#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dprobe {

// Caller passed something malformed (bad config, wrong arity, out-of-range index).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor or model shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::size_t layer, const std::string& what)
      : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LoadErrorKind { missing_file, bad_magic, truncated, count_mismatch, corrupt };

inline const char* to_string(LoadErrorKind k) {
  switch (k) {
    case LoadErrorKind::missing_file: return "missing file";
    case LoadErrorKind::bad_magic: return "bad magic";
    case LoadErrorKind::truncated: return "truncated file";
    case LoadErrorKind::count_mismatch: return "count mismatch";
    case LoadErrorKind::corrupt: return "corrupt record";
  }
  return "load error";
}

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

}  // namespace dprobe
