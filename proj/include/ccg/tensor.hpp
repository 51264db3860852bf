#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccg {

/// Raised for every contract violation in the library (bad shapes, bad
/// files, bad configuration). Callers at the CLI boundary turn it into an
/// exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw Error(os.str());
}

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Value type; copies are deep.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != count(shape)) {
      fail("tensor data size ", data.size(), " does not match shape ", shape_string(shape));
    }
  }

  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // [R, C] accessors
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  // [C, H, W] accessors
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  std::span<double> values() { return data; }
  std::span<const double> values() const { return data; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    fail(what, ": shape mismatch ", shape_string(a.shape), " vs ", shape_string(b.shape));
  }
}

/// A named trainable array with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = false;  // receives weight decay

  Param() = default;
  Param(std::string n, Tensor v, bool wd)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), decay(wd) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace ccg
