#pragma once

// Dense row-major tensor of rank 1..4, templated on scalar. Eigen arrays
// provide the storage and vectorized element-wise math; shape bookkeeping
// lives here. TensorT is a value type: copies are deep and cheap enough at
// the sizes this project works with.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "skelrep/rng.hpp"

namespace skelrep {

using Shape = std::vector<Eigen::Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline Eigen::Index shape_numel(const Shape& s) {
  Eigen::Index n = 1;
  for (auto e : s) n *= e;
  return n;
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

template <typename S>
struct TensorT {
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

  Shape shape;
  Storage data;

  TensorT() = default;

  explicit TensorT(Shape sh) : shape(std::move(sh)) {
    check_rank();
    data = Storage::Zero(shape_numel(shape));
  }

  TensorT(Shape sh, Storage d) : shape(std::move(sh)), data(std::move(d)) {
    check_rank();
    if (data.size() != shape_numel(shape))
      fail("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
           shape_str(shape));
  }

  TensorT(Shape sh, std::initializer_list<S> vals) : shape(std::move(sh)) {
    check_rank();
    if (static_cast<Eigen::Index>(vals.size()) != shape_numel(shape))
      fail("tensor: initializer length does not match shape " + shape_str(shape));
    data = Storage(vals.size());
    Eigen::Index i = 0;
    for (S v : vals) data[i++] = v;
  }

  static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }

  static TensorT full(Shape sh, S value) {
    TensorT t(std::move(sh));
    t.data.setConstant(value);
    return t;
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT uniform(Shape sh, Rng& rng, S lo, S hi) {
    TensorT t(std::move(sh));
    for (Eigen::Index i = 0; i < t.data.size(); ++i)
      t.data[i] = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  static TensorT gaussian(Shape sh, Rng& rng, S sigma = S(1)) {
    TensorT t(std::move(sh));
    for (Eigen::Index i = 0; i < t.data.size(); ++i)
      t.data[i] = static_cast<S>(rng.gaussian() * static_cast<double>(sigma));
    return t;
  }

  Eigen::Index numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  Eigen::Index extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

  S& operator[](Eigen::Index i) { return data[i]; }
  S operator[](Eigen::Index i) const { return data[i]; }

  // Row-major element access for ranks 2..4.
  S& at(Eigen::Index i, Eigen::Index j) { return data[i * shape[1] + j]; }
  S at(Eigen::Index i, Eigen::Index j) const { return data[i * shape[1] + j]; }
  S& at(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  S at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  S& at(Eigen::Index i, Eigen::Index j, Eigen::Index k, Eigen::Index l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  S at(Eigen::Index i, Eigen::Index j, Eigen::Index k, Eigen::Index l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  // 2-d view as an Eigen row-major matrix (no copy).
  auto matrix() {
    if (rank() != 2) fail("tensor: matrix() view requires rank 2, got " + shape_str(shape));
    return Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), shape[0], shape[1]);
  }
  auto matrix() const {
    if (rank() != 2) fail("tensor: matrix() view requires rank 2, got " + shape_str(shape));
    return Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), shape[0], shape[1]);
  }

  TensorT reshaped(Shape sh) const {
    if (shape_numel(sh) != numel())
      fail("tensor: cannot reshape " + shape_str(shape) + " to " + shape_str(sh));
    return TensorT(std::move(sh), data);
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (!std::isfinite(static_cast<double>(data[i]))) return false;
    return true;
  }

  template <typename T2>
  TensorT<T2> cast() const {
    TensorT<T2> out;
    out.shape = shape;
    out.data = data.template cast<T2>();
    return out;
  }

 private:
  void check_rank() const {
    if (shape.empty() || shape.size() > 4)
      fail("tensor: rank must be 1..4, got shape " + shape_str(shape));
    for (auto e : shape)
      if (e <= 0) fail("tensor: non-positive extent in shape " + shape_str(shape));
  }
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <typename S>
inline bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
  if (!a.same_shape(b)) return false;
  for (Eigen::Index i = 0; i < a.numel(); ++i)
    if (std::memcmp(&a.data[i], &b.data[i], sizeof(S)) != 0) return false;
  return true;
}

template <typename S>
inline double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  if (!a.same_shape(b)) fail("max_abs_diff: shape mismatch");
  double m = 0;
  for (Eigen::Index i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

}  // namespace skelrep
