#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "flowface/common.hpp"

namespace flowface {

inline size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    require_config(d >= 0, "tensor dimension must be nonnegative");
    n *= size_t(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor. The single storage type behind frames, flow
/// fields, feature sequences and model parameters.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require_config(data_.size() == shape_numel(shape_),
                   "tensor data size does not match shape " + shape_str(shape_));
  }

  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at(int i, int j) { return data_[size_t(i) * dim(1) + j]; }
  const T& at(int i, int j) const { return data_[size_t(i) * dim(1) + j]; }
  T& at(int i, int j, int k) {
    return data_[(size_t(i) * dim(1) + j) * dim(2) + k];
  }
  const T& at(int i, int j, int k) const {
    return data_[(size_t(i) * dim(1) + j) * dim(2) + k];
  }
  T& at(int i, int j, int k, int l) {
    return data_[((size_t(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data_[((size_t(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<int> shape) const {
    require_config(shape_numel(shape) == numel(),
                   "reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = U(data_[i]);
    return out;
  }

  static Tensor random_normal(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = T(rng.normal()) * stddev;
    return t;
  }
  static Tensor random_uniform(std::vector<int> shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = T(rng.uniform(double(lo), double(hi)));
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

/// Max |a-b| over all elements; shapes must match.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_config(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0;
  for (size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
double mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_config(a.same_shape(b), "mean_abs_diff: shape mismatch");
  if (a.numel() == 0) return 0;
  double s = 0;
  for (size_t i = 0; i < a.numel(); ++i)
    s += std::abs(double(a[i]) - double(b[i]));
  return s / double(a.numel());
}

}  // namespace flowface
