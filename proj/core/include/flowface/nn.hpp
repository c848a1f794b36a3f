#pragma once

// Small parameterized layers on top of the autodiff engine. Parameters
// are long-lived leaf Values; the optimizer walks a ParamList and writes
// updated tensors back into the leaves.

#include <string>
#include <utility>
#include <vector>

#include "flowface/autodiff.hpp"
#include "flowface/image_ops.hpp"

namespace flowface::nn {

using ad::Value;

template <typename T>
using ParamList = std::vector<std::pair<std::string, Value<T>>>;

template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  return Tensor<T>::random_normal(std::move(shape), rng,
                                  T(std::sqrt(2.0 / double(fan_in))));
}

template <typename T>
Tensor<T> xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  const T a = T(std::sqrt(6.0 / double(fan_in + fan_out)));
  return Tensor<T>::random_uniform(std::move(shape), rng, -a, a);
}

template <typename T>
struct Linear {
  Value<T> w, b;  // w [in,out], b [out]
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool relu_gain = true)
      : w(Value<T>::leaf(relu_gain ? he_normal<T>({in, out}, in, rng)
                                   : xavier_uniform<T>({in, out}, in, out, rng))),
        b(Value<T>::leaf(Tensor<T>({out}))) {}

  Value<T> operator()(const Value<T>& x) const { return ad::bias_add(ad::matmul(x, w), b); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename T>
struct Conv2d {
  Value<T> w, b;  // w [Cout,Cin,k,k]
  int stride = 1, pad = 1;
  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
      : w(Value<T>::leaf(he_normal<T>({cout, cin, k, k}, cin * k * k, rng))),
        b(Value<T>::leaf(Tensor<T>({cout}))),
        stride(stride_), pad(pad_) {}

  Value<T> operator()(const Value<T>& x) const { return ad::conv2d(x, w, b, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename T>
struct LayerNorm {
  Value<T> gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(int width)
      : gamma(Value<T>::leaf(Tensor<T>({width}, T(1)))),
        beta(Value<T>::leaf(Tensor<T>({width}))) {}

  Value<T> operator()(const Value<T>& x) const { return ad::layer_norm(x, gamma, beta); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".g", gamma});
    out.push_back({prefix + ".b", beta});
  }
};

/// Classic sin/cos position table, rows x width.
template <typename T>
Tensor<T> sinusoidal_positions(int rows, int width) {
  Tensor<T> pe({rows, width});
  for (int t = 0; t < rows; ++t)
    for (int i = 0; i < width; ++i) {
      const double angle = double(t) / std::pow(10000.0, double(2 * (i / 2)) / double(width));
      pe.at(t, i) = T(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <typename T>
void zero_param_grads(ParamList<T>& params) {
  for (auto& [name, v] : params) v.zero_grad();
}

}  // namespace flowface::nn
