#pragma once

#include <functional>
#include <string>

#include "seer/ops.hpp"

namespace seer {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, BasicTensor<T>&)>;

template <typename T>
struct Dense {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  Dense() = default;

  Dense(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<T> w(in * out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    weight = BasicTensor<T>({in, out}, std::move(w));
    bias = BasicTensor<T>({out});
    weight.set_tracked();
    bias.set_tracked();
  }

  std::size_t in_dim() const { return weight.extent(0); }
  std::size_t out_dim() const { return weight.extent(1); }

  // Accepts [M,in] or a bare [in] vector.
  BasicTensor<T> apply(const BasicTensor<T>& x) const {
    if (x.rank() == 1) {
      auto y = add_rowvec(matmul(reshape(x, {1, in_dim()}), weight), bias);
      return reshape(y, {out_dim()});
    }
    return add_rowvec(matmul(x, weight), bias);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv2dLayer {
  BasicTensor<T> kernel;  // [out, in, k, k]
  BasicTensor<T> bias;    // [out]
  int padding = 0;
  int stride = 1;

  Conv2dLayer() = default;

  Conv2dLayer(std::size_t in, std::size_t out, std::size_t k, int padding, int stride, Rng& rng)
      : padding(padding), stride(stride) {
    const double fan_in = static_cast<double>(in * k * k);
    const double fan_out = static_cast<double>(out * k * k);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<T> w(out * in * k * k);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    kernel = BasicTensor<T>({out, in, k, k}, std::move(w));
    bias = BasicTensor<T>({out});
    kernel.set_tracked();
    bias.set_tracked();
  }

  BasicTensor<T> apply(const BasicTensor<T>& x) const { return conv2d(x, kernel, bias, padding, stride); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".kernel", kernel);
    fn(prefix + ".bias", bias);
  }
};

}  // namespace seer
