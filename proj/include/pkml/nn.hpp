#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pkml/rng.hpp"
#include "pkml/tensor.hpp"

namespace pkml::nn {

using NamedParams = std::vector<std::pair<std::string, ad::Tensor>>;

// Glorot-uniform initialization: uniform in +-sqrt(6 / (fan_in + fan_out)).
inline ad::Tensor glorot(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return ad::Tensor::from_data({fan_in, fan_out}, std::move(data), /*requires_grad=*/true);
}

// Dense layer over row vectors: x [m x in] -> x W + b, W [in x out].
struct Linear {
  ad::Tensor W;
  ad::Tensor b;  // undefined when the layer has no bias

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true) {
    W = glorot(in, out, rng);
    if (bias) b = ad::Tensor::zeros({out}, /*requires_grad=*/true);
  }

  ad::Tensor operator()(ad::Tape& tape, const ad::Tensor& x) const {
    ad::Tensor y = tape.matmul(x, W);
    if (b.defined()) y = tape.add_row_vector(y, b);
    return y;
  }

  void zero_init() {
    for (auto& v : W.data_mut()) v = 0.0;
    if (b.defined())
      for (auto& v : b.data_mut()) v = 0.0;
  }

  void collect(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".W", W);
    if (b.defined()) out.emplace_back(prefix + ".b", b);
  }
};

// Sinusoidal encoding of an integer position: even dims sin(pos/10000^(2i/d)),
// odd dims cos of the same argument. Shared by the forecaster's positional
// table and the denoiser's timestep embedding.
inline std::vector<double> sinusoidal_encoding(int pos, int dim) {
  std::vector<double> enc(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
    const double arg = static_cast<double>(pos) / freq;
    enc[static_cast<std::size_t>(i)] = std::sin(arg);
    if (i + 1 < dim) enc[static_cast<std::size_t>(i) + 1] = std::cos(arg);
  }
  return enc;
}

}  // namespace pkml::nn
