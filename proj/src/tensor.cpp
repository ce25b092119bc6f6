#include "pkml/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pkml::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap mat_of(const detail::TensorImpl& t, int r, int c) {
  return ConstMatMap(t.data.data(), r, c);
}

MatMap mat_of_grad(detail::TensorImpl& t, int r, int c) {
  return MatMap(t.grad.data(), r, c);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " + shape_str(t.shape()));
  }
}

}  // namespace

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), value);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  if (data.size() != t.impl_->data.size()) {
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values do not fill shape " +
                     shape_str(shape));
  }
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

int Tensor::rows() const {
  const Shape& s = impl_->shape;
  return s.size() == 2 ? s[0] : 1;
}

int Tensor::cols() const {
  const Shape& s = impl_->shape;
  return s.size() == 2 ? s[1] : shape_numel(s);
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
}

double Tensor::operator()(int r, int c) const {
  return impl_->data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
                     static_cast<std::size_t>(c)];
}

void Tensor::set(int r, int c, double v) {
  impl_->data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
              static_cast<std::size_t>(c)] = v;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value(): tensor has " + std::to_string(size()) + " elements, expected 1");
  }
  return impl_->data[0];
}

namespace detail {
void accumulate_grad(TensorImpl& t, std::span<const double> g) {
  if (!t.requires_grad) return;
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += g[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

bool Tape::any_requires_grad(const std::vector<Tensor>& ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.requires_grad(); });
}

Tensor Tape::record(const char* kind, std::vector<Tensor> inputs, Shape out_shape,
                    std::function<void(const Op&)> back) {
  Tensor out = Tensor::zeros(std::move(out_shape), any_requires_grad(inputs));
  out.impl_->node_id = next_id_++;
  Op op;
  op.kind = kind;
  op.inputs.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.impl_->node_id < 0) t.impl_->node_id = next_id_++;
    op.inputs.push_back(t.impl_);
  }
  op.out = out.impl_;
  op.back = std::move(back);
  ops_.push_back(std::move(op));
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = record("matmul", {a, b}, {m, n}, [m, k, n](const Op& op) {
    auto& ia = *op.inputs[0];
    auto& ib = *op.inputs[1];
    ConstMatMap A = mat_of(ia, m, k);
    ConstMatMap B = mat_of(ib, k, n);
    ConstMatMap G(op.out->grad.data(), m, n);
    if (ia.requires_grad) {
      if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
      mat_of_grad(ia, m, k).noalias() += G * B.transpose();
    }
    if (ib.requires_grad) {
      if (ib.grad.empty()) ib.grad.assign(ib.data.size(), 0.0);
      mat_of_grad(ib, k, n).noalias() += A.transpose() * G;
    }
  });
  MatMap(out.impl_->data.data(), m, n).noalias() =
      mat_of(*a.impl_, m, k) * mat_of(*b.impl_, k, n);
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = record("add", {a, b}, a.shape(), [](const Op& op) {
    detail::accumulate_grad(*op.inputs[0], op.out->grad);
    detail::accumulate_grad(*op.inputs[1], op.out->grad);
  });
  const auto& da = a.data();
  const auto& db = b.data();
  auto dout = out.data_mut();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] + db[i];
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = record("sub", {a, b}, a.shape(), [](const Op& op) {
    detail::accumulate_grad(*op.inputs[0], op.out->grad);
    auto& ib = *op.inputs[1];
    if (ib.requires_grad) {
      if (ib.grad.empty()) ib.grad.assign(ib.data.size(), 0.0);
      for (std::size_t i = 0; i < ib.grad.size(); ++i) ib.grad[i] -= op.out->grad[i];
    }
  });
  const auto& da = a.data();
  const auto& db = b.data();
  auto dout = out.data_mut();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] - db[i];
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = record("mul", {a, b}, a.shape(), [](const Op& op) {
    auto& ia = *op.inputs[0];
    auto& ib = *op.inputs[1];
    const auto& g = op.out->grad;
    if (ia.requires_grad) {
      if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) ia.grad[i] += g[i] * ib.data[i];
    }
    if (ib.requires_grad) {
      if (ib.grad.empty()) ib.grad.assign(ib.data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) ib.grad[i] += g[i] * ia.data[i];
    }
  });
  const auto& da = a.data();
  const auto& db = b.data();
  auto dout = out.data_mut();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] * db[i];
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out = record("scale", {a}, a.shape(), [c](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const auto& g = op.out->grad;
    for (std::size_t i = 0; i < g.size(); ++i) ia.grad[i] += c * g[i];
  });
  const auto& da = a.data();
  auto dout = out.data_mut();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = c * da[i];
  return out;
}

Tensor Tape::add_row_vector(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_row_vector");
  const int m = a.shape()[0], n = a.shape()[1];
  if (bias.size() != n) {
    throw ShapeError("add_row_vector: bias " + shape_str(bias.shape()) + " does not match row width of " +
                     shape_str(a.shape()));
  }
  Tensor out = record("add_row_vector", {a, bias}, a.shape(), [m, n](const Op& op) {
    detail::accumulate_grad(*op.inputs[0], op.out->grad);
    auto& ib = *op.inputs[1];
    if (!ib.requires_grad) return;
    if (ib.grad.empty()) ib.grad.assign(ib.data.size(), 0.0);
    const auto& g = op.out->grad;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) ib.grad[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r) * n + c];
  });
  const auto& da = a.data();
  const auto& db = bias.data();
  auto dout = out.data_mut();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * n + c;
      dout[i] = da[i] + db[static_cast<std::size_t>(c)];
    }
  return out;
}

Tensor Tape::relu(const Tensor& a) {
  Tensor out = record("relu", {a}, a.shape(), [](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const auto& g = op.out->grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (ia.data[i] > 0.0) ia.grad[i] += g[i];
  });
  const auto& da = a.data();
  auto dout = out.data_mut();
  for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] > 0.0 ? da[i] : 0.0;
  return out;
}

Tensor Tape::softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const int m = a.shape()[0], n = a.shape()[1];
  for (double v : a.data()) {
    if (std::isnan(v)) throw NumericError("softmax_rows: NaN in input");
  }
  Tensor out = record("softmax_rows", {a}, a.shape(), [m, n](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const auto& y = op.out->data;
    const auto& g = op.out->grad;
    for (int r = 0; r < m; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * n;
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += g[base + c] * y[base + c];
      for (int c = 0; c < n; ++c) ia.grad[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
  const auto& da = a.data();
  auto dout = out.data_mut();
  for (int r = 0; r < m; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n; ++c) mx = std::max(mx, da[base + c]);
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
      const double e = std::exp(da[base + c] - mx);
      dout[base + c] = e;
      sum += e;
    }
    for (int c = 0; c < n; ++c) dout[base + c] /= sum;
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out = record("transpose", {a}, {n, m}, [m, n](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const auto& g = op.out->grad;  // [n x m]
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c)
        ia.grad[static_cast<std::size_t>(r) * n + c] += g[static_cast<std::size_t>(c) * m + r];
  });
  const auto& da = a.data();
  auto dout = out.data_mut();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) dout[static_cast<std::size_t>(c) * m + r] = da[static_cast<std::size_t>(r) * n + c];
  return out;
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int n = parts[0].cols();
  int total_rows = 0;
  std::vector<Tensor> inputs;
  inputs.reserve(parts.size());
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.shape()[1] != n) {
      throw ShapeError("concat_rows: column mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total_rows += p.shape()[0];
    inputs.push_back(p);
  }
  Tensor out = record("concat_rows", std::move(inputs), {total_rows, n}, [n](const Op& op) {
    const auto& g = op.out->grad;
    std::size_t offset = 0;
    for (auto& in : op.inputs) {
      const std::size_t len = in->data.size();
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(len, 0.0);
        for (std::size_t i = 0; i < len; ++i) in->grad[i] += g[offset + i];
      }
      offset += len;
    }
  });
  auto dout = out.data_mut();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const auto& dp = p.data();
    std::copy(dp.begin(), dp.end(), dout.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += dp.size();
  }
  return out;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int total_cols = 0;
  std::vector<Tensor> inputs;
  std::vector<int> widths;
  inputs.reserve(parts.size());
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != m) {
      throw ShapeError("concat_cols: row mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total_cols += p.shape()[1];
    inputs.push_back(p);
  }
  Tensor out = record("concat_cols", std::move(inputs), {m, total_cols},
                      [m, total_cols, widths](const Op& op) {
    const auto& g = op.out->grad;
    int col0 = 0;
    for (std::size_t p = 0; p < op.inputs.size(); ++p) {
      auto& in = *op.inputs[p];
      const int w = widths[p];
      if (in.requires_grad) {
        if (in.grad.empty()) in.grad.assign(in.data.size(), 0.0);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < w; ++c)
            in.grad[static_cast<std::size_t>(r) * w + c] +=
                g[static_cast<std::size_t>(r) * total_cols + col0 + c];
      }
      col0 += w;
    }
  });
  auto dout = out.data_mut();
  int col0 = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& dp = parts[p].data();
    const int w = widths[p];
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < w; ++c)
        dout[static_cast<std::size_t>(r) * total_cols + col0 + c] = dp[static_cast<std::size_t>(r) * w + c];
    col0 += w;
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& a, int start, int count) {
  require_rank2(a, "slice_rows");
  const int m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || count <= 0 || start + count > m) {
    throw ContractError("slice_rows: range [" + std::to_string(start) + ", " +
                        std::to_string(start + count) + ") out of " + std::to_string(m) + " rows");
  }
  Tensor out = record("slice_rows", {a}, {count, n}, [start, count, n](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const auto& g = op.out->grad;
    for (int r = 0; r < count; ++r)
      for (int c = 0; c < n; ++c)
        ia.grad[static_cast<std::size_t>(start + r) * n + c] += g[static_cast<std::size_t>(r) * n + c];
  });
  const auto& da = a.data();
  auto dout = out.data_mut();
  std::copy(da.begin() + static_cast<std::ptrdiff_t>(start) * n,
            da.begin() + static_cast<std::ptrdiff_t>(start + count) * n, dout.begin());
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  Tensor out = record("sum", {a}, {1}, [](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const double g = op.out->grad[0];
    for (auto& v : ia.grad) v += g;
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.set(0, s);
  return out;
}

Tensor Tape::mean(const Tensor& a) {
  const double inv_n = 1.0 / static_cast<double>(a.size());
  Tensor out = record("mean", {a}, {1}, [inv_n](const Op& op) {
    auto& ia = *op.inputs[0];
    if (!ia.requires_grad) return;
    if (ia.grad.empty()) ia.grad.assign(ia.data.size(), 0.0);
    const double g = op.out->grad[0] * inv_n;
    for (auto& v : ia.grad) v += g;
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.set(0, s * inv_n);
  return out;
}

Tensor Tape::mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  Tensor out = record("mse_loss", {pred, target}, {1}, [inv_n](const Op& op) {
    auto& ip = *op.inputs[0];
    auto& it = *op.inputs[1];
    const double g = op.out->grad[0];
    if (ip.requires_grad) {
      if (ip.grad.empty()) ip.grad.assign(ip.data.size(), 0.0);
      for (std::size_t i = 0; i < ip.data.size(); ++i)
        ip.grad[i] += g * 2.0 * inv_n * (ip.data[i] - it.data[i]);
    }
    if (it.requires_grad) {
      if (it.grad.empty()) it.grad.assign(it.data.size(), 0.0);
      for (std::size_t i = 0; i < it.data.size(); ++i)
        it.grad[i] -= g * 2.0 * inv_n * (ip.data[i] - it.data[i]);
    }
  });
  double s = 0.0;
  const auto& dp = pred.data();
  const auto& dt = target.data();
  for (std::size_t i = 0; i < dp.size(); ++i) {
    const double d = dp[i] - dt[i];
    s += d * d;
  }
  out.set(0, s * inv_n);
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  // Reset gradients of everything produced on this tape; leaf gradients are
  // left alone so they accumulate across tapes (e.g. over a minibatch).
  for (auto& op : ops_) op.out->grad.clear();
  if (!loss.requires_grad()) return;  // no parameters reachable
  loss.impl_->grad.assign(1, 1.0);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not reachable from the loss
    it->back(*it);
  }
}

}  // namespace pkml::ad
