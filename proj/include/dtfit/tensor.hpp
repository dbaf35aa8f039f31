#pragma once

// Dense row-major tensors with a reverse-mode tape. Each op allocates a new
// node; inputs are never mutated. Backward walks the recorded graph once in
// reverse topological order and accumulates into leaf gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "dtfit/common.hpp"
#include "dtfit/rng.hpp"

namespace dtfit {

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily; absent on no-grad leaves
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // true if this node or any input requires grad
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<S>>> inputs;
  std::function<void(Node<S>&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, S fill, bool requires_grad = false) {
    node_ = std::make_shared<Node<S>>();
    node_->shape = std::move(shape);
    node_->value.assign(shape_size(node_->shape), fill);
    node_->requires_grad = requires_grad;
    node_->needs_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), S(0), requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<S> data,
                          bool requires_grad = false) {
    DTFIT_CHECK(shape_size(shape) == static_cast<int64_t>(data.size()),
                ShapeError, "from_data: shape ", shape_str(shape),
                " does not match data length ", data.size());
    Tensor t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.node_->needs_grad = requires_grad;
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    std::vector<S> data(shape_size(shape));
    for (auto& v : data) v = static_cast<S>(rng.normal() * stddev);
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t rows() const { return node_->shape.at(0); }
  int64_t cols() const { return node_->shape.at(1); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const char* op() const { return node_->op; }

  const std::vector<S>& values() const { return node_->value; }
  const std::vector<S>& grad() const { return node_->grad; }

  S value_at(int64_t i) const { return node_->value[i]; }
  S scalar() const {
    DTFIT_CHECK(size() == 1, ContractError, "scalar() on tensor of size ",
                size());
    return node_->value[0];
  }

  // Explicit mutation points. Only parameter updates and test setup go
  // through these; ops never touch an existing buffer.
  std::vector<S>& mutable_values() { return node_->value; }
  std::vector<S>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }
  void drop_grad() { node_->grad.clear(); }

  std::shared_ptr<Node<S>> node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;

  template <class T>
  friend Tensor<T> make_op(const char* op, Shape shape,
                           std::vector<Tensor<T>> inputs,
                           std::function<void(Node<T>&)> backward);
};

template <class S>
Tensor<S> make_op(const char* op, Shape shape, std::vector<Tensor<S>> inputs,
                  std::function<void(Node<S>&)> backward) {
  Tensor<S> out;
  out.node_ = std::make_shared<Node<S>>();
  out.node_->shape = std::move(shape);
  out.node_->value.resize(shape_size(out.node_->shape));
  out.node_->op = op;
  bool needs = false;
  for (auto& t : inputs) {
    needs = needs || t.node()->needs_grad;
    out.node_->inputs.push_back(t.node());
  }
  out.node_->needs_grad = needs;
  if (needs) out.node_->backward = std::move(backward);
  return out;
}

template <class S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {
template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  DTFIT_CHECK(a.shape() == b.shape(), ShapeError, op, ": shape mismatch ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = make_op<S>("add", a.shape(), {a, b}, [](Node<S>& n) {
    for (size_t k = 0; k < 2; ++k) {
      auto& in = n.inputs[k];
      if (!in->needs_grad) continue;
      in->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
    }
  });
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = make_op<S>("sub", a.shape(), {a, b}, [](Node<S>& n) {
    auto& ia = n.inputs[0];
    auto& ib = n.inputs[1];
    if (ia->needs_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) ia->grad[i] += n.grad[i];
    }
    if (ib->needs_grad) {
      ib->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) ib->grad[i] -= n.grad[i];
    }
  });
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = make_op<S>("mul", a.shape(), {a, b}, [](Node<S>& n) {
    auto& ia = n.inputs[0];
    auto& ib = n.inputs[1];
    if (ia->needs_grad) {
      ia->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        ia->grad[i] += n.grad[i] * ib->value[i];
    }
    if (ib->needs_grad) {
      ib->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        ib->grad[i] += n.grad[i] * ia->value[i];
    }
  });
  const auto &av = a.values(), &bv = b.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  return out;
}

// scalar-with-tensor broadcasts
template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  S sc = static_cast<S>(c);
  auto out = make_op<S>("scale", a.shape(), {a}, [sc](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i] * sc;
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * sc;
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, double c) {
  S sc = static_cast<S>(c);
  auto out = make_op<S>("add_scalar", a.shape(), {a}, [](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + sc;
  return out;
}

namespace detail {
// tanh-approximation GELU and its exact derivative
template <class S>
inline S gelu_fwd(S x) {
  const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S k = static_cast<S>(0.044715);
  S u = c * (x + k * x * x * x);
  return static_cast<S>(0.5) * x * (S(1) + std::tanh(u));
}
template <class S>
inline S gelu_bwd(S x) {
  const S c = static_cast<S>(0.7978845608028654);
  const S k = static_cast<S>(0.044715);
  S u = c * (x + k * x * x * x);
  S t = std::tanh(u);
  S sech2 = S(1) - t * t;
  S du = c * (S(1) + S(3) * k * x * x);
  return static_cast<S>(0.5) * (S(1) + t) + static_cast<S>(0.5) * x * sech2 * du;
}
}  // namespace detail

template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  auto out = make_op<S>("gelu", a.shape(), {a}, [](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] * detail::gelu_bwd(in->value[i]);
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = detail::gelu_fwd(av[i]);
  return out;
}

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  auto out = make_op<S>("exp", a.shape(), {a}, [](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] * n.value[i];
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  return out;
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
  for (S v : a.values())
    DTFIT_CHECK(v > S(0), DomainError, "log: non-positive input ", v);
  auto out = make_op<S>("log", a.shape(), {a}, [](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] / in->value[i];
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(av[i]);
  return out;
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& a) {
  for (S v : a.values())
    DTFIT_CHECK(v >= S(0), DomainError, "sqrt: negative input ", v);
  auto out = make_op<S>("sqrt", a.shape(), {a}, [](Node<S>& n) {
    auto& in = n.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      in->grad[i] += n.grad[i] / (S(2) * n.value[i]);
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(av[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops (Eigen-backed kernels)

namespace detail {
template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;
}  // namespace detail

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  DTFIT_CHECK(a.shape().size() == 2 && b.shape().size() == 2, ShapeError,
              "matmul: rank-2 operands required");
  const int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  DTFIT_CHECK(k == k2, ShapeError, "matmul: inner extents differ, ",
              shape_str(a.shape()), " x ", shape_str(b.shape()));
  auto out = make_op<S>("matmul", {m, n}, {a, b}, [m, k, n](Node<S>& n_) {
    auto& ia = n_.inputs[0];
    auto& ib = n_.inputs[1];
    detail::ECMap<S> A(ia->value.data(), m, k);
    detail::ECMap<S> B(ib->value.data(), k, n);
    detail::ECMap<S> dC(n_.grad.data(), m, n);
    if (ia->needs_grad) {
      ia->ensure_grad();
      detail::EMap<S> dA(ia->grad.data(), m, k);
      dA.noalias() += dC * B.transpose();
    }
    if (ib->needs_grad) {
      ib->ensure_grad();
      detail::EMap<S> dB(ib->grad.data(), k, n);
      dB.noalias() += A.transpose() * dC;
    }
  });
  detail::ECMap<S> A(a.values().data(), m, k);
  detail::ECMap<S> B(b.values().data(), k, n);
  detail::EMap<S> C(out.mutable_values().data(), m, n);
  C.noalias() = A * B;
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  DTFIT_CHECK(a.shape().size() == 2, ShapeError, "transpose: rank-2 required");
  const int64_t m = a.rows(), n = a.cols();
  auto out = make_op<S>("transpose", {n, m}, {a}, [m, n](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        in->grad[i * n + j] += nd.grad[j * m + i];
  });
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
  return out;
}

// ---------------------------------------------------------------------------
// Row-vector broadcasts

// x[m x n] + b[n], the only implicit tensor-tensor broadcast
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& b) {
  DTFIT_CHECK(x.shape().size() == 2, ShapeError, "add_rowvec: x must be rank-2");
  const int64_t m = x.rows(), n = x.cols();
  DTFIT_CHECK(static_cast<int64_t>(b.size()) == n, ShapeError,
              "add_rowvec: vector length ", b.size(), " != cols ", n);
  auto out = make_op<S>("add_rowvec", x.shape(), {x, b}, [m, n](Node<S>& nd) {
    auto& ix = nd.inputs[0];
    auto& ib = nd.inputs[1];
    if (ix->needs_grad) {
      ix->ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i) ix->grad[i] += nd.grad[i];
    }
    if (ib->needs_grad) {
      ib->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ib->grad[j] += nd.grad[i * n + j];
    }
  });
  const auto &xv = x.values(), &bv = b.values();
  auto& ov = out.mutable_values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
  return out;
}

// tile a length-n vector (or 1 x n row) into rows identical copies
template <class S>
Tensor<S> broadcast_row(const Tensor<S>& v, int64_t rows) {
  const int64_t n = (v.shape().size() == 2) ? v.cols() : static_cast<int64_t>(v.size());
  DTFIT_CHECK(static_cast<int64_t>(v.size()) == n, ShapeError,
              "broadcast_row: expected a vector or single row, got ",
              shape_str(v.shape()));
  auto out = make_op<S>("broadcast_row", {rows, n}, {v}, [rows, n](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < n; ++j) in->grad[j] += nd.grad[i * n + j];
  });
  const auto& vv = v.values();
  auto& ov = out.mutable_values();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < n; ++j) ov[i * n + j] = vv[j];
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / layernorm / reductions

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const auto& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  DTFIT_CHECK(axis >= 0 && axis < rank, ShapeError, "softmax: axis ", axis,
              " out of range for rank ", rank);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
  const int64_t an = shape[axis];

  auto out = make_op<S>("softmax", shape, {x}, [outer, inner, an](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        S dot = S(0);
        for (int64_t k = 0; k < an; ++k) {
          int64_t idx = (o * an + k) * inner + i;
          dot += nd.grad[idx] * nd.value[idx];
        }
        for (int64_t k = 0; k < an; ++k) {
          int64_t idx = (o * an + k) * inner + i;
          in->grad[idx] += nd.value[idx] * (nd.grad[idx] - dot);
        }
      }
  });
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      S mx = xv[(o * an) * inner + i];
      for (int64_t k = 1; k < an; ++k)
        mx = std::max(mx, xv[(o * an + k) * inner + i]);
      S sum = S(0);
      for (int64_t k = 0; k < an; ++k) {
        int64_t idx = (o * an + k) * inner + i;
        ov[idx] = std::exp(xv[idx] - mx);
        sum += ov[idx];
      }
      for (int64_t k = 0; k < an; ++k) ov[(o * an + k) * inner + i] /= sum;
    }
  return out;
}

// normalization over the last axis, then per-column affine
template <class S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gain,
                    const Tensor<S>& bias, double eps) {
  DTFIT_CHECK(eps > 0, ParamError, "layernorm: eps must be positive");
  const auto& shape = x.shape();
  const int64_t n = shape.back();
  const int64_t m = shape_size(shape) / n;
  DTFIT_CHECK(static_cast<int64_t>(gain.size()) == n &&
                  static_cast<int64_t>(bias.size()) == n,
              ShapeError, "layernorm: gain/bias length must equal last axis");
  S epss = static_cast<S>(eps);

  auto out = make_op<S>(
      "layernorm", shape, {x, gain, bias}, [m, n, epss](Node<S>& nd) {
        auto& ix = nd.inputs[0];
        auto& ig = nd.inputs[1];
        auto& ib = nd.inputs[2];
        if (ig->needs_grad) ig->ensure_grad();
        if (ib->needs_grad) ib->ensure_grad();
        if (ix->needs_grad) ix->ensure_grad();
        for (int64_t r = 0; r < m; ++r) {
          const S* xr = ix->value.data() + r * n;
          const S* dy = nd.grad.data() + r * n;
          S mu = S(0);
          for (int64_t j = 0; j < n; ++j) mu += xr[j];
          mu /= static_cast<S>(n);
          S var = S(0);
          for (int64_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
          var /= static_cast<S>(n);
          S inv = S(1) / std::sqrt(var + epss);
          if (ig->needs_grad || ib->needs_grad) {
            for (int64_t j = 0; j < n; ++j) {
              S xhat = (xr[j] - mu) * inv;
              if (ig->needs_grad) ig->grad[j] += dy[j] * xhat;
              if (ib->needs_grad) ib->grad[j] += dy[j];
            }
          }
          if (ix->needs_grad) {
            // dxhat = dy * gain; reduce via mean terms
            S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
            for (int64_t j = 0; j < n; ++j) {
              S xhat = (xr[j] - mu) * inv;
              S dxh = dy[j] * ig->value[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat;
            }
            for (int64_t j = 0; j < n; ++j) {
              S xhat = (xr[j] - mu) * inv;
              S dxh = dy[j] * ig->value[j];
              ix->grad[r * n + j] +=
                  inv * (dxh - (sum_dxhat + xhat * sum_dxhat_xhat) /
                                   static_cast<S>(n));
            }
          }
        }
      });
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  auto& ov = out.mutable_values();
  for (int64_t r = 0; r < m; ++r) {
    const S* xr = xv.data() + r * n;
    S mu = S(0);
    for (int64_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<S>(n);
    S var = S(0);
    for (int64_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<S>(n);
    S inv = S(1) / std::sqrt(var + epss);
    for (int64_t j = 0; j < n; ++j)
      ov[r * n + j] = (xr[j] - mu) * inv * gv[j] + bv[j];
  }
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = make_op<S>("sum", {1}, {x}, [](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (auto& g : in->grad) g += nd.grad[0];
  });
  S s = S(0);
  for (S v : x.values()) s += v;
  out.mutable_values()[0] = s;
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  const S n = static_cast<S>(x.size());
  auto out = make_op<S>("mean", {1}, {x}, [n](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (auto& g : in->grad) g += nd.grad[0] / n;
  });
  S s = S(0);
  for (S v : x.values()) s += v;
  out.mutable_values()[0] = s / n;
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int64_t c0, int64_t c1) {
  DTFIT_CHECK(x.shape().size() == 2, ShapeError, "slice_cols: rank-2 required");
  const int64_t m = x.rows(), n = x.cols();
  DTFIT_CHECK(0 <= c0 && c0 < c1 && c1 <= n, ShapeError,
              "slice_cols: [", c0, ",", c1, ") out of range for ", n, " cols");
  const int64_t w = c1 - c0;
  auto out = make_op<S>("slice_cols", {m, w}, {x}, [m, n, c0, w](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j)
        in->grad[i * n + c0 + j] += nd.grad[i * w + j];
  });
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j) ov[i * w + j] = xv[i * n + c0 + j];
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  DTFIT_CHECK(!parts.empty(), ContractError, "concat_cols: empty input");
  const int64_t m = parts[0].rows();
  int64_t n = 0;
  for (const auto& p : parts) {
    DTFIT_CHECK(p.shape().size() == 2 && p.rows() == m, ShapeError,
                "concat_cols: row mismatch");
    n += p.cols();
  }
  std::vector<int64_t> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  auto out = make_op<S>("concat_cols", {m, n}, parts, [m, n, widths](Node<S>& nd) {
    int64_t off = 0;
    for (size_t k = 0; k < nd.inputs.size(); ++k) {
      auto& in = nd.inputs[k];
      const int64_t w = widths[k];
      if (in->needs_grad) {
        in->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < w; ++j)
            in->grad[i * w + j] += nd.grad[i * n + off + j];
      }
      off += w;
    }
  });
  auto& ov = out.mutable_values();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p.cols();
    const auto& pv = p.values();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j) ov[i * n + off + j] = pv[i * w + j];
    off += w;
  }
  return out;
}

// Rotates consecutive value pairs (x[2k], x[2k+1]) of every row by the row's
// k-th angle. Orthogonal, so backward applies the inverse rotation.
template <class S>
Tensor<S> rotate_pairs(const Tensor<S>& x, std::vector<S> angles) {
  DTFIT_CHECK(x.shape().size() == 2 && x.cols() % 2 == 0, ShapeError,
              "rotate_pairs: rank-2 with even column count required");
  const int64_t m = x.rows(), n = x.cols(), h = n / 2;
  DTFIT_CHECK(static_cast<int64_t>(angles.size()) == m * h, ShapeError,
              "rotate_pairs: need rows*cols/2 angles, got ", angles.size());
  std::vector<S> cs(m * h), sn(m * h);
  for (int64_t i = 0; i < m * h; ++i) {
    cs[i] = std::cos(angles[i]);
    sn[i] = std::sin(angles[i]);
  }
  auto out = make_op<S>("rotate_pairs", x.shape(), {x},
                        [m, n, h, cs, sn](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t k = 0; k < h; ++k) {
        S c = cs[i * h + k], s = sn[i * h + k];
        S d0 = nd.grad[i * n + 2 * k], d1 = nd.grad[i * n + 2 * k + 1];
        in->grad[i * n + 2 * k] += c * d0 + s * d1;
        in->grad[i * n + 2 * k + 1] += -s * d0 + c * d1;
      }
  });
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t k = 0; k < h; ++k) {
      S c = cs[i * h + k], s = sn[i * h + k];
      S x0 = xv[i * n + 2 * k], x1 = xv[i * n + 2 * k + 1];
      ov[i * n + 2 * k] = c * x0 - s * x1;
      ov[i * n + 2 * k + 1] = s * x0 + c * x1;
    }
  return out;
}

// image [c,h,w] -> tokens [(h/p)*(w/p), p*p*c]; pure index permutation
template <class S>
Tensor<S> patchify(const Tensor<S>& x, int64_t p) {
  DTFIT_CHECK(x.shape().size() == 3, ShapeError, "patchify: [c,h,w] required");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  DTFIT_CHECK(p >= 1 && h % p == 0 && w % p == 0, ShapeError,
              "patchify: extents ", h, "x", w, " not divisible by patch ", p);
  const int64_t gh = h / p, gw = w / p;
  const int64_t ntok = gh * gw, tdim = p * p * c;
  std::vector<int64_t> src(ntok * tdim);
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px) {
            int64_t tok = gy * gw + gx;
            int64_t col = (ch * p + py) * p + px;
            src[tok * tdim + col] = (ch * h + gy * p + py) * w + gx * p + px;
          }
  auto out = make_op<S>("patchify", {ntok, tdim}, {x}, [src](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < src.size(); ++i) in->grad[src[i]] += nd.grad[i];
  });
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < src.size(); ++i) ov[i] = xv[src[i]];
  return out;
}

template <class S>
Tensor<S> unpatchify(const Tensor<S>& tokens, int64_t c, int64_t h, int64_t w,
                     int64_t p) {
  DTFIT_CHECK(tokens.shape().size() == 2, ShapeError,
              "unpatchify: rank-2 tokens required");
  const int64_t gh = h / p, gw = w / p;
  DTFIT_CHECK(h % p == 0 && w % p == 0 && tokens.rows() == gh * gw &&
                  tokens.cols() == p * p * c,
              ShapeError, "unpatchify: token grid does not match image dims");
  const int64_t tdim = p * p * c;
  std::vector<int64_t> dst(tokens.size());
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px) {
            int64_t tok = gy * gw + gx;
            int64_t col = (ch * p + py) * p + px;
            dst[tok * tdim + col] = (ch * h + gy * p + py) * w + gx * p + px;
          }
  auto out = make_op<S>("unpatchify", {c, h, w}, {tokens}, [dst](Node<S>& nd) {
    auto& in = nd.inputs[0];
    if (!in->needs_grad) return;
    in->ensure_grad();
    for (size_t i = 0; i < dst.size(); ++i) in->grad[i] += nd.grad[dst[i]];
  });
  const auto& tv = tokens.values();
  auto& ov = out.mutable_values();
  for (size_t i = 0; i < dst.size(); ++i) ov[dst[i]] = tv[i];
  return out;
}

// ---------------------------------------------------------------------------
// Backward

// Reverse-mode sweep from a scalar loss. Each reachable node is visited
// exactly once; repeated calls accumulate into existing gradients.
template <class S>
void backward(const Tensor<S>& loss) {
  DTFIT_CHECK(loss.size() == 1, ContractError,
              "backward: loss must be scalar, got ", shape_str(loss.shape()));
  // iterative post-order DFS for a deterministic topological order
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node<S>* child = node->inputs[idx++].get();
      if (child->needs_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // interior gradients are per-sweep scratch; only requires_grad leaves
  // accumulate across repeated calls
  for (Node<S>* n : order) {
    if (!n->requires_grad && !n->grad.empty())
      std::fill(n->grad.begin(), n->grad.end(), S(0));
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace dtfit
