#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace hoi {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

template <class Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Value-semantics handle around a shared autodiff node.  Ops build a graph;
// backward() on a scalar accumulates into every reachable grad buffer and
// then releases the tape so training memory stays flat.
template <class Real>
class Tensor {
 public:
  using Node = TensorNode<Real>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node(std::move(n)) {}

  static Tensor from(Shape s, std::vector<Real> data) {
    if (numel(s) != data.size())
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(s));
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor full(const Shape& s, Real v) {
    return from(s, std::vector<Real>(numel(s), v));
  }
  static Tensor zeros(const Shape& s) { return full(s, Real(0)); }
  static Tensor ones(const Shape& s) { return full(s, Real(1)); }
  static Tensor scalar(Real v) { return from({1}, {v}); }

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  std::size_t size() const { return node->value.size(); }
  std::size_t dim() const { return node->shape.size(); }
  const std::vector<Real>& values() const { return node->value; }
  std::vector<Real>& values_mut() { return node->value; }
  Real at(std::size_t i) const { return node->value[i]; }

  Real item() const {
    if (size() != 1)
      throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node->value[0];
  }

  Tensor& set_requires_grad(bool b = true) {
    node->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return node->requires_grad; }

  const std::vector<Real>& grad() const {
    node->ensure_grad();
    return node->grad;
  }
  std::vector<Real>& grad_mut() {
    node->ensure_grad();
    return node->grad;
  }
  void zero_grad() { node->grad.assign(node->value.size(), Real(0)); }

  void backward() {
    if (size() != 1)
      throw ShapeError("backward() requires a scalar, got " +
                       shape_str(shape()));
    std::vector<Node*> order;
    topo_sort(order);
    node->ensure_grad();
    node->grad[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
    for (Node* n : order) {  // release the tape
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }

  std::shared_ptr<Node> node;

 private:
  void topo_sort(std::vector<Node*>& order) const {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({node.get(), 0});
    seen.insert(node.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }
};

namespace detail {

template <class Real>
std::shared_ptr<TensorNode<Real>> make_op_node(
    Shape shape, std::vector<Real> value,
    std::vector<Tensor<Real>> inputs,
    std::function<void(TensorNode<Real>&)> backward_fn) {
  auto n = std::make_shared<TensorNode<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.node->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b,
                             const char* opname) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(opname) + ": cannot broadcast " +
                       shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `s` aligned to `out`, zeroed on broadcast axes.
inline std::vector<std::size_t> bcast_strides(const Shape& s,
                                              const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t ri = s.size() - 1 - i;
    std::size_t ro = out.size() - 1 - i;
    st[ro] = (s[ri] == 1 && out[ro] != 1) ? 0 : acc;
    acc *= s[ri];
  }
  return st;
}

// Odometer walk over `out`, yielding flat offsets into both operands.
template <class Fn>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& astr,
                    const std::vector<std::size_t>& bstr, Fn&& fn) {
  std::size_t n = numel(out);
  std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ao, bo);
    for (std::size_t r = rank; r-- > 0;) {
      ++idx[r];
      ao += astr[r];
      bo += bstr[r];
      if (idx[r] < out[r]) break;
      ao -= astr[r] * out[r];
      bo -= bstr[r] * out[r];
      idx[r] = 0;
    }
  }
}

}  // namespace detail

// ---- elementwise binary ops with trailing broadcast ----

template <class Real, class FwdFn, class BwdFn>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b,
                       const char* name, FwdFn fwd, BwdFn bwd) {
  Shape out = detail::broadcast_shape(a.shape(), b.shape(), name);
  auto astr = detail::bcast_strides(a.shape(), out);
  auto bstr = detail::bcast_strides(b.shape(), out);
  std::vector<Real> v(numel(out));
  const auto& av = a.values();
  const auto& bv = b.values();
  detail::for_each_bcast(out, astr, bstr,
                         [&](std::size_t o, std::size_t ao, std::size_t bo) {
                           v[o] = fwd(av[ao], bv[bo]);
                         });
  Shape out_copy = out;
  auto back = [out = std::move(out_copy), astr, bstr,
               bwd](TensorNode<Real>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    detail::for_each_bcast(
        out, astr, bstr, [&](std::size_t o, std::size_t ao, std::size_t bo) {
          Real da, db;
          bwd(pa.value[ao], pb.value[bo], n.value[o], da, db);
          if (pa.requires_grad) pa.grad[ao] += n.grad[o] * da;
          if (pb.requires_grad) pb.grad[bo] += n.grad[o] * db;
        });
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(out), std::move(v),
                                                 {a, b}, std::move(back)));
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      a, b, "add", [](Real x, Real y) { return x + y; },
      [](Real, Real, Real, Real& da, Real& db) {
        da = Real(1);
        db = Real(1);
      });
}

template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      a, b, "sub", [](Real x, Real y) { return x - y; },
      [](Real, Real, Real, Real& da, Real& db) {
        da = Real(1);
        db = Real(-1);
      });
}

template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      a, b, "mul", [](Real x, Real y) { return x * y; },
      [](Real x, Real y, Real, Real& da, Real& db) {
        da = y;
        db = x;
      });
}

template <class Real>
Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_op(
      a, b, "div", [](Real x, Real y) { return x / y; },
      [](Real x, Real y, Real, Real& da, Real& db) {
        da = Real(1) / y;
        db = -x / (y * y);
      });
}

// ---- unary ops ----

template <class Real, class FwdFn, class BwdFn>
Tensor<Real> unary_op(const Tensor<Real>& a, FwdFn fwd, BwdFn bwd) {
  std::vector<Real> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.at(i));
  auto back = [bwd](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.value.size(); ++i)
      p.grad[i] += n.grad[i] * bwd(p.value[i], n.value[i]);
  };
  return Tensor<Real>(detail::make_op_node<Real>(a.shape(), std::move(v), {a},
                                                 std::move(back)));
}

template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return -x; }, [](Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, double s) {
  return unary_op(
      a, [s](Real x) { return x + Real(s); },
      [](Real, Real) { return Real(1); });
}
template <class Real>
Tensor<Real> operator+(double s, const Tensor<Real>& a) {
  return a + s;
}
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, double s) {
  return a + (-s);
}
template <class Real>
Tensor<Real> operator-(double s, const Tensor<Real>& a) {
  return (-a) + s;
}

template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, double s) {
  return unary_op(
      a, [s](Real x) { return x * Real(s); },
      [s](Real, Real) { return Real(s); });
}
template <class Real>
Tensor<Real> operator*(double s, const Tensor<Real>& a) {
  return a * s;
}
template <class Real>
Tensor<Real> operator/(const Tensor<Real>& a, double s) {
  return a * (1.0 / s);
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::log(x); },
      [](Real x, Real) { return Real(1) / x; });
}

template <class Real>
Tensor<Real> sqrt(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return Real(0.5) / y; });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::tanh(x); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

// tanh-approximation form: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary_op(
      a,
      [](Real x) {
        Real u = Real(c) * (x + Real(k) * x * x * x);
        return Real(0.5) * x * (Real(1) + std::tanh(u));
      },
      [](Real x, Real) {
        Real u = Real(c) * (x + Real(k) * x * x * x);
        Real t = std::tanh(u);
        Real du = Real(c) * (Real(1) + Real(3 * k) * x * x);
        return Real(0.5) * (Real(1) + t) +
               Real(0.5) * x * (Real(1) - t * t) * du;
      });
}

template <class Real>
Tensor<Real> abs(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > Real(0) ? Real(1)
                                : x < Real(0) ? Real(-1) : Real(0); });
}

template <class Real>
Tensor<Real> sin(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::sin(x); },
      [](Real x, Real) { return std::cos(x); });
}

template <class Real>
Tensor<Real> cos(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::cos(x); },
      [](Real x, Real) { return -std::sin(x); });
}

// sin(sqrt(s))/sqrt(s) on s >= 0, with a series branch near zero so the
// axis-angle rotation stays smooth through the identity.
template <class Real>
Tensor<Real> sinc_sqrt(const Tensor<Real>& a) {
  return unary_op(
      a,
      [](Real x) {
        if (x < Real(1e-8))
          return Real(1) - x / Real(6) + x * x / Real(120);
        Real r = std::sqrt(x);
        return std::sin(r) / r;
      },
      [](Real x, Real) {
        if (x < Real(1e-8)) return Real(-1.0 / 6.0) + x / Real(60);
        Real r = std::sqrt(x);
        return (r * std::cos(r) - std::sin(r)) / (Real(2) * x * r);
      });
}

// (1 - cos(sqrt(s)))/s on s >= 0, series branch near zero.
template <class Real>
Tensor<Real> cos1m_over(const Tensor<Real>& a) {
  return unary_op(
      a,
      [](Real x) {
        if (x < Real(1e-8))
          return Real(0.5) - x / Real(24) + x * x / Real(720);
        return (Real(1) - std::cos(std::sqrt(x))) / x;
      },
      [](Real x, Real y) {
        if (x < Real(1e-8)) return Real(-1.0 / 24.0) + x / Real(360);
        Real r = std::sqrt(x);
        return (std::sin(r) / (Real(2) * r) - y) / x;
      });
}

template <class Real>
Tensor<Real> clamp(const Tensor<Real>& a, double lo, double hi) {
  return unary_op(
      a,
      [lo, hi](Real x) {
        return std::min(Real(hi), std::max(Real(lo), x));
      },
      [lo, hi](Real x, Real) {
        return (x > Real(lo) && x < Real(hi)) ? Real(1) : Real(0);
      });
}

// ---- shape ops ----

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape s) {
  if (numel(s) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " +
                     shape_str(s) + " changes element count");
  auto back = [](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i];
  };
  return Tensor<Real>(detail::make_op_node<Real>(
      std::move(s), std::vector<Real>(a.values()), {a}, std::move(back)));
}

// Swap the last two axes (rank >= 2); leading axes act as batch.
template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.dim() < 2)
    throw ShapeError("transpose: rank >= 2 required, got " +
                     shape_str(a.shape()));
  Shape s = a.shape();
  std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::size_t batch = a.size() / (r * c);
  std::vector<Real> v(a.size());
  const auto& av = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t base = b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        v[base + j * r + i] = av[base + i * c + j];
  }
  auto back = [r, c, batch](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t base = b * r * c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          p.grad[base + i * c + j] += n.grad[base + j * r + i];
    }
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(s), std::move(v),
                                                 {a}, std::move(back)));
}

template <class Real>
Tensor<Real> slice(const Tensor<Real>& a, std::size_t axis, std::size_t start,
                   std::size_t len) {
  if (axis >= a.dim())
    throw ValueError("slice: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(a.shape()));
  if (start + len > a.shape()[axis])
    throw ShapeError("slice: [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") exceeds axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  Shape s = a.shape();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t full = s[axis];
  s[axis] = len;
  std::vector<Real> v(numel(s));
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t k = 0; k < inner; ++k)
        v[(o * len + i) * inner + k] =
            av[(o * full + start + i) * inner + k];
  auto back = [outer, inner, full, len, start](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t k = 0; k < inner; ++k)
          p.grad[(o * full + start + i) * inner + k] +=
              n.grad[(o * len + i) * inner + k];
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(s), std::move(v),
                                                 {a}, std::move(back)));
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& xs, std::size_t axis) {
  if (xs.empty()) throw ValueError("concat: empty input list");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size())
    throw ValueError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.dim() != s0.size())
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " +
                       shape_str(x.shape()));
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && x.shape()[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " +
                         shape_str(x.shape()));
    total += x.shape()[axis];
  }
  Shape s = s0;
  s[axis] = total;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::vector<Real> v(numel(s));
  std::vector<std::size_t> lens;
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::size_t len = x.shape()[axis];
    lens.push_back(len);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t k = 0; k < inner; ++k)
          v[(o * total + off + i) * inner + k] = xv[(o * len + i) * inner + k];
    off += len;
  }
  auto back = [outer, inner, total, lens](TensorNode<Real>& n) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
      auto& p = *n.parents[pi];
      std::size_t len = lens[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t k = 0; k < inner; ++k)
              p.grad[(o * len + i) * inner + k] +=
                  n.grad[(o * total + off + i) * inner + k];
      }
      off += len;
    }
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(s), std::move(v),
                                                 xs, std::move(back)));
}

// ---- reductions ----

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  auto back = [](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += n.grad[0];
  };
  return Tensor<Real>(
      detail::make_op_node<Real>({1}, {acc}, {a}, std::move(back)));
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return sum(a) / static_cast<double>(a.size());
}

template <class Real>
Tensor<Real> sum_axis(const Tensor<Real>& a, std::size_t axis,
                      bool keepdim = true) {
  if (axis >= a.dim())
    throw ValueError("sum_axis: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(a.shape()));
  Shape s = a.shape();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t n_ax = s[axis];
  Shape out = s;
  if (keepdim)
    out[axis] = 1;
  else
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out.empty()) out = {1};
  std::vector<Real> v(outer * inner, Real(0));
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n_ax; ++i)
      for (std::size_t k = 0; k < inner; ++k)
        v[o * inner + k] += av[(o * n_ax + i) * inner + k];
  auto back = [outer, inner, n_ax](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n_ax; ++i)
        for (std::size_t k = 0; k < inner; ++k)
          p.grad[(o * n_ax + i) * inner + k] += n.grad[o * inner + k];
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(out), std::move(v),
                                                 {a}, std::move(back)));
}

template <class Real>
Tensor<Real> mean_axis(const Tensor<Real>& a, std::size_t axis,
                       bool keepdim = true) {
  return sum_axis(a, axis, keepdim) /
         static_cast<double>(a.shape()[axis]);
}

// ---- matmul (leading axes broadcast as batch) ----

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.dim() < 2 || b.dim() < 2)
    throw ShapeError("matmul: rank >= 2 required, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  std::size_t m = as[as.size() - 2], k = as[as.size() - 1];
  std::size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(as) + " vs " + shape_str(bs));
  Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
  Shape batch = detail::broadcast_shape(abatch, bbatch, "matmul");
  auto astr = detail::bcast_strides(abatch, batch);
  auto bstr = detail::bcast_strides(bbatch, batch);
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);
  std::size_t nb = numel(batch);
  std::vector<Real> v(nb * m * n, Real(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  detail::for_each_bcast(
      batch, astr, bstr, [&](std::size_t o, std::size_t ao, std::size_t bo) {
        const Real* A = av.data() + ao * m * k;
        const Real* B = bv.data() + bo * k * n;
        Real* C = v.data() + o * m * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            Real aip = A[i * k + p];
            if (aip == Real(0)) continue;
            const Real* Bp = B + p * n;
            Real* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
          }
      });
  auto back = [batch, astr, bstr, m, k, n](TensorNode<Real>& n_) {
    auto& pa = *n_.parents[0];
    auto& pb = *n_.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    detail::for_each_bcast(
        batch, astr, bstr, [&](std::size_t o, std::size_t ao, std::size_t bo) {
          const Real* G = n_.grad.data() + o * m * n;
          const Real* A = pa.value.data() + ao * m * k;
          const Real* B = pb.value.data() + bo * k * n;
          if (pa.requires_grad) {
            Real* dA = pa.grad.data() + ao * m * k;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                Real acc = 0;
                const Real* Gi = G + i * n;
                const Real* Bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
                dA[i * k + p] += acc;
              }
          }
          if (pb.requires_grad) {
            Real* dB = pb.grad.data() + bo * k * n;
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                Real aip = A[i * k + p];
                if (aip == Real(0)) continue;
                const Real* Gi = G + i * n;
                Real* dBp = dB + p * n;
                for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
              }
          }
        });
  };
  return Tensor<Real>(detail::make_op_node<Real>(std::move(out), std::move(v),
                                                 {a, b}, std::move(back)));
}

// ---- softmax along an axis (max-shifted) ----

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
  if (axis >= a.dim())
    throw ValueError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(a.shape()));
  const Shape& s = a.shape();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  std::size_t n_ax = s[axis];
  std::vector<Real> v(a.size());
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < inner; ++k) {
      Real mx = av[(o * n_ax) * inner + k];
      for (std::size_t i = 1; i < n_ax; ++i)
        mx = std::max(mx, av[(o * n_ax + i) * inner + k]);
      Real z = 0;
      for (std::size_t i = 0; i < n_ax; ++i) {
        Real e = std::exp(av[(o * n_ax + i) * inner + k] - mx);
        v[(o * n_ax + i) * inner + k] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n_ax; ++i)
        v[(o * n_ax + i) * inner + k] /= z;
    }
  auto back = [outer, inner, n_ax](TensorNode<Real>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < inner; ++k) {
        Real dot = 0;
        for (std::size_t i = 0; i < n_ax; ++i) {
          std::size_t ix = (o * n_ax + i) * inner + k;
          dot += n.grad[ix] * n.value[ix];
        }
        for (std::size_t i = 0; i < n_ax; ++i) {
          std::size_t ix = (o * n_ax + i) * inner + k;
          p.grad[ix] += n.value[ix] * (n.grad[ix] - dot);
        }
      }
  };
  return Tensor<Real>(detail::make_op_node<Real>(a.shape(), std::move(v), {a},
                                                 std::move(back)));
}

// ---- normalization / misc ----

template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, double eps = 1e-5) {
  std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must match last dim of " +
                     shape_str(x.shape()));
  auto mu = mean_axis(x, x.dim() - 1, true);
  auto xc = x - mu;
  auto var = mean_axis(xc * xc, x.dim() - 1, true);
  auto xhat = xc / sqrt(var + eps);
  return xhat * gain + bias;
}

template <class Real>
Tensor<Real> detach(const Tensor<Real>& a) {
  return Tensor<Real>::from(a.shape(), a.values());
}

template <class Real>
std::size_t argmax(const Tensor<Real>& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a.at(i) > a.at(best)) best = i;  // ties keep the lowest index
  return best;
}

template <class Real>
Tensor<Real> dot(const Tensor<Real>& a, const Tensor<Real>& b) {
  return sum(a * b);
}

}  // namespace hoi
