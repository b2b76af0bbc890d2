#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"

namespace testutil {

using hoi::Rng;
using hoi::Shape;
using DTensor = hoi::Tensor<double>;

inline DTensor random_tensor(const Shape& s, Rng& rng, double lo = -2.0,
                             double hi = 2.0) {
  std::vector<double> v(hoi::numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor::from(s, std::move(v));
}

// relative error with an absolute floor of 1 so near-zero gradients are
// judged on absolute difference
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences against reverse-mode gradients.  The builder
// must rebuild the scalar loss from the current parameter values on every
// call.  Returns the max elementwise relative error over all parameters.
inline double check_gradients(std::vector<DTensor> params,
                              const std::function<DTensor()>& build_loss,
                              double h = 1e-5) {
  for (auto& p : params) p.set_requires_grad(true);
  for (auto& p : params) p.zero_grad();
  DTensor loss = build_loss();
  loss.backward();
  std::vector<std::vector<double>> g_ad;
  for (auto& p : params) g_ad.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + h;
      double fp = build_loss().item();
      vals[i] = keep - h;
      double fm = build_loss().item();
      vals[i] = keep;
      double g_fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err(g_ad[pi][i], g_fd));
    }
  }
  return worst;
}

// One seeded gradient-check instance for a named tensor op.  Each draws its
// own shapes and inputs; the loss is a fixed random weighting of the output
// so every element participates.
struct OpCase {
  std::string name;
  std::function<double(Rng&)> run;  // returns max relative error
};

inline Shape random_shape(Rng& rng, std::size_t max_rank = 3,
                          std::size_t max_dim = 4) {
  std::size_t rank = std::size_t(rng.uniform_int(1, int(max_rank)));
  Shape s(rank);
  for (auto& d : s) d = std::size_t(rng.uniform_int(1, int(max_dim)));
  return s;
}

inline std::vector<OpCase> op_gradient_cases() {
  using hoi::concat;
  using hoi::layer_norm;
  using hoi::matmul;
  using hoi::mean;
  using hoi::mean_axis;
  using hoi::reshape;
  using hoi::slice;
  using hoi::softmax;
  using hoi::sum;
  using hoi::sum_axis;
  using hoi::transpose;

  std::vector<OpCase> cases;
  auto add_case = [&cases](const std::string& name,
                           std::function<double(Rng&)> fn) {
    cases.push_back({name, std::move(fn)});
  };

  add_case("add", [](Rng& rng) {
    Shape s = random_shape(rng);
    Shape sb = s;
    if (rng.uniform() < 0.5) sb.back() = 1;
    auto a = random_tensor(s, rng);
    auto b = random_tensor(sb, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;  // fixed weights reused across rebuilds
    return check_gradients({a, b}, [&] {
      auto out = a + b;
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("sub", [](Rng& rng) {
    Shape s = random_shape(rng);
    auto a = random_tensor(s, rng);
    auto b = random_tensor(s, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = a - b;
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("mul", [](Rng& rng) {
    Shape s = random_shape(rng);
    Shape sb = s;
    if (rng.uniform() < 0.5 && sb.size() > 1) sb.erase(sb.begin());
    auto a = random_tensor(s, rng);
    auto b = random_tensor(sb, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = a * b;
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("div", [](Rng& rng) {
    Shape s = random_shape(rng);
    auto a = random_tensor(s, rng);
    auto b = random_tensor(s, rng, 0.5, 2.0);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = a / b;
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("neg_scalar_affine", [](Rng& rng) {
    Shape s = random_shape(rng);
    auto a = random_tensor(s, rng);
    double c = rng.uniform(-2.0, 2.0);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = (-a) * c + (a * 3.0 - 1.5) + (2.0 - a);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  auto unary_case = [&add_case](const std::string& name, auto opfn, double lo,
                                double hi) {
    add_case(name, [opfn, lo, hi](Rng& rng) {
      Shape s = random_shape(rng);
      auto a = random_tensor(s, rng, lo, hi);
      Rng wr(rng.next_u64());
      DTensor loss_w;
      return check_gradients({a}, [&] {
        auto out = opfn(a);
        if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
        return sum(out * loss_w);
      });
    });
  };
  unary_case("exp", [](const DTensor& x) { return hoi::exp(x); }, -2.0, 2.0);
  unary_case("log", [](const DTensor& x) { return hoi::log(x); }, 0.5, 3.0);
  unary_case("sqrt", [](const DTensor& x) { return hoi::sqrt(x); }, 0.5, 3.0);
  unary_case("tanh", [](const DTensor& x) { return hoi::tanh(x); }, -2.0, 2.0);
  unary_case("sigmoid", [](const DTensor& x) { return hoi::sigmoid(x); }, -2.0,
             2.0);
  unary_case("gelu", [](const DTensor& x) { return hoi::gelu(x); }, -2.0, 2.0);
  unary_case("abs", [](const DTensor& x) { return hoi::abs(x); }, 0.15, 3.0);
  unary_case("sin", [](const DTensor& x) { return hoi::sin(x); }, -3.0, 3.0);
  unary_case("cos", [](const DTensor& x) { return hoi::cos(x); }, -3.0, 3.0);
  unary_case("sinc_sqrt",
             [](const DTensor& x) { return hoi::sinc_sqrt(x); }, 0.01, 4.0);
  unary_case("cos1m_over",
             [](const DTensor& x) { return hoi::cos1m_over(x); }, 0.01, 4.0);
  add_case("clamp", [](Rng& rng) {
    Shape s = random_shape(rng);
    auto a = random_tensor(s, rng);
    // keep inputs away from the clamp corners so FD stays smooth
    for (auto& x : a.values_mut())
      if (std::abs(std::abs(x) - 1.0) < 0.05) x += 0.1;
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = hoi::clamp(a, -1.0, 1.0);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("matmul2d", [](Rng& rng) {
    std::size_t m = std::size_t(rng.uniform_int(1, 4));
    std::size_t k = std::size_t(rng.uniform_int(1, 4));
    std::size_t n = std::size_t(rng.uniform_int(1, 4));
    auto a = random_tensor({m, k}, rng);
    auto b = random_tensor({k, n}, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = matmul(a, b);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("matmul_batched", [](Rng& rng) {
    std::size_t bdim = std::size_t(rng.uniform_int(1, 3));
    std::size_t m = std::size_t(rng.uniform_int(1, 3));
    std::size_t k = std::size_t(rng.uniform_int(1, 3));
    std::size_t n = std::size_t(rng.uniform_int(1, 3));
    auto a = random_tensor({bdim, m, k}, rng);
    bool bc = rng.uniform() < 0.5;  // unbatched rhs broadcasts
    auto b = bc ? random_tensor({k, n}, rng) : random_tensor({bdim, k, n}, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = matmul(a, b);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("transpose", [](Rng& rng) {
    auto a = random_tensor({std::size_t(rng.uniform_int(1, 4)),
                            std::size_t(rng.uniform_int(1, 4))},
                           rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = transpose(a);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("reshape", [](Rng& rng) {
    auto a = random_tensor({2, 6}, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = reshape(a, {3, 4});
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("slice", [](Rng& rng) {
    Shape s = {std::size_t(rng.uniform_int(2, 4)),
               std::size_t(rng.uniform_int(2, 4))};
    auto a = random_tensor(s, rng);
    std::size_t axis = std::size_t(rng.uniform_int(0, 1));
    std::size_t len = std::size_t(rng.uniform_int(1, int(s[axis])));
    std::size_t start = std::size_t(rng.uniform_int(0, int(s[axis] - len)));
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = slice(a, axis, start, len);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("concat", [](Rng& rng) {
    std::size_t axis = std::size_t(rng.uniform_int(0, 1));
    Shape sa = {2, 3}, sb = {2, 3};
    (axis == 0 ? sa[0] : sa[1]) = std::size_t(rng.uniform_int(1, 3));
    auto a = random_tensor(sa, rng);
    auto b = random_tensor(sb, rng);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a, b}, [&] {
      auto out = hoi::concat<double>({a, b}, axis);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("sum_mean", [](Rng& rng) {
    Shape s = random_shape(rng);
    auto a = random_tensor(s, rng);
    return check_gradients({a}, [&] { return sum(a) + mean(a) * 2.0; });
  });
  add_case("sum_axis", [](Rng& rng) {
    Shape s = {std::size_t(rng.uniform_int(1, 4)),
               std::size_t(rng.uniform_int(1, 4)),
               std::size_t(rng.uniform_int(1, 4))};
    auto a = random_tensor(s, rng);
    std::size_t axis = std::size_t(rng.uniform_int(0, 2));
    bool keep = rng.uniform() < 0.5;
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = sum_axis(a, axis, keep);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("mean_axis", [](Rng& rng) {
    Shape s = {std::size_t(rng.uniform_int(1, 4)),
               std::size_t(rng.uniform_int(1, 4))};
    auto a = random_tensor(s, rng);
    std::size_t axis = std::size_t(rng.uniform_int(0, 1));
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = mean_axis(a, axis, true);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("softmax", [](Rng& rng) {
    Shape s = {std::size_t(rng.uniform_int(1, 4)),
               std::size_t(rng.uniform_int(2, 5))};
    auto a = random_tensor(s, rng, -3.0, 3.0);
    std::size_t axis = std::size_t(rng.uniform_int(0, 1));
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({a}, [&] {
      auto out = softmax(a, axis);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  add_case("layer_norm", [](Rng& rng) {
    std::size_t t = std::size_t(rng.uniform_int(1, 4));
    std::size_t d = std::size_t(rng.uniform_int(2, 6));
    auto x = random_tensor({t, d}, rng);
    auto g = random_tensor({d}, rng, 0.5, 1.5);
    auto b = random_tensor({d}, rng, -0.5, 0.5);
    Rng wr(rng.next_u64());
    DTensor loss_w;
    return check_gradients({x, g, b}, [&] {
      auto out = layer_norm(x, g, b);
      if (!loss_w.defined()) loss_w = random_tensor(out.shape(), wr);
      return sum(out * loss_w);
    });
  });
  return cases;
}

}  // namespace testutil
