#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"

namespace hoi {

// Named trainable parameters in registration order.  Names are unique and
// ordering is deterministic so checkpoints and optimizer state line up.
template <class Real>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<Real>>> items;
  std::unordered_map<std::string, std::size_t> index;

  Tensor<Real> add(const std::string& name, Tensor<Real> t) {
    if (!index.emplace(name, items.size()).second)
      throw ValueError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    items.emplace_back(name, t);
    return t;
  }

  const Tensor<Real>* find(const std::string& name) const {
    auto it = index.find(name);
    return it == index.end() ? nullptr : &items[it->second].second;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

template <class Real>
Tensor<Real> uniform_init(const Shape& s, double bound, Rng& rng) {
  std::vector<Real> v(numel(s));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor<Real>::from(s, std::move(v));
}

template <class Real>
Tensor<Real> normal_init(const Shape& s, double stddev, Rng& rng) {
  std::vector<Real> v(numel(s));
  for (auto& x : v) x = static_cast<Real>(rng.normal(0.0, stddev));
  return Tensor<Real>::from(s, std::move(v));
}

// Largest singular value of a 2-D tensor via power iteration.
template <class Real>
double spectral_norm(const Tensor<Real>& w, int iters = 30) {
  std::size_t rows = w.shape()[0], cols = w.shape()[1];
  std::vector<double> u(cols, 1.0 / std::sqrt(double(cols))), tmp(rows);
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < cols; ++j) acc += w.at(i * cols + j) * u[j];
      tmp[i] = acc;
    }
    double nv = 0;
    for (double x : tmp) nv += x * x;
    nv = std::sqrt(nv);
    if (nv == 0) return 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0;
      for (std::size_t i = 0; i < rows; ++i)
        acc += w.at(i * cols + j) * tmp[i] / nv;
      u[j] = acc;
    }
    sigma = 0;
    for (double x : u) sigma += x * x;
    sigma = std::sqrt(sigma);
    if (sigma == 0) return 0.0;
    for (double& x : u) x /= sigma;
  }
  return sigma;
}

template <class Real>
void rescale_spectral(Tensor<Real>& w, double target) {
  double sigma = spectral_norm(w);
  if (sigma > target && sigma > 0) {
    Real f = static_cast<Real>(target / sigma);
    for (auto& x : w.values_mut()) x *= f;
  }
}

template <class Real>
struct Linear {
  Tensor<Real> w;  // [in, out]
  Tensor<Real> b;  // [out]

  static Linear create(ParamStore<Real>& ps, const std::string& name,
                       std::size_t in, std::size_t out, Rng& rng,
                       bool zero_init = false) {
    Linear l;
    double bound = zero_init ? 0.0 : 1.0 / std::sqrt(double(in));
    l.w = ps.add(name + ".w", uniform_init<Real>({in, out}, bound, rng));
    l.b = ps.add(name + ".b", uniform_init<Real>({out}, bound, rng));
    return l;
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return matmul(x, w) + b;
  }
};

template <class Real>
struct LayerNorm {
  Tensor<Real> gain, bias;
  double eps = 1e-5;

  static LayerNorm create(ParamStore<Real>& ps, const std::string& name,
                          std::size_t d, double eps = 1e-5) {
    LayerNorm ln;
    ln.gain = ps.add(name + ".gain", Tensor<Real>::ones({d}));
    ln.bias = ps.add(name + ".bias", Tensor<Real>::zeros({d}));
    ln.eps = eps;
    return ln;
  }

  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return layer_norm(x, gain, bias, eps);
  }
};

// AdamW with decoupled weight decay.
template <class Real>
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long long t = 0;
  std::vector<std::vector<Real>> m, v;

  void init(const ParamStore<Real>& ps) {
    m.clear();
    v.clear();
    for (const auto& [_, p] : ps.items) {
      m.emplace_back(p.size(), Real(0));
      v.emplace_back(p.size(), Real(0));
    }
    t = 0;
  }

  void step(ParamStore<Real>& ps) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t pi = 0; pi < ps.items.size(); ++pi) {
      auto& p = ps.items[pi].second;
      auto& val = p.values_mut();
      const auto& g = p.grad();
      auto& mi = m[pi];
      auto& vi = v[pi];
      for (std::size_t i = 0; i < val.size(); ++i) {
        double gi = g[i];
        mi[i] = Real(beta1 * mi[i] + (1.0 - beta1) * gi);
        vi[i] = Real(beta2 * vi[i] + (1.0 - beta2) * gi * gi);
        double mhat = mi[i] / bc1;
        double vhat = vi[i] / bc2;
        val[i] = Real(val[i] - lr * weight_decay * val[i] -
                      lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

}  // namespace hoi
