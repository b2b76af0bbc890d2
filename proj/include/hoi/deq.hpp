#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hoi/attention.hpp"
#include "hoi/nn.hpp"

namespace hoi {

enum class DeqSolver { plain, anderson };
enum class DeqBackward { adjoint, one_step };

struct DeqConfig {
  double tol = 1e-4;
  int max_iter = 50;
  DeqSolver solver = DeqSolver::anderson;
  int anderson_memory = 5;
  double damping = 1.0;
  DeqBackward backward = DeqBackward::adjoint;
  int adjoint_max_iter = 50;

  void validate() const {
    if (tol <= 0) throw ValueError("deq config: tol must be > 0");
    if (max_iter < 1) throw ValueError("deq config: max_iter must be >= 1");
    if (damping <= 0 || damping > 1)
      throw ValueError("deq config: damping must be in (0, 1]");
    if (anderson_memory < 1)
      throw ValueError("deq config: anderson_memory must be >= 1");
  }
};

struct DivergedError : std::runtime_error {
  int iteration;
  explicit DivergedError(int it)
      : std::runtime_error("fixed-point iteration diverged at iteration " +
                           std::to_string(it)),
        iteration(it) {}
  DivergedError(int it, const std::string& msg)
      : std::runtime_error(msg), iteration(it) {}
};

template <class Real>
struct SolveResult {
  std::vector<Real> z;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;
};

namespace detail {

template <class Real>
double linf(const std::vector<Real>& v) {
  double m = 0;
  for (Real x : v) m = std::max(m, double(std::abs(x)));
  return m;
}

template <class Real>
bool all_finite(const std::vector<Real>& v) {
  for (Real x : v)
    if (!std::isfinite(double(x))) return false;
  return true;
}

// Solve (A + ridge I) x = b for a small symmetric system, in place.
inline std::vector<double> solve_small(std::vector<std::vector<double>> a,
                                       std::vector<double> b, double ridge) {
  std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) a[i][i] += ridge;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    double d = a[c][c];
    if (std::abs(d) < 1e-300) continue;
    for (std::size_t r = c + 1; r < n; ++r) {
      double f = a[r][c] / d;
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t k = i + 1; k < n; ++k) acc -= a[i][k] * x[k];
    x[i] = std::abs(a[i][i]) < 1e-300 ? 0.0 : acc / a[i][i];
  }
  return x;
}

}  // namespace detail

// Finds z with f(z) = z.  Residual is measured at the returned iterate, so
// converged == true guarantees ||f(z) - z||_inf <= tol there.
template <class Real>
SolveResult<Real> fixed_point_solve(
    const std::function<std::vector<Real>(const std::vector<Real>&)>& f,
    std::vector<Real> x0, const DeqConfig& cfg) {
  cfg.validate();
  std::size_t n = x0.size();
  SolveResult<Real> best;
  std::vector<Real> z = std::move(x0);
  std::vector<std::vector<Real>> zs, gs;  // anderson history
  for (int it = 0;; ++it) {
    std::vector<Real> fz = f(z);
    if (fz.size() != n)
      throw ShapeError("fixed_point_solve: map changed state size");
    std::vector<Real> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = fz[i] - z[i];
    if (!detail::all_finite(g)) throw DivergedError(it);
    double r = detail::linf(g);
    best.residual_history.push_back(r);
    if (r < best.residual) {
      best.residual = r;
      best.z = z;
    }
    if (r <= cfg.tol) {
      best.z = std::move(z);
      best.residual = r;
      best.iterations = it;
      best.converged = true;
      return best;
    }
    if (it >= cfg.max_iter) {
      best.iterations = cfg.max_iter;
      best.converged = false;
      return best;
    }
    double beta = cfg.damping;
    if (cfg.solver == DeqSolver::plain) {
      for (std::size_t i = 0; i < n; ++i) z[i] += Real(beta) * g[i];
    } else {
      zs.push_back(z);
      gs.push_back(g);
      std::size_t m = zs.size() - 1;  // usable difference columns
      if (m > std::size_t(cfg.anderson_memory)) {
        zs.erase(zs.begin());
        gs.erase(gs.begin());
        m = zs.size() - 1;
      }
      if (m == 0) {
        for (std::size_t i = 0; i < n; ++i) z[i] += Real(beta) * g[i];
      } else {
        // least-squares mixing over residual differences
        std::vector<std::vector<double>> gram(m, std::vector<double>(m, 0.0));
        std::vector<double> rhs(m, 0.0);
        auto dg = [&](std::size_t j, std::size_t i) {
          return double(gs[j + 1][i]) - double(gs[j][i]);
        };
        for (std::size_t a = 0; a < m; ++a) {
          for (std::size_t b = a; b < m; ++b) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += dg(a, i) * dg(b, i);
            gram[a][b] = gram[b][a] = acc;
          }
          double acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += dg(a, i) * double(g[i]);
          rhs[a] = acc;
        }
        double trace = 0;
        for (std::size_t a = 0; a < m; ++a) trace += gram[a][a];
        double scale = 1e-10 * trace / double(m) + 1e-300;
        auto gamma = detail::solve_small(gram, rhs, scale);
        std::vector<Real> znew(n);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = double(z[i]) + beta * double(g[i]);
          for (std::size_t j = 0; j < m; ++j) {
            double dz = double(zs[j + 1][i]) - double(zs[j][i]);
            acc -= gamma[j] * (dz + beta * dg(j, i));
          }
          znew[i] = Real(acc);
        }
        z = std::move(znew);
      }
    }
  }
}

// Generic adjoint fixed point u = vjp(u) + seed, solved by plain iteration.
// Returns the solution and whether it converged (falls back to the caller).
template <class Real>
std::pair<std::vector<Real>, bool> adjoint_solve(
    const std::function<std::vector<Real>(const std::vector<Real>&)>& vjp,
    const std::vector<Real>& seed, double tol, int max_iter) {
  std::vector<Real> u = seed;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<Real> ju = vjp(u);
    if (!detail::all_finite(ju)) return {seed, false};
    double delta = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      Real nu = ju[i] + seed[i];
      delta = std::max(delta, double(std::abs(nu - u[i])));
      u[i] = nu;
    }
    if (delta <= tol) return {u, true};
  }
  return {u, false};
}

// ---- fusion cell ----

template <class Real>
struct FusionWeights {
  Linear<Real> theta_t, theta_h;  // state branches, 2d -> d
  LayerNorm<Real> ln_t, ln_h;
  Linear<Real> phi1, phi2;  // trunk, 3d -> d -> d
  LayerNorm<Real> ln_phi;
  std::size_t d = 0;

  // ln_gain_init < 1 keeps the whole cell contractive at initialization:
  // normalization divides by the pre-activation scale, which would cancel
  // the spectral rescale of the weight matrices on its own.
  static FusionWeights create(ParamStore<Real>& ps, const std::string& name,
                              std::size_t d, Rng& rng,
                              double spectral_target = 0.9,
                              double ln_gain_init = 0.1) {
    FusionWeights w;
    w.d = d;
    w.theta_t = Linear<Real>::create(ps, name + ".theta_t", 2 * d, d, rng);
    w.theta_h = Linear<Real>::create(ps, name + ".theta_h", 2 * d, d, rng);
    w.ln_t = LayerNorm<Real>::create(ps, name + ".ln_t", d);
    w.ln_h = LayerNorm<Real>::create(ps, name + ".ln_h", d);
    w.phi1 = Linear<Real>::create(ps, name + ".phi1", 3 * d, d, rng);
    w.phi2 = Linear<Real>::create(ps, name + ".phi2", d, d, rng);
    w.ln_phi = LayerNorm<Real>::create(ps, name + ".ln_phi", d);
    rescale_spectral(w.theta_t.w, spectral_target);
    rescale_spectral(w.theta_h.w, spectral_target);
    rescale_spectral(w.phi1.w, spectral_target);
    rescale_spectral(w.phi2.w, spectral_target);
    for (auto* ln : {&w.ln_t, &w.ln_h, &w.ln_phi})
      for (auto& g : ln->gain.values_mut()) g = Real(ln_gain_init);
    return w;
  }

  std::vector<Tensor<Real>> tensors() const {
    return {theta_t.w, theta_t.b, theta_h.w, theta_h.b,
            ln_t.gain, ln_t.bias, ln_h.gain, ln_h.bias,
            phi1.w,    phi1.b,    phi2.w,    phi2.b,
            ln_phi.gain, ln_phi.bias};
  }

  FusionWeights detached() const {
    FusionWeights w;
    w.d = d;
    w.theta_t = {detach(theta_t.w), detach(theta_t.b)};
    w.theta_h = {detach(theta_h.w), detach(theta_h.b)};
    w.ln_t = {detach(ln_t.gain), detach(ln_t.bias), ln_t.eps};
    w.ln_h = {detach(ln_h.gain), detach(ln_h.bias), ln_h.eps};
    w.phi1 = {detach(phi1.w), detach(phi1.b)};
    w.phi2 = {detach(phi2.w), detach(phi2.b)};
    w.ln_phi = {detach(ln_phi.gain), detach(ln_phi.bias), ln_phi.eps};
    return w;
  }
};

// One application of the coupled update maps on [1,d] row states:
//   z_t' = f_th(z_t, ft);  z_h' = f_th(z_h, fh)
//   F_i' = f_phi(ft, fh, F_i (.) z_t' + F_i (.) z_h')
template <class Real>
std::array<Tensor<Real>, 3> fusion_cell(
    const Tensor<Real>& z_t, const Tensor<Real>& z_h, const Tensor<Real>& f_i,
    const Tensor<Real>& ft, const Tensor<Real>& fh,
    const FusionWeights<Real>& w) {
  auto zt = w.ln_t(gelu(w.theta_t(concat<Real>({z_t, ft}, 1))));
  auto zh = w.ln_h(gelu(w.theta_h(concat<Real>({z_h, fh}, 1))));
  auto fused = f_i * zt + f_i * zh;
  auto fi =
      w.ln_phi(w.phi2(gelu(w.phi1(concat<Real>({ft, fh, fused}, 1)))));
  return {zt, zh, fi};
}

template <class Real>
struct DeqState {
  std::vector<Real> z_t, z_h, f_i;
  double residual = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;
};

template <class Real>
struct DeqGradients {
  std::vector<Real> d_ft, d_fh;
  std::vector<std::vector<Real>> d_weights;  // same order as w.tensors()
  bool used_fallback = false;
  bool adjoint_converged = false;
};

namespace detail {

template <class Real>
std::vector<Real> cat3(const std::vector<Real>& a, const std::vector<Real>& b,
                       const std::vector<Real>& c) {
  std::vector<Real> out;
  out.reserve(a.size() + b.size() + c.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

}  // namespace detail

// Implicit backward through the equilibrium: solves the adjoint fixed point
// u = J^T u + seed (seed carries the upstream grad on the F_i block), then
// applies one vector-Jacobian product into inputs and weights.
template <class Real>
DeqGradients<Real> deq_backward_gradients(
    const DeqState<Real>& eq, const std::vector<Real>& ft_vals,
    const std::vector<Real>& fh_vals, const FusionWeights<Real>& w,
    const std::vector<Real>& upstream, const DeqConfig& cfg) {
  std::size_t d = w.d;
  auto wd = w.detached();
  auto ft_c = Tensor<Real>::from({1, d}, ft_vals);
  auto fh_c = Tensor<Real>::from({1, d}, fh_vals);

  std::vector<Real> seed(3 * d, Real(0));
  for (std::size_t i = 0; i < d; ++i) seed[2 * d + i] = upstream[i];

  auto state_vjp = [&](const std::vector<Real>& u) {
    auto zt = Tensor<Real>::from({1, d}, eq.z_t).set_requires_grad(true);
    auto zh = Tensor<Real>::from({1, d}, eq.z_h).set_requires_grad(true);
    auto fi = Tensor<Real>::from({1, d}, eq.f_i).set_requires_grad(true);
    auto out = fusion_cell(zt, zh, fi, ft_c, fh_c, wd);
    auto u_t = Tensor<Real>::from(
        {1, d}, std::vector<Real>(u.begin(), u.begin() + d));
    auto u_h = Tensor<Real>::from(
        {1, d}, std::vector<Real>(u.begin() + d, u.begin() + 2 * d));
    auto u_i = Tensor<Real>::from(
        {1, d}, std::vector<Real>(u.begin() + 2 * d, u.end()));
    auto s = sum(out[0] * u_t) + sum(out[1] * u_h) + sum(out[2] * u_i);
    s.backward();
    return detail::cat3(zt.grad(), zh.grad(), fi.grad());
  };

  DeqGradients<Real> grads;
  std::vector<Real> u;
  if (cfg.backward == DeqBackward::adjoint) {
    auto [sol, ok] =
        adjoint_solve<Real>(state_vjp, seed, cfg.tol, cfg.adjoint_max_iter);
    grads.adjoint_converged = ok;
    if (ok) {
      u = std::move(sol);
    } else {
      grads.used_fallback = true;
      u = seed;  // one-step approximation
    }
  } else {
    u = seed;
  }

  // single VJP into inputs and weights at the equilibrium
  auto zt = Tensor<Real>::from({1, d}, eq.z_t);
  auto zh = Tensor<Real>::from({1, d}, eq.z_h);
  auto fi = Tensor<Real>::from({1, d}, eq.f_i);
  auto ft_l = Tensor<Real>::from({1, d}, ft_vals).set_requires_grad(true);
  auto fh_l = Tensor<Real>::from({1, d}, fh_vals).set_requires_grad(true);
  ParamStore<Real> local;
  FusionWeights<Real> wl;
  {
    auto src = w.tensors();
    wl.d = d;
    wl.theta_t = {local.add("tt.w", detach(src[0])),
                  local.add("tt.b", detach(src[1]))};
    wl.theta_h = {local.add("th.w", detach(src[2])),
                  local.add("th.b", detach(src[3]))};
    wl.ln_t = {local.add("lt.g", detach(src[4])),
               local.add("lt.b", detach(src[5])), w.ln_t.eps};
    wl.ln_h = {local.add("lh.g", detach(src[6])),
               local.add("lh.b", detach(src[7])), w.ln_h.eps};
    wl.phi1 = {local.add("p1.w", detach(src[8])),
               local.add("p1.b", detach(src[9]))};
    wl.phi2 = {local.add("p2.w", detach(src[10])),
               local.add("p2.b", detach(src[11]))};
    wl.ln_phi = {local.add("lp.g", detach(src[12])),
                 local.add("lp.b", detach(src[13])), w.ln_phi.eps};
  }
  auto out = fusion_cell(zt, zh, fi, ft_l, fh_l, wl);
  auto u_t =
      Tensor<Real>::from({1, d}, std::vector<Real>(u.begin(), u.begin() + d));
  auto u_h = Tensor<Real>::from(
      {1, d}, std::vector<Real>(u.begin() + d, u.begin() + 2 * d));
  auto u_i = Tensor<Real>::from(
      {1, d}, std::vector<Real>(u.begin() + 2 * d, u.end()));
  auto s = sum(out[0] * u_t) + sum(out[1] * u_h) + sum(out[2] * u_i);
  s.backward();
  grads.d_ft = ft_l.grad();
  grads.d_fh = fh_l.grad();
  for (auto& [_, t] : local.items) grads.d_weights.push_back(t.grad());
  return grads;
}

// Equilibrium fusion of pooled token features.  Differentiable: the output
// tensor's backward pass runs the implicit adjoint above.  x0_override is a
// test hook for perturbed initialization.
template <class Real>
std::pair<Tensor<Real>, DeqState<Real>> deq_fuse(
    const Tensor<Real>& ft_tokens, const Tensor<Real>& fh_tokens,
    const FusionWeights<Real>& w, const DeqConfig& cfg,
    const std::vector<Real>* x0_override = nullptr) {
  std::size_t d = w.d;
  if (ft_tokens.shape().back() != d || fh_tokens.shape().back() != d)
    throw ShapeError("deq_fuse: token width does not match fusion width " +
                     std::to_string(d));
  auto ft = mean_axis(ft_tokens, 0, true);  // [1,d]
  auto fh = mean_axis(fh_tokens, 0, true);

  auto wd = w.detached();
  auto ft_c = detach(ft);
  auto fh_c = detach(fh);
  auto map = [&](const std::vector<Real>& s) {
    auto zt = Tensor<Real>::from({1, d},
                                 std::vector<Real>(s.begin(), s.begin() + d));
    auto zh = Tensor<Real>::from(
        {1, d}, std::vector<Real>(s.begin() + d, s.begin() + 2 * d));
    auto fi = Tensor<Real>::from(
        {1, d}, std::vector<Real>(s.begin() + 2 * d, s.end()));
    auto out = fusion_cell(zt, zh, fi, ft_c, fh_c, wd);
    return detail::cat3(out[0].values(), out[1].values(), out[2].values());
  };

  std::vector<Real> x0(3 * d, Real(0));
  if (x0_override) x0 = *x0_override;
  auto sol = fixed_point_solve<Real>(map, std::move(x0), cfg);

  DeqState<Real> diag;
  diag.z_t.assign(sol.z.begin(), sol.z.begin() + d);
  diag.z_h.assign(sol.z.begin() + d, sol.z.begin() + 2 * d);
  diag.f_i.assign(sol.z.begin() + 2 * d, sol.z.end());
  diag.residual = sol.residual;
  diag.iterations = sol.iterations;
  diag.converged = sol.converged;
  diag.residual_history = std::move(sol.residual_history);

  // custom node: value is F_i*, parents are the pooled inputs and weights
  std::vector<Tensor<Real>> parents;
  parents.push_back(ft);
  parents.push_back(fh);
  for (auto& t : w.tensors()) parents.push_back(t);
  DeqState<Real> eq = diag;
  FusionWeights<Real> w_copy = w;
  DeqConfig cfg_copy = cfg;
  auto back = [eq, w_copy, cfg_copy](TensorNode<Real>& n) {
    std::vector<Real> ft_vals = n.parents[0]->value;
    std::vector<Real> fh_vals = n.parents[1]->value;
    auto grads = deq_backward_gradients(eq, ft_vals, fh_vals, w_copy, n.grad,
                                        cfg_copy);
    if (grads.used_fallback)
      std::fprintf(stderr,
                   "warning: fusion adjoint solve did not converge; "
                   "using one-step gradients\n");
    auto& pf = *n.parents[0];
    auto& ph = *n.parents[1];
    if (pf.requires_grad) {
      pf.ensure_grad();
      for (std::size_t i = 0; i < pf.grad.size(); ++i)
        pf.grad[i] += grads.d_ft[i];
    }
    if (ph.requires_grad) {
      ph.ensure_grad();
      for (std::size_t i = 0; i < ph.grad.size(); ++i)
        ph.grad[i] += grads.d_fh[i];
    }
    for (std::size_t wi = 0; wi < grads.d_weights.size(); ++wi) {
      auto& pw = *n.parents[2 + wi];
      if (!pw.requires_grad) continue;
      pw.ensure_grad();
      for (std::size_t i = 0; i < pw.grad.size(); ++i)
        pw.grad[i] += grads.d_weights[wi][i];
    }
  };
  auto node = detail::make_op_node<Real>(
      {1, d}, std::vector<Real>(diag.f_i), parents, std::move(back));
  return {Tensor<Real>(node), diag};
}

// ---- alternative fusion strategies (modification study) ----

template <class Real>
struct AltFusionWeights {
  std::string strategy;  // sum | concat | series-cross-attention
  Linear<Real> proj;
  std::vector<BlockWeights<Real>> series;

  static AltFusionWeights create(ParamStore<Real>& ps, const std::string& name,
                                 const std::string& strategy,
                                 const AttentionConfig& cfg, Rng& rng,
                                 std::size_t series_depth = 2) {
    AltFusionWeights w;
    w.strategy = strategy;
    std::size_t d = cfg.d_model;
    if (strategy == "sum") {
      w.proj = Linear<Real>::create(ps, name + ".proj", d, d, rng);
    } else if (strategy == "concat") {
      w.proj = Linear<Real>::create(ps, name + ".proj", 2 * d, d, rng);
    } else if (strategy == "series-cross-attention") {
      for (std::size_t i = 0; i < series_depth; ++i)
        w.series.push_back(BlockWeights<Real>::create_cross(
            ps, name + ".blk" + std::to_string(i), cfg, rng));
    } else {
      throw ValueError("unknown fusion strategy: " + strategy);
    }
    return w;
  }
};

template <class Real>
Tensor<Real> alt_fuse(const AltFusionWeights<Real>& w,
                      const Tensor<Real>& ft_tokens,
                      const Tensor<Real>& fh_tokens) {
  auto ft = mean_axis(ft_tokens, 0, true);
  auto fh = mean_axis(fh_tokens, 0, true);
  if (w.strategy == "sum") return w.proj(ft + fh);
  if (w.strategy == "concat")
    return w.proj(concat<Real>({ft, fh}, 1));
  if (w.strategy == "series-cross-attention") {
    auto x = ft_tokens;
    for (const auto& blk : w.series) x = mca(x, fh_tokens, blk);
    return mean_axis(x, 0, true);
  }
  throw ValueError("unknown fusion strategy: " + w.strategy);
}

}  // namespace hoi
