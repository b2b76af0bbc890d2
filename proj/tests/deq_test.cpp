#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "hoi/deq.hpp"
#include "testutil.hpp"

using hoi::AltFusionWeights;
using hoi::AttentionConfig;
using hoi::DeqBackward;
using hoi::DeqConfig;
using hoi::DeqSolver;
using hoi::DivergedError;
using hoi::FusionWeights;
using hoi::ParamStore;
using hoi::Rng;
using DT = hoi::Tensor<double>;
using Vec = std::vector<double>;
using Map = std::function<Vec(const Vec&)>;

namespace {

double linf_diff(const Vec& a, const Vec& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Random square map x -> Ax + b with spectral norm of A rescaled to `lip`.
struct AffineMap {
  std::vector<double> a, b;
  std::size_t n;

  AffineMap(std::size_t n, double lip, Rng& rng) : n(n) {
    a.resize(n * n);
    b.resize(n);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    auto at = DT::from({n, n}, a);
    double sigma = hoi::spectral_norm(at);
    for (auto& x : a) x *= lip / sigma;
  }

  Vec operator()(const Vec& z) const {
    Vec out(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = b[i];
      for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * z[j];
      out[i] = acc;
    }
    return out;
  }
};

FusionWeights<double> make_fusion(ParamStore<double>& ps, std::size_t d,
                                  Rng& rng, const char* name = "fuse") {
  return FusionWeights<double>::create(ps, name, d, rng);
}

Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST(FixedPoint, ScalarAffineBothSolvers) {
  Map f = [](const Vec& z) { return Vec{0.5 * z[0] + 1.0}; };
  for (auto solver : {DeqSolver::plain, DeqSolver::anderson}) {
    DeqConfig cfg;
    cfg.solver = solver;
    cfg.tol = 1e-10;
    auto r = hoi::fixed_point_solve<double>(f, {0.0}, cfg);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.z[0], 2.0, 1e-9);
    EXPECT_LE(r.residual, cfg.tol);
    EXPECT_LT(r.iterations, 50);
  }
}

TEST(FixedPoint, TanhMapMatchesLongUnroll) {
  Map f = [](const Vec& z) { return Vec{std::tanh(0.3 * z[0] + 0.5)}; };
  double z = 0.0;
  for (int i = 0; i < 1000; ++i) z = std::tanh(0.3 * z + 0.5);
  DeqConfig cfg;
  cfg.tol = 1e-12;
  auto r = hoi::fixed_point_solve<double>(f, {0.0}, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.z[0], z, 1e-6);
}

TEST(FixedPoint, AndersonBeatsPlainOnContractions) {
  int wins = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(900 + seed);
    AffineMap f(32, 0.9, rng);
    DeqConfig plain;
    plain.solver = DeqSolver::plain;
    plain.tol = 1e-6;
    plain.max_iter = 500;
    DeqConfig anders = plain;
    anders.solver = DeqSolver::anderson;
    anders.max_iter = 500;
    auto rp = hoi::fixed_point_solve<double>(f, Vec(32, 0.0), plain);
    auto ra = hoi::fixed_point_solve<double>(f, Vec(32, 0.0), anders);
    EXPECT_TRUE(ra.converged);
    EXPECT_LE(ra.iterations, rp.iterations) << "seed " << seed;
    if (ra.iterations < rp.iterations) ++wins;
    EXPECT_LT(linf_diff(ra.z, rp.z), 10 * plain.tol) << "seed " << seed;
  }
  EXPECT_GE(wins, 8);
}

TEST(FixedPoint, PlainResidualsMonotoneOnContraction) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(40 + seed);
    AffineMap f(8, 0.8, rng);
    DeqConfig cfg;
    cfg.solver = DeqSolver::plain;
    cfg.tol = 1e-9;
    cfg.max_iter = 200;
    auto r = hoi::fixed_point_solve<double>(f, Vec(8, 0.0), cfg);
    ASSERT_TRUE(r.converged);
    for (std::size_t i = 1; i < r.residual_history.size(); ++i)
      EXPECT_LE(r.residual_history[i], r.residual_history[i - 1] + 1e-12);
  }
}

TEST(FixedPoint, DivergenceRaisesWithIterationIndex) {
  Map f = [](const Vec& z) { return Vec{1e200 * z[0] + 1e200}; };
  DeqConfig cfg;
  try {
    hoi::fixed_point_solve<double>(f, {0.0}, cfg);
    FAIL() << "expected DivergedError";
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.iteration, 1);
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
  }
}

TEST(FixedPoint, AlreadyConvergedInitTakesZeroIterations) {
  Map f = [](const Vec& z) { return Vec{0.5 * z[0] + 1.0}; };
  DeqConfig cfg;
  auto r = hoi::fixed_point_solve<double>(f, {2.0}, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
}

TEST(FixedPoint, ExhaustionReturnsBestIterate) {
  Map f = [](const Vec& z) { return Vec{0.999 * z[0] + 1.0}; };
  DeqConfig cfg;
  cfg.tol = 1e-12;
  cfg.max_iter = 3;
  cfg.solver = DeqSolver::plain;
  auto r = hoi::fixed_point_solve<double>(f, {0.0}, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
  ASSERT_EQ(r.residual_history.size(), 4u);
  double best = r.residual_history[0];
  for (double h : r.residual_history) best = std::min(best, h);
  EXPECT_DOUBLE_EQ(r.residual, best);
}

TEST(FixedPoint, ConfigValidation) {
  DeqConfig cfg;
  cfg.damping = 0.0;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
  cfg.damping = 1.5;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
  cfg = {};
  cfg.tol = 0.0;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
  cfg = {};
  cfg.max_iter = 0;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
  cfg = {};
  cfg.anderson_memory = 0;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
}

TEST(AdjointSolve, ScalarAnalyticSensitivity) {
  // f(z, x) = 0.5 z + x has z* = 2x, so dz*/dx = 2.  The adjoint fixed
  // point u = 0.5 u + 1 must give u = 2, and dL/dx = u * df/dx = 2.
  Map vjp = [](const Vec& u) { return Vec{0.5 * u[0]}; };
  auto [u, ok] = hoi::adjoint_solve<double>(vjp, {1.0}, 1e-12, 100);
  EXPECT_TRUE(ok);
  EXPECT_NEAR(u[0], 2.0, 1e-9);
}

TEST(DeqFuse, ConvergesAndSatisfiesAllThreeConditions) {
  Rng rng(7);
  ParamStore<double> ps;
  std::size_t d = 24;
  auto w = make_fusion(ps, d, rng);
  auto ft = testutil::random_tensor({3, d}, rng);
  auto fh = testutil::random_tensor({2, d}, rng);
  DeqConfig cfg;
  auto [out, diag] = hoi::deq_fuse(ft, fh, w, cfg);
  ASSERT_TRUE(diag.converged);
  EXPECT_LE(diag.residual, cfg.tol);
  EXPECT_LT(diag.iterations, cfg.max_iter);
  ASSERT_EQ(out.shape(), (hoi::Shape{1, d}));
  for (std::size_t i = 0; i < d; ++i)
    EXPECT_DOUBLE_EQ(out.at(i), diag.f_i[i]);
  // re-apply the cell at the fixed point: every block must stay put
  auto ftp = hoi::mean_axis(ft, 0, true);
  auto fhp = hoi::mean_axis(fh, 0, true);
  auto next = hoi::fusion_cell(DT::from({1, d}, diag.z_t),
                               DT::from({1, d}, diag.z_h),
                               DT::from({1, d}, diag.f_i), ftp, fhp, w);
  EXPECT_LE(linf_diff(next[0].values(), diag.z_t), cfg.tol);
  EXPECT_LE(linf_diff(next[1].values(), diag.z_h), cfg.tol);
  EXPECT_LE(linf_diff(next[2].values(), diag.f_i), cfg.tol);
}

TEST(DeqFuse, MatchesLongPlainUnroll) {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    ParamStore<double> ps;
    std::size_t d = 16;
    auto w = make_fusion(ps, d, rng);
    auto ft = testutil::random_tensor({4, d}, rng);
    auto fh = testutil::random_tensor({3, d}, rng);

    auto ftp = hoi::mean_axis(ft, 0, true);
    auto fhp = hoi::mean_axis(fh, 0, true);
    auto zt = DT::zeros({1, d}), zh = DT::zeros({1, d}),
         fi = DT::zeros({1, d});
    for (int i = 0; i < 200; ++i) {
      auto next = hoi::fusion_cell(zt, zh, fi, ftp, fhp, w);
      zt = hoi::detach(next[0]);
      zh = hoi::detach(next[1]);
      fi = hoi::detach(next[2]);
    }

    DeqConfig cfg;
    cfg.tol = 1e-8;
    auto [out, diag] = hoi::deq_fuse(ft, fh, w, cfg);
    ASSERT_TRUE(diag.converged) << "seed " << seed;
    EXPECT_LT(linf_diff(out.values(), fi.values()), 1e-3) << "seed " << seed;
  }
}

TEST(DeqFuse, DecoupledTrunkSettlesInTwoIterations) {
  Rng rng(11);
  ParamStore<double> ps;
  std::size_t d = 12;
  auto w = make_fusion(ps, d, rng);
  // cut the fused-input rows of phi1 so F_i no longer depends on the states
  {
    auto& vals = w.phi1.w.values_mut();
    for (std::size_t r = 2 * d; r < 3 * d; ++r)
      for (std::size_t c = 0; c < d; ++c) vals[r * d + c] = 0.0;
  }
  auto ft = testutil::random_tensor({2, d}, rng);
  auto fh = testutil::random_tensor({2, d}, rng);
  DeqConfig cfg;
  cfg.tol = 1e-9;
  auto [out, diag] = hoi::deq_fuse(ft, fh, w, cfg);
  ASSERT_TRUE(diag.converged);

  auto ftp = hoi::mean_axis(ft, 0, true);
  auto fhp = hoi::mean_axis(fh, 0, true);
  auto cell = hoi::fusion_cell(DT::zeros({1, d}), DT::zeros({1, d}),
                               DT::zeros({1, d}), ftp, fhp, w);
  EXPECT_LT(linf_diff(out.values(), cell[2].values()), 1e-8);
}

TEST(DeqFuse, PerturbedInitReachesSameEquilibrium) {
  Rng rng(21);
  ParamStore<double> ps;
  std::size_t d = 16;
  auto w = make_fusion(ps, d, rng);
  auto ft = testutil::random_tensor({3, d}, rng);
  auto fh = testutil::random_tensor({3, d}, rng);
  DeqConfig cfg;
  cfg.tol = 1e-7;
  auto [out0, diag0] = hoi::deq_fuse(ft, fh, w, cfg);
  ASSERT_TRUE(diag0.converged);
  Vec x0 = random_vec(3 * d, rng, 0.01);
  auto [out1, diag1] = hoi::deq_fuse(ft, fh, w, cfg, &x0);
  ASSERT_TRUE(diag1.converged);
  EXPECT_LT(linf_diff(out0.values(), out1.values()), 10 * cfg.tol);
}

TEST(DeqFuse, Deterministic) {
  Rng rng(33);
  ParamStore<double> ps;
  std::size_t d = 16;
  auto w = make_fusion(ps, d, rng);
  auto ft = testutil::random_tensor({3, d}, rng);
  auto fh = testutil::random_tensor({2, d}, rng);
  DeqConfig cfg;
  auto [a, da] = hoi::deq_fuse(ft, fh, w, cfg);
  auto [b, db] = hoi::deq_fuse(ft, fh, w, cfg);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.values().data(), b.values().data(),
                           a.size() * sizeof(double)));
  EXPECT_EQ(da.iterations, db.iterations);
}

TEST(DeqFuse, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(555 + seed);
    ParamStore<double> ps;
    std::size_t d = 8;
    auto w = make_fusion(ps, d, rng);
    auto ft = ps.add("in.ft", testutil::random_tensor({2, d}, rng));
    auto fh = ps.add("in.fh", testutil::random_tensor({2, d}, rng));
    auto mixw = testutil::random_tensor({1, d}, rng);
    DeqConfig cfg;
    cfg.tol = 1e-11;
    cfg.max_iter = 200;
    cfg.adjoint_max_iter = 200;
    auto build = [&]() {
      auto [out, diag] = hoi::deq_fuse(ft, fh, w, cfg);
      return hoi::sum(out * mixw);
    };
    std::vector<DT> params;
    for (auto& [_, t] : ps.items) params.push_back(t);
    double err = testutil::check_gradients(params, build);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

TEST(DeqBackward, OneStepPointsRoughlyLikeAdjoint) {
  int ok = 0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(777 + seed);
    ParamStore<double> ps;
    std::size_t d = 12;
    auto w = make_fusion(ps, d, rng);
    auto ft = testutil::random_tensor({2, d}, rng);
    auto fh = testutil::random_tensor({2, d}, rng);
    DeqConfig cfg;
    cfg.tol = 1e-10;
    auto [out, diag] = hoi::deq_fuse(ft, fh, w, cfg);
    ASSERT_TRUE(diag.converged);
    Vec up = random_vec(d, rng);
    auto ftp = hoi::mean_axis(ft, 0, true).values();
    auto fhp = hoi::mean_axis(fh, 0, true).values();
    DeqConfig one = cfg;
    one.backward = DeqBackward::one_step;
    auto ga = hoi::deq_backward_gradients(diag, ftp, fhp, w, up, cfg);
    auto gs = hoi::deq_backward_gradients(diag, ftp, fhp, w, up, one);
    ASSERT_FALSE(ga.used_fallback);
    Vec a = ga.d_ft, b = gs.d_ft;
    a.insert(a.end(), ga.d_fh.begin(), ga.d_fh.end());
    b.insert(b.end(), gs.d_fh.begin(), gs.d_fh.end());
    for (std::size_t i = 0; i < ga.d_weights.size(); ++i) {
      a.insert(a.end(), ga.d_weights[i].begin(), ga.d_weights[i].end());
      b.insert(b.end(), gs.d_weights[i].begin(), gs.d_weights[i].end());
    }
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    double cosine = dot / std::sqrt(na * nb);
    if (cosine > 0.5) ++ok;
  }
  EXPECT_GE(ok, 4);
}

TEST(DeqBackward, FallsBackWhenAdjointDiverges) {
  Rng rng(91);
  ParamStore<double> ps;
  std::size_t d = 8;
  auto w = make_fusion(ps, d, rng);
  for (auto* lin : {&w.theta_t, &w.theta_h, &w.phi1, &w.phi2})
    for (auto& v : lin->w.values_mut()) v *= 12.0;
  for (auto* ln : {&w.ln_t, &w.ln_h, &w.ln_phi})
    for (auto& g : ln->gain.values_mut()) g = 6.0;
  hoi::DeqState<double> eq;
  eq.z_t = random_vec(d, rng);
  eq.z_h = random_vec(d, rng);
  eq.f_i = random_vec(d, rng);
  Vec ftp = random_vec(d, rng), fhp = random_vec(d, rng);
  Vec up = random_vec(d, rng);
  DeqConfig cfg;
  cfg.adjoint_max_iter = 30;
  auto g = hoi::deq_backward_gradients(eq, ftp, fhp, w, up, cfg);
  EXPECT_TRUE(g.used_fallback);
  EXPECT_FALSE(g.adjoint_converged);
  for (double x : g.d_ft) EXPECT_TRUE(std::isfinite(x));
  // the fallback must agree exactly with explicit one-step mode
  DeqConfig one = cfg;
  one.backward = DeqBackward::one_step;
  auto gs = hoi::deq_backward_gradients(eq, ftp, fhp, w, up, one);
  EXPECT_EQ(0, std::memcmp(g.d_ft.data(), gs.d_ft.data(),
                           d * sizeof(double)));
}

TEST(AltFuse, SumWithIdentityProjectionAddsPooledInputs) {
  Rng rng(5);
  ParamStore<double> ps;
  AttentionConfig acfg;
  acfg.d_model = 8;
  acfg.n_heads = 2;
  auto w = AltFusionWeights<double>::create(ps, "alt", "sum", acfg, rng);
  {
    auto& vals = w.proj.w.values_mut();
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) vals[i * 8 + j] = i == j ? 1.0 : 0.0;
    for (auto& v : w.proj.b.values_mut()) v = 0.0;
  }
  auto ft = testutil::random_tensor({1, 8}, rng);
  auto fh = testutil::random_tensor({1, 8}, rng);
  auto out = hoi::alt_fuse(w, ft, fh);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_NEAR(out.at(i), ft.at(i) + fh.at(i), 1e-12);
}

TEST(AltFuse, ConcatProjectsJointFeatures) {
  Rng rng(6);
  ParamStore<double> ps;
  AttentionConfig acfg;
  acfg.d_model = 8;
  acfg.n_heads = 2;
  auto w = AltFusionWeights<double>::create(ps, "alt", "concat", acfg, rng);
  auto ft = testutil::random_tensor({3, 8}, rng);
  auto fh = testutil::random_tensor({2, 8}, rng);
  auto out = hoi::alt_fuse(w, ft, fh);
  ASSERT_EQ(out.shape(), (hoi::Shape{1, 8}));
  auto joint = hoi::concat<double>(
      {hoi::mean_axis(ft, 0, true), hoi::mean_axis(fh, 0, true)}, 1);
  auto expect = w.proj(joint);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_NEAR(out.at(i), expect.at(i), 1e-12);
}

TEST(AltFuse, SeriesCrossAttentionIsPooledIdentityAtInit) {
  Rng rng(8);
  ParamStore<double> ps;
  AttentionConfig acfg;
  acfg.d_model = 8;
  acfg.n_heads = 2;
  auto w = AltFusionWeights<double>::create(ps, "alt",
                                            "series-cross-attention", acfg,
                                            rng);
  auto ft = testutil::random_tensor({3, 8}, rng);
  auto fh = testutil::random_tensor({2, 8}, rng);
  auto out = hoi::alt_fuse(w, ft, fh);
  auto pooled = hoi::mean_axis(ft, 0, true);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_NEAR(out.at(i), pooled.at(i), 1e-12);
}

TEST(AltFuse, UnknownStrategyThrows) {
  Rng rng(9);
  ParamStore<double> ps;
  AttentionConfig acfg;
  acfg.d_model = 8;
  acfg.n_heads = 2;
  EXPECT_THROW(
      AltFusionWeights<double>::create(ps, "alt", "multiply", acfg, rng),
      hoi::ValueError);
}

TEST(AltFuse, GradientsFlowThroughEachStrategy) {
  for (const char* strategy : {"sum", "concat", "series-cross-attention"}) {
    Rng rng(300);
    ParamStore<double> ps;
    AttentionConfig acfg;
    acfg.d_model = 8;
    acfg.n_heads = 2;
    auto w =
        AltFusionWeights<double>::create(ps, "alt", strategy, acfg, rng);
    for (auto& [_, t] : ps.items)
      for (auto& v : t.values_mut()) v = rng.uniform(-0.4, 0.4);
    auto ft = ps.add("in.ft", testutil::random_tensor({2, 8}, rng));
    auto fh = ps.add("in.fh", testutil::random_tensor({2, 8}, rng));
    auto mixw = testutil::random_tensor({1, 8}, rng);
    auto build = [&]() { return hoi::sum(hoi::alt_fuse(w, ft, fh) * mixw); };
    std::vector<DT> params;
    for (auto& [_, t] : ps.items) params.push_back(t);
    double err = testutil::check_gradients(params, build);
    EXPECT_LT(err, 1e-5) << strategy;
  }
}
