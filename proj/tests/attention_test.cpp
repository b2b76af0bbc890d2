#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "hoi/attention.hpp"
#include "testutil.hpp"

using hoi::AttentionConfig;
using hoi::BlockWeights;
using hoi::CrossWeights;
using hoi::ParamStore;
using hoi::Rng;
using hoi::Shape;
using DT = hoi::Tensor<double>;

namespace {

void randomize(ParamStore<double>& ps, Rng& rng, double scale = 0.4) {
  for (auto& [_, t] : ps.items)
    for (auto& v : t.values_mut()) v = rng.uniform(-scale, scale);
}

std::vector<double> linear_oracle(const std::vector<double>& x, std::size_t t,
                                  std::size_t in, const DT& w, const DT& b) {
  std::size_t out = w.shape()[1];
  std::vector<double> y(t * out, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.at(o);
      for (std::size_t i = 0; i < in; ++i)
        acc += x[r * in + i] * w.at(i * out + o);
      y[r * out + o] = acc;
    }
  return y;
}

// Plain-loop transcription of multi-head scaled dot-product attention,
// independent of the tensor library.
std::vector<double> attention_oracle(const std::vector<double>& x,
                                     std::size_t tx,
                                     const std::vector<double>& y,
                                     std::size_t ty,
                                     const CrossWeights<double>& w) {
  std::size_t d = w.width();
  std::size_t nh = w.n_heads, dh = d / nh;
  auto q = linear_oracle(x, tx, d, w.wq.w, w.wq.b);
  auto k = linear_oracle(y, ty, d, w.wk.w, w.wk.b);
  auto v = linear_oracle(y, ty, d, w.wv.w, w.wv.b);
  std::vector<double> mixed(tx * d, 0.0);
  for (std::size_t h = 0; h < nh; ++h) {
    for (std::size_t qi = 0; qi < tx; ++qi) {
      std::vector<double> logits(ty);
      for (std::size_t ki = 0; ki < ty; ++ki) {
        double acc = 0;
        for (std::size_t c = 0; c < dh; ++c)
          acc += q[qi * d + h * dh + c] * k[ki * d + h * dh + c];
        logits[ki] = acc / std::sqrt(double(dh));
      }
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::size_t ki = 0; ki < ty; ++ki)
        for (std::size_t c = 0; c < dh; ++c)
          mixed[qi * d + h * dh + c] += logits[ki] / z * v[ki * d + h * dh + c];
    }
  }
  return linear_oracle(mixed, tx, d, w.wo.w, w.wo.b);
}

AttentionConfig small_cfg(std::size_t d = 8, std::size_t heads = 2) {
  AttentionConfig cfg;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.ffn_mult = 2;
  cfg.depth_D = 2;
  cfg.n_sa_blocks = 2;
  return cfg;
}

}  // namespace

TEST(Attention, ConfigValidation) {
  AttentionConfig cfg = small_cfg(10, 4);
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
  cfg = small_cfg();
  cfg.n_sa_blocks = 0;
  EXPECT_THROW(cfg.validate(), hoi::ValueError);
}

TEST(Attention, MatchesBruteForceOracle) {
  Rng rng(101);
  for (int rep = 0; rep < 10; ++rep) {
    ParamStore<double> ps;
    auto cfg = small_cfg(8, rep % 2 ? 2 : 4);
    auto w = CrossWeights<double>::create(ps, "w", cfg, rng);
    randomize(ps, rng);
    std::size_t tx = 1 + rep % 3, ty = 1 + (rep * 7) % 4;
    auto x = testutil::random_tensor({tx, 8}, rng);
    auto y = testutil::random_tensor({ty, 8}, rng);
    auto got = cross_attention(x, y, w);
    auto want = attention_oracle(x.values(), tx, y.values(), ty, w);
    ASSERT_EQ(got.shape(), (Shape{tx, 8}));
    for (std::size_t i = 0; i < want.size(); ++i)
      EXPECT_NEAR(got.at(i), want[i], 1e-12);
  }
}

TEST(Attention, TwoQueryThreeKeySingleHeadOracle) {
  Rng rng(55);
  ParamStore<double> ps;
  auto cfg = small_cfg(4, 1);
  auto w = CrossWeights<double>::create(ps, "w", cfg, rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({2, 4}, rng);
  auto y = testutil::random_tensor({3, 4}, rng);
  auto got = cross_attention(x, y, w);
  auto want = attention_oracle(x.values(), 2, y.values(), 3, w);
  for (std::size_t i = 0; i < want.size(); ++i)
    EXPECT_NEAR(got.at(i), want[i], 1e-12);
}

TEST(Attention, SingleKeyGivesValueProjectionForEveryQuery) {
  Rng rng(7);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({5, 8}, rng);
  auto y = testutil::random_tensor({1, 8}, rng);
  auto out = cross_attention(x, y, w);
  auto expected = w.wo(w.wv(y));  // softmax over one key is 1
  for (std::size_t q = 0; q < 5; ++q)
    for (std::size_t c = 0; c < 8; ++c)
      EXPECT_NEAR(out.at(q * 8 + c), expected.at(c), 1e-12);
}

TEST(Attention, ProbabilityRowsSumToOne) {
  Rng rng(13);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({4, 8}, rng);
  auto y = testutil::random_tensor({6, 8}, rng);
  std::vector<DT> probs;
  cross_attention(x, y, w, &probs);
  ASSERT_EQ(probs.size(), 2u);
  for (const auto& p : probs)
    for (std::size_t q = 0; q < 4; ++q) {
      double s = 0;
      for (std::size_t k = 0; k < 6; ++k) s += p.at(q * 6 + k);
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
}

TEST(Attention, WidthMismatchThrows) {
  Rng rng(1);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  auto x = testutil::random_tensor({2, 6}, rng);
  auto y = testutil::random_tensor({2, 8}, rng);
  EXPECT_THROW(cross_attention(x, y, w), hoi::ShapeError);
}

TEST(Attention, MsaBlockZeroInitIsIdentity) {
  Rng rng(21);
  ParamStore<double> ps;
  auto b = BlockWeights<double>::create_self(ps, "b", small_cfg(), rng);
  auto x = testutil::random_tensor({5, 8}, rng);
  auto out = msa_block(x, b);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(out.at(i), x.at(i));
}

TEST(Attention, MsaSingleTokenClosedForm) {
  Rng rng(23);
  ParamStore<double> ps;
  auto cfg = small_cfg(8, 1);
  auto b = BlockWeights<double>::create_self(ps, "b", cfg, rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({1, 8}, rng);
  // with one token the attention weight is 1: MSA(x) = W^O(W^V LN(x))
  auto y = x + b.core.wo(b.core.wv(b.ln1(x)));
  auto expected = y + b.ffn2(gelu(b.ffn1(b.ln2(y))));
  auto got = msa_block(x, b);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(got.at(i), expected.at(i), 1e-12);
}

TEST(Attention, PermutationEquivariance) {
  Rng rng(31);
  ParamStore<double> ps;
  auto b = BlockWeights<double>::create_self(ps, "b", small_cfg(), rng);
  randomize(ps, rng);
  std::size_t t = 4, d = 8;
  auto x = testutil::random_tensor({t, d}, rng);
  auto base = msa_block(x, b);
  std::vector<std::size_t> perm(t);
  std::iota(perm.begin(), perm.end(), 0u);
  int checked = 0;
  do {
    std::vector<double> pv(t * d);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c) pv[i * d + c] = x.at(perm[i] * d + c);
    auto out = msa_block(DT::from({t, d}, pv), b);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < d; ++c)
        ASSERT_NEAR(out.at(i * d + c), base.at(perm[i] * d + c), 1e-10);
    ++checked;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(checked, 24);
}

TEST(Attention, McaUsesQueriesFromXKeysFromY) {
  Rng rng(41);
  ParamStore<double> ps;
  auto b = BlockWeights<double>::create_cross(ps, "b", small_cfg(), rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({3, 8}, rng);
  auto y = testutil::random_tensor({5, 8}, rng);
  auto out = mca(x, y, b);
  EXPECT_EQ(out.shape(), (Shape{3, 8}));
  auto y2 = testutil::random_tensor({5, 8}, rng);
  auto out2 = mca(x, y2, b);
  double diff = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    diff = std::max(diff, std::abs(out.at(i) - out2.at(i)));
  EXPECT_GT(diff, 1e-6);
}

TEST(Attention, ResidualCorrectIdentityAtZeroInit) {
  Rng rng(43);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  auto f = testutil::random_tensor({4, 8}, rng);
  auto fi = testutil::random_tensor({2, 8}, rng);
  auto out = residual_correct(f, fi, w);
  for (std::size_t i = 0; i < f.size(); ++i)
    EXPECT_DOUBLE_EQ(out.at(i), f.at(i));
}

TEST(Attention, ResidualCorrectDecomposition) {
  Rng rng(47);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  randomize(ps, rng);
  auto f = testutil::random_tensor({4, 8}, rng);
  auto fi = testutil::random_tensor({2, 8}, rng);
  auto out = residual_correct(f, fi, w);
  auto attn = cross_attention(f, fi, w);
  for (std::size_t i = 0; i < f.size(); ++i)
    EXPECT_NEAR(out.at(i) - f.at(i), attn.at(i), 1e-12);
}

TEST(Attention, ResidualCorrectGradientFlowsToBothInputs) {
  Rng rng(53);
  ParamStore<double> ps;
  auto w = CrossWeights<double>::create(ps, "w", small_cfg(), rng);
  randomize(ps, rng);
  auto f = testutil::random_tensor({3, 8}, rng).set_requires_grad(true);
  auto fi = testutil::random_tensor({2, 8}, rng).set_requires_grad(true);
  sum(residual_correct(f, fi, w) * residual_correct(f, fi, w)).backward();
  double gf = 0, gfi = 0;
  for (double g : f.grad()) gf += std::abs(g);
  for (double g : fi.grad()) gfi += std::abs(g);
  EXPECT_GT(gf, 1e-8);
  EXPECT_GT(gfi, 1e-8);
}

TEST(Attention, ParallelCrossDepthZeroReturnsInputs) {
  hoi::ParallelCross<double> pc;  // no rounds
  Rng rng(3);
  auto t = testutil::random_tensor({3, 8}, rng);
  auto h = testutil::random_tensor({4, 8}, rng);
  auto [ot, oh] = pc(t, h);
  EXPECT_EQ(ot.values(), t.values());
  EXPECT_EQ(oh.values(), h.values());
}

TEST(Attention, ParallelCrossDepthOneIsOneSimultaneousPair) {
  Rng rng(61);
  ParamStore<double> ps;
  auto cfg = small_cfg();
  cfg.depth_D = 1;
  auto pc = hoi::ParallelCross<double>::create(ps, "pc", cfg, rng);
  randomize(ps, rng);
  auto t = testutil::random_tensor({3, 8}, rng);
  auto h = testutil::random_tensor({4, 8}, rng);
  auto [ot, oh] = pc(t, h);
  auto et = mca(t, h, pc.t_blocks[0]);
  auto eh = mca(h, t, pc.h_blocks[0]);
  for (std::size_t i = 0; i < et.size(); ++i)
    EXPECT_DOUBLE_EQ(ot.at(i), et.at(i));
  for (std::size_t i = 0; i < eh.size(); ++i)
    EXPECT_DOUBLE_EQ(oh.at(i), eh.at(i));
}

TEST(Attention, ParallelCrossIsNotSerialComposition) {
  Rng rng(67);
  ParamStore<double> ps;
  auto pc = hoi::ParallelCross<double>::create(ps, "pc", small_cfg(), rng);
  randomize(ps, rng);
  auto t = testutil::random_tensor({3, 8}, rng);
  auto h = testutil::random_tensor({3, 8}, rng);
  auto [pt, ph] = pc(t, h);
  // serial variant: the h-update reads the already-updated t stream
  auto st = t, sh = h;
  for (std::size_t r = 0; r < pc.t_blocks.size(); ++r) {
    st = mca(st, sh, pc.t_blocks[r]);
    sh = mca(sh, st, pc.h_blocks[r]);
  }
  double diff = 0;
  for (std::size_t i = 0; i < ph.size(); ++i)
    diff = std::max(diff, std::abs(ph.at(i) - sh.at(i)));
  EXPECT_GT(diff, 1e-8);
  (void)pt;
}

TEST(Attention, ParallelCrossMirroredWeightsSwapOutputs) {
  Rng rng(71);
  ParamStore<double> ps;
  auto pc = hoi::ParallelCross<double>::create(ps, "pc", small_cfg(), rng);
  randomize(ps, rng);
  hoi::ParallelCross<double> mirrored;
  mirrored.t_blocks = pc.h_blocks;
  mirrored.h_blocks = pc.t_blocks;
  auto t = testutil::random_tensor({3, 8}, rng);
  auto h = testutil::random_tensor({4, 8}, rng);
  auto [ot, oh] = pc(t, h);
  auto [mt, mh] = mirrored(h, t);
  for (std::size_t i = 0; i < ot.size(); ++i)
    EXPECT_DOUBLE_EQ(mh.at(i), ot.at(i));
  for (std::size_t i = 0; i < oh.size(); ++i)
    EXPECT_DOUBLE_EQ(mt.at(i), oh.at(i));
}

TEST(AttentionGrad, BlockCompositionMatchesFiniteDifferences) {
  Rng rng(73);
  ParamStore<double> ps;
  auto cfg = small_cfg(4, 2);
  auto blk = BlockWeights<double>::create_self(ps, "b", cfg, rng);
  auto cw = CrossWeights<double>::create(ps, "c", cfg, rng);
  randomize(ps, rng);
  auto x = testutil::random_tensor({3, 4}, rng);
  auto ctx = testutil::random_tensor({2, 4}, rng);
  std::vector<DT> params;
  params.push_back(x);
  params.push_back(ctx);
  for (auto& [_, t] : ps.items) params.push_back(t);
  double err = testutil::check_gradients(params, [&] {
    auto enc = msa_block(x, blk);
    auto fixed = residual_correct(enc, ctx, cw);
    return mean(fixed * fixed);
  });
  EXPECT_LT(err, 1e-5);
}
