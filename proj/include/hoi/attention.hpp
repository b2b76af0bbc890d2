#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hoi/nn.hpp"

namespace hoi {

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t depth_D = 2;     // parallel cross-constraint rounds
  std::size_t n_sa_blocks = 2; // self-attention encoder depth

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ValueError("attention config: d_model " + std::to_string(d_model) +
                       " not divisible by n_heads " + std::to_string(n_heads));
    if (n_sa_blocks < 1)
      throw ValueError("attention config: n_sa_blocks must be >= 1");
    if (ffn_mult == 0)
      throw ValueError("attention config: ffn_mult must be >= 1");
  }
};

// Raw scaled dot-product multi-head attention weights (no residual context).
template <class Real>
struct CrossWeights {
  Linear<Real> wq, wk, wv, wo;
  std::size_t n_heads = 1;

  static CrossWeights create(ParamStore<Real>& ps, const std::string& name,
                             const AttentionConfig& cfg, Rng& rng,
                             bool zero_out = true) {
    cfg.validate();
    std::size_t d = cfg.d_model;
    CrossWeights w;
    w.wq = Linear<Real>::create(ps, name + ".wq", d, d, rng);
    w.wk = Linear<Real>::create(ps, name + ".wk", d, d, rng);
    w.wv = Linear<Real>::create(ps, name + ".wv", d, d, rng);
    w.wo = Linear<Real>::create(ps, name + ".wo", d, d, rng, zero_out);
    w.n_heads = cfg.n_heads;
    return w;
  }

  std::size_t width() const { return wq.w.shape()[0]; }
};

// Queries from x, keys/values from y.  Per-head attention probabilities can
// be captured for diagnostics via probs_out.
template <class Real>
Tensor<Real> cross_attention(const Tensor<Real>& x, const Tensor<Real>& y,
                             const CrossWeights<Real>& w,
                             std::vector<Tensor<Real>>* probs_out = nullptr) {
  std::size_t d = w.width();
  if (x.shape().back() != d || y.shape().back() != d)
    throw ShapeError("cross_attention: inputs " + shape_str(x.shape()) +
                     ", " + shape_str(y.shape()) + " do not match width " +
                     std::to_string(d));
  auto q = w.wq(x);
  auto k = w.wk(y);
  auto v = w.wv(y);
  std::size_t dh = d / w.n_heads;
  double scale = 1.0 / std::sqrt(double(dh));
  std::vector<Tensor<Real>> heads;
  heads.reserve(w.n_heads);
  for (std::size_t h = 0; h < w.n_heads; ++h) {
    auto qh = slice(q, 1, h * dh, dh);
    auto kh = slice(k, 1, h * dh, dh);
    auto vh = slice(v, 1, h * dh, dh);
    auto scores = matmul(qh, transpose(kh)) * scale;
    auto probs = softmax(scores, 1);
    if (probs_out) probs_out->push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  return w.wo(concat(heads, 1));
}

// One transformer block: attention core + feed-forward, pre-norm residuals.
template <class Real>
struct BlockWeights {
  CrossWeights<Real> core;
  Linear<Real> ffn1, ffn2;
  LayerNorm<Real> ln1, ln2, ln_kv;
  bool cross = false;

  static BlockWeights create_self(ParamStore<Real>& ps,
                                  const std::string& name,
                                  const AttentionConfig& cfg, Rng& rng) {
    BlockWeights w;
    w.core = CrossWeights<Real>::create(ps, name + ".attn", cfg, rng);
    std::size_t d = cfg.d_model, f = d * cfg.ffn_mult;
    w.ffn1 = Linear<Real>::create(ps, name + ".ffn1", d, f, rng);
    w.ffn2 = Linear<Real>::create(ps, name + ".ffn2", f, d, rng, true);
    w.ln1 = LayerNorm<Real>::create(ps, name + ".ln1", d);
    w.ln2 = LayerNorm<Real>::create(ps, name + ".ln2", d);
    return w;
  }

  static BlockWeights create_cross(ParamStore<Real>& ps,
                                   const std::string& name,
                                   const AttentionConfig& cfg, Rng& rng) {
    BlockWeights w = create_self(ps, name, cfg, rng);
    w.ln_kv = LayerNorm<Real>::create(ps, name + ".lnkv", cfg.d_model);
    w.cross = true;
    return w;
  }
};

template <class Real>
Tensor<Real> msa_block(const Tensor<Real>& x, const BlockWeights<Real>& w) {
  auto xn = w.ln1(x);
  auto y = x + cross_attention(xn, xn, w.core);
  return y + w.ffn2(gelu(w.ffn1(w.ln2(y))));
}

template <class Real>
Tensor<Real> mca(const Tensor<Real>& x, const Tensor<Real>& y,
                 const BlockWeights<Real>& w) {
  auto z = x + cross_attention(w.ln1(x), w.ln_kv(y), w.core);
  return z + w.ffn2(gelu(w.ffn1(w.ln2(z))));
}

// Constraint application at the residual-correction site: F + MCA(F, F_i)
// with the attention applied raw, so a zero output projection is an exact
// identity.
template <class Real>
Tensor<Real> residual_correct(const Tensor<Real>& f, const Tensor<Real>& f_i,
                              const CrossWeights<Real>& w) {
  return f + cross_attention(f, f_i, w);
}

// Stack of self-attention encoder blocks.
template <class Real>
struct SelfStack {
  std::vector<BlockWeights<Real>> blocks;

  static SelfStack create(ParamStore<Real>& ps, const std::string& name,
                          const AttentionConfig& cfg, Rng& rng) {
    SelfStack s;
    for (std::size_t i = 0; i < cfg.n_sa_blocks; ++i)
      s.blocks.push_back(BlockWeights<Real>::create_self(
          ps, name + ".block" + std::to_string(i), cfg, rng));
    return s;
  }

  Tensor<Real> operator()(Tensor<Real> x) const {
    for (const auto& b : blocks) x = msa_block(x, b);
    return x;
  }
};

// Depth-D rounds of simultaneous cross-attention between the two streams;
// both updates in a round read the same pre-round pair.
template <class Real>
struct ParallelCross {
  std::vector<BlockWeights<Real>> t_blocks, h_blocks;

  static ParallelCross create(ParamStore<Real>& ps, const std::string& name,
                              const AttentionConfig& cfg, Rng& rng) {
    ParallelCross pc;
    for (std::size_t r = 0; r < cfg.depth_D; ++r) {
      pc.t_blocks.push_back(BlockWeights<Real>::create_cross(
          ps, name + ".t" + std::to_string(r), cfg, rng));
      pc.h_blocks.push_back(BlockWeights<Real>::create_cross(
          ps, name + ".h" + std::to_string(r), cfg, rng));
    }
    return pc;
  }

  std::pair<Tensor<Real>, Tensor<Real>> operator()(Tensor<Real> f_t,
                                                   Tensor<Real> f_h) const {
    for (std::size_t r = 0; r < t_blocks.size(); ++r) {
      auto nt = mca(f_t, f_h, t_blocks[r]);
      auto nh = mca(f_h, f_t, h_blocks[r]);
      f_t = nt;
      f_h = nh;
    }
    return {f_t, f_h};
  }
};

}  // namespace hoi
