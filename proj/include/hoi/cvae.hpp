#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hoi/attention.hpp"
#include "hoi/metrics.hpp"
#include "hoi/nn.hpp"
#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"

namespace hoi {

struct TrajectorySpec {
  std::size_t n_c = 3;
  std::size_t n_m = 3;

  void validate() const {
    if (n_c < 1 || n_m < 1)
      throw ValueError("trajectory spec: step counts must be >= 1");
  }
};

struct HeatmapSpec {
  std::size_t h = 64;
  std::size_t w = 64;
  double sigma_frac = 0.05;  // fraction of the grid diagonal

  double sigma() const { return sigma_frac * std::sqrt(2.0); }
};

constexpr double kLogVarMin = -20.0;
constexpr double kLogVarMax = 10.0;

// One conditional-VAE head: a 2-layer encoder to (mu, log variance) and a
// 2-layer decoder, both with zero-initialized output layers so the head
// starts at the prior and a neutral reconstruction.
template <class Real>
struct CvaeHead {
  std::size_t gamma_dim = 0, cond_dim = 0, latent_dim = 0, out_dim = 0;
  Linear<Real> enc1, enc_mu, enc_lv, dec1, dec2;

  static CvaeHead create(ParamStore<Real>& ps, const std::string& name,
                         std::size_t gamma_dim, std::size_t cond_dim,
                         std::size_t latent_dim, std::size_t out_dim,
                         std::size_t hidden, Rng& rng) {
    CvaeHead h;
    h.gamma_dim = gamma_dim;
    h.cond_dim = cond_dim;
    h.latent_dim = latent_dim;
    h.out_dim = out_dim;
    h.enc1 = Linear<Real>::create(ps, name + ".enc1", gamma_dim + cond_dim,
                                  hidden, rng);
    h.enc_mu =
        Linear<Real>::create(ps, name + ".mu", hidden, latent_dim, rng, true);
    h.enc_lv =
        Linear<Real>::create(ps, name + ".lv", hidden, latent_dim, rng, true);
    h.dec1 = Linear<Real>::create(ps, name + ".dec1", latent_dim + cond_dim,
                                  hidden, rng);
    h.dec2 =
        Linear<Real>::create(ps, name + ".dec2", hidden, out_dim, rng, true);
    return h;
  }
};

template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> cvae_encode(const CvaeHead<Real>& h,
                                                  const Tensor<Real>& gamma,
                                                  const Tensor<Real>& lam) {
  auto x = concat<Real>({gamma, lam}, 1);
  auto hid = gelu(h.enc1(x));
  return {h.enc_mu(hid), clamp(h.enc_lv(hid), kLogVarMin, kLogVarMax)};
}

template <class Real>
Tensor<Real> reparameterize(const Tensor<Real>& mu,
                            const Tensor<Real>& log_var, Rng& rng) {
  std::vector<Real> eps(mu.size());
  for (auto& e : eps) e = Real(rng.normal());
  auto noise = Tensor<Real>::from(mu.shape(), std::move(eps));
  return mu + exp(0.5 * clamp(log_var, kLogVarMin, kLogVarMax)) * noise;
}

// Latent draw from the prior; deterministic mode uses the prior mean 0.
template <class Real>
Tensor<Real> prior_latent(std::size_t latent_dim, Rng& rng,
                          bool deterministic) {
  std::vector<Real> v(latent_dim, Real(0));
  if (!deterministic)
    for (auto& x : v) x = Real(rng.normal());
  return Tensor<Real>::from({1, latent_dim}, std::move(v));
}

template <class Real>
Tensor<Real> cvae_decode(const CvaeHead<Real>& h, const Tensor<Real>& theta,
                         const Tensor<Real>& lam) {
  auto x = concat<Real>({theta, lam}, 1);
  return h.dec2(gelu(h.dec1(x)));
}

// Isotropic Gaussian density at cell centers, normalized to unit mass.
inline std::vector<double> gaussian_render(double u, double v, double sigma,
                                           std::size_t h, std::size_t w) {
  if (sigma <= 0) throw ValueError("gaussian_render: sigma must be > 0");
  std::vector<double> out(h * w);
  double inv = 1.0 / (2.0 * sigma * sigma);
  double total = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double cu = (double(c) + 0.5) / double(w);
      double cv = (double(r) + 0.5) / double(h);
      double d2 = (cu - u) * (cu - u) + (cv - v) * (cv - v);
      double g = std::exp(-d2 * inv);
      out[r * w + c] = g;
      total += g;
    }
  for (auto& x : out) x /= total;
  return out;
}

template <class Real>
struct HotspotResult {
  Tensor<Real> grid;        // softmax over the H*W logits, for the loss
  std::vector<double> map;  // rendered hotspot map, sums to 1
  double u = 0, v = 0;      // contact point at the argmax cell center
};

template <class Real>
HotspotResult<Real> decode_hotspots(const CvaeHead<Real>& h,
                                    const Tensor<Real>& cond,
                                    const Tensor<Real>& theta,
                                    const HeatmapSpec& spec) {
  auto logits = cvae_decode(h, theta, cond);
  HotspotResult<Real> out;
  out.grid = softmax(logits, 1);
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.grid.size(); ++i)
    if (out.grid.at(i) > out.grid.at(best)) best = i;
  std::size_t row = best / spec.w, col = best % spec.w;
  out.u = (double(col) + 0.5) / double(spec.w);
  out.v = (double(row) + 0.5) / double(spec.h);
  out.map = gaussian_render(out.u, out.v, spec.sigma(), spec.h, spec.w);
  return out;
}

// Trajectory decoder: a CVAE head over 2-D points whose condition is the
// cross-attention readout of the previous point against the feature tokens.
template <class Real>
struct TrajDecoder {
  CvaeHead<Real> head;
  Linear<Real> embed;  // point (u,v) -> d_model query
  BlockWeights<Real> mca_w;

  static TrajDecoder create(ParamStore<Real>& ps, const std::string& name,
                            const AttentionConfig& cfg, std::size_t latent_dim,
                            Rng& rng) {
    TrajDecoder t;
    t.head = CvaeHead<Real>::create(ps, name + ".head", 2, cfg.d_model,
                                    latent_dim, 2, 2 * cfg.d_model, rng);
    t.embed = Linear<Real>::create(ps, name + ".embed", 2, cfg.d_model, rng);
    t.mca_w = BlockWeights<Real>::create_cross(ps, name + ".mca", cfg, rng);
    return t;
  }
};

template <class Real>
Tensor<Real> traj_condition(const TrajDecoder<Real>& dec,
                            const Tensor<Real>& tokens, double u, double v) {
  auto prev = Tensor<Real>::from({1, 2}, {Real(u), Real(v)});
  return mca(dec.embed(prev), tokens, dec.mca_w);
}

template <class Real>
struct TrajectoryResult {
  std::vector<Waypoint> points;          // length n_steps + 1, clamped
  std::vector<Tensor<Real>> raw;         // n_steps unclamped decoder outputs
};

template <class Real>
TrajectoryResult<Real> decode_trajectory(const TrajDecoder<Real>& dec,
                                         const Tensor<Real>& tokens, double su,
                                         double sv, std::size_t n_steps,
                                         Rng& rng, bool deterministic) {
  TrajectoryResult<Real> out;
  out.points.push_back({su, sv});
  double pu = su, pv = sv;
  for (std::size_t i = 0; i < n_steps; ++i) {
    auto cond = traj_condition(dec, tokens, pu, pv);
    auto theta = prior_latent<Real>(dec.head.latent_dim, rng, deterministic);
    auto raw = cvae_decode(dec.head, theta, cond);
    pu = std::min(1.0, std::max(0.0, double(raw.at(0))));
    pv = std::min(1.0, std::max(0.0, double(raw.at(1))));
    out.points.push_back({pu, pv});
    out.raw.push_back(raw);
  }
  return out;
}

template <class Real>
struct TrajTrainResult {
  std::vector<Tensor<Real>> mu, log_var, raw;
};

// Teacher-forced training pass: each step conditions on the previous
// ground-truth point and encodes the current one through the posterior.
template <class Real>
TrajTrainResult<Real> encode_trajectory(const TrajDecoder<Real>& dec,
                                        const Tensor<Real>& tokens, double su,
                                        double sv,
                                        const std::vector<Waypoint>& gt,
                                        Rng& rng) {
  TrajTrainResult<Real> out;
  double pu = su, pv = sv;
  for (const auto& target : gt) {
    auto cond = traj_condition(dec, tokens, pu, pv);
    auto gamma =
        Tensor<Real>::from({1, 2}, {Real(target.u), Real(target.v)});
    auto [mu, lv] = cvae_encode(dec.head, gamma, cond);
    auto theta = reparameterize(mu, lv, rng);
    out.raw.push_back(cvae_decode(dec.head, theta, cond));
    out.mu.push_back(mu);
    out.log_var.push_back(lv);
    pu = target.u;
    pv = target.v;
  }
  return out;
}

template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> decode_pose(const CvaeHead<Real>& h,
                                                  const Tensor<Real>& cond,
                                                  const Tensor<Real>& theta) {
  auto raw = cvae_decode(h, theta, cond);
  if (raw.size() != 58)
    throw ShapeError("decode_pose: head must emit 58 values");
  return {slice(raw, 1, 0, 48), slice(raw, 1, 48, 10)};
}

template <class Real>
Tensor<Real> decode_contact(const CvaeHead<Real>& h, const Tensor<Real>& cond,
                            const Tensor<Real>& theta) {
  return sigmoid(cvae_decode(h, theta, cond));
}

inline std::vector<int> binarize_contact(const std::vector<double>& probs,
                                         double threshold = 0.5) {
  std::vector<int> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    out[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace hoi
