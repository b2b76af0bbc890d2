#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hoi/attention.hpp"
#include "hoi/cvae.hpp"
#include "hoi/data.hpp"
#include "hoi/deq.hpp"
#include "hoi/hand.hpp"
#include "hoi/losses.hpp"
#include "hoi/metrics.hpp"
#include "hoi/nn.hpp"

#include "json.hpp"

namespace hoi {

struct LatentDims {
  std::size_t trend = 32, hotspot = 32, mani = 32, pose = 32, contact = 32;

  void set_all(std::size_t d) { trend = hotspot = mani = pose = contact = d; }

  nlohmann::json to_json() const {
    return {{"trend", trend}, {"hotspot", hotspot}, {"mani", mani},
            {"pose", pose},   {"contact", contact}};
  }

  static LatentDims from_json(const nlohmann::json& j) {
    LatentDims l;
    l.trend = j.at("trend").get<std::size_t>();
    l.hotspot = j.at("hotspot").get<std::size_t>();
    l.mani = j.at("mani").get<std::size_t>();
    l.pose = j.at("pose").get<std::size_t>();
    l.contact = j.at("contact").get<std::size_t>();
    return l;
  }
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_sa_blocks = 2;
  std::size_t depth_D = 2;
  DeqConfig deq;
  std::string fusion_strategy = "deq";  // deq | sum | concat | series-cross-attention
  std::string cross_strategy = "default";  // default | sum | concat | series-cross-attention
  std::string res_strategy = "default";    // default | sum | concat | series-cross-attention
  LatentDims latent;
  bool enable_cross = true;
  bool enable_deq = true;
  bool enable_res = true;
  TrajectorySpec traj;
  HeatmapSpec heatmap;
  std::uint64_t hand_seed = 0;
  std::size_t n_verbs = 16, n_nouns = 32, scene_dim = 8;

  bool deq_overridden() const {
    return enable_deq && fusion_strategy != "deq";
  }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ValueError("model config: d_model must divide by n_heads");
    if (depth_D < 1) throw ValueError("model config: depth_D must be >= 1");
    if (fusion_strategy != "deq" && fusion_strategy != "sum" &&
        fusion_strategy != "concat" &&
        fusion_strategy != "series-cross-attention")
      throw ValueError("model config: unknown fusion_strategy '" +
                       fusion_strategy + "'");
    auto site_ok = [](const std::string& s) {
      return s == "default" || s == "sum" || s == "concat" ||
             s == "series-cross-attention";
    };
    if (!site_ok(cross_strategy))
      throw ValueError("model config: unknown cross_strategy '" +
                       cross_strategy + "'");
    if (!site_ok(res_strategy))
      throw ValueError("model config: unknown res_strategy '" + res_strategy +
                       "'");
    deq.validate();
    traj.validate();
    if (heatmap.h < 2 || heatmap.w < 2 || heatmap.sigma_frac <= 0)
      throw ValueError("model config: bad heatmap spec");
  }

  AttentionConfig attention() const {
    AttentionConfig a;
    a.d_model = d_model;
    a.n_heads = n_heads;
    a.depth_D = depth_D;
    a.n_sa_blocks = n_sa_blocks;
    return a;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["n_sa_blocks"] = n_sa_blocks;
    j["depth_D"] = depth_D;
    j["deq"] = {{"tol", deq.tol},
                {"max_iter", deq.max_iter},
                {"solver", deq.solver == DeqSolver::anderson ? "anderson"
                                                             : "plain"},
                {"anderson_memory", deq.anderson_memory},
                {"damping", deq.damping}};
    j["fusion_strategy"] = fusion_strategy;
    j["cross_strategy"] = cross_strategy;
    j["res_strategy"] = res_strategy;
    j["latent_dims"] = latent.to_json();
    j["enable_cross"] = enable_cross;
    j["enable_deq"] = enable_deq;
    j["enable_res"] = enable_res;
    j["n_c"] = traj.n_c;
    j["n_m"] = traj.n_m;
    j["heatmap"] = {{"h", heatmap.h}, {"w", heatmap.w},
                    {"sigma_frac", heatmap.sigma_frac}};
    j["hand_seed"] = hand_seed;
    j["n_verbs"] = n_verbs;
    j["n_nouns"] = n_nouns;
    j["scene_dim"] = scene_dim;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_sa_blocks = j.at("n_sa_blocks").get<std::size_t>();
    c.depth_D = j.at("depth_D").get<std::size_t>();
    const auto& d = j.at("deq");
    c.deq.tol = d.at("tol").get<double>();
    c.deq.max_iter = d.at("max_iter").get<int>();
    c.deq.solver = d.at("solver").get<std::string>() == "plain"
                       ? DeqSolver::plain
                       : DeqSolver::anderson;
    c.deq.anderson_memory = d.at("anderson_memory").get<int>();
    c.deq.damping = d.at("damping").get<double>();
    c.fusion_strategy = j.at("fusion_strategy").get<std::string>();
    c.cross_strategy = j.value("cross_strategy", std::string("default"));
    c.res_strategy = j.value("res_strategy", std::string("default"));
    c.latent = LatentDims::from_json(j.at("latent_dims"));
    c.enable_cross = j.at("enable_cross").get<bool>();
    c.enable_deq = j.at("enable_deq").get<bool>();
    c.enable_res = j.at("enable_res").get<bool>();
    c.traj.n_c = j.at("n_c").get<std::size_t>();
    c.traj.n_m = j.at("n_m").get<std::size_t>();
    c.heatmap.h = j.at("heatmap").at("h").get<std::size_t>();
    c.heatmap.w = j.at("heatmap").at("w").get<std::size_t>();
    c.heatmap.sigma_frac = j.at("heatmap").at("sigma_frac").get<double>();
    c.hand_seed = j.at("hand_seed").get<std::uint64_t>();
    c.n_verbs = j.at("n_verbs").get<std::size_t>();
    c.n_nouns = j.at("n_nouns").get<std::size_t>();
    c.scene_dim = j.at("scene_dim").get<std::size_t>();
    c.validate();
    return c;
  }
};

template <class Real>
struct Model {
  ModelConfig cfg;
  ParamStore<Real> ps;
  HandTemplate<Real> tpl;

  StubEncoders<Real> enc;
  SelfStack<Real> trend_enc;
  Linear<Real> hot_ffn1, hot_ffn2;
  LayerNorm<Real> hot_ln;
  ParallelCross<Real> cross;
  Linear<Real> cross_mix_t, cross_mix_h;
  FusionWeights<Real> fusion;
  AltFusionWeights<Real> alt;
  Linear<Real> pooled_proj;
  std::vector<CrossWeights<Real>> res_t, res_h;
  std::vector<Linear<Real>> res_mix;
  std::vector<BlockWeights<Real>> res_blk_t, res_blk_h;
  BlockWeights<Real> decomp_sa;
  Linear<Real> proj_m, proj_p, proj_c;
  CvaeHead<Real> hotspot_head, pose_head, contact_head;
  TrajDecoder<Real> trend_dec, mani_dec;

  static Model create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.tpl = make_synthetic_template<Real>(cfg.hand_seed);
    auto acfg = cfg.attention();
    std::size_t d = cfg.d_model;
    std::size_t hidden = 2 * d;
    auto fork = [&](std::uint64_t tag) { return Rng(mix64(seed, tag)); };

    {
      auto r = fork(1);
      m.enc = StubEncoders<Real>::create(m.ps, "stub", cfg.n_verbs,
                                         cfg.n_nouns, cfg.scene_dim, d, r);
    }
    {
      auto r = fork(2);
      m.trend_enc = SelfStack<Real>::create(m.ps, "enc_t", acfg, r);
    }
    {
      auto r = fork(3);
      m.hot_ffn1 = Linear<Real>::create(m.ps, "enc_h.ffn1", d, 4 * d, r);
      m.hot_ffn2 = Linear<Real>::create(m.ps, "enc_h.ffn2", 4 * d, d, r, true);
      m.hot_ln = LayerNorm<Real>::create(m.ps, "enc_h.ln", d);
    }
    if (cfg.enable_cross) {
      auto r = fork(4);
      if (cfg.cross_strategy == "sum") {
        m.cross_mix_t = Linear<Real>::create(m.ps, "cross_sum_t", d, d, r,
                                             true);
        m.cross_mix_h = Linear<Real>::create(m.ps, "cross_sum_h", d, d, r,
                                             true);
      } else if (cfg.cross_strategy == "concat") {
        m.cross_mix_t = Linear<Real>::create(m.ps, "cross_cat_t", 2 * d, d, r,
                                             true);
        m.cross_mix_h = Linear<Real>::create(m.ps, "cross_cat_h", 2 * d, d, r,
                                             true);
      } else {
        m.cross = ParallelCross<Real>::create(m.ps, "cross", acfg, r);
      }
    }
    if (cfg.enable_deq) {
      auto r = fork(5);
      if (cfg.fusion_strategy == "deq")
        m.fusion = FusionWeights<Real>::create(m.ps, "fusion", d, r);
      else
        m.alt = AltFusionWeights<Real>::create(m.ps, "fusion_alt",
                                               cfg.fusion_strategy, acfg, r,
                                               cfg.depth_D);
    } else {
      auto r = fork(6);
      m.pooled_proj = Linear<Real>::create(m.ps, "pooled_proj", 2 * d, d, r);
    }
    if (cfg.enable_res) {
      auto r = fork(7);
      for (std::size_t i = 0; i < cfg.depth_D; ++i) {
        auto tag = std::to_string(i);
        if (cfg.res_strategy == "sum") {
          m.res_mix.push_back(
              Linear<Real>::create(m.ps, "res_sum" + tag, d, d, r, true));
        } else if (cfg.res_strategy == "concat") {
          m.res_mix.push_back(
              Linear<Real>::create(m.ps, "res_cat" + tag, 3 * d, d, r, true));
        } else if (cfg.res_strategy == "series-cross-attention") {
          m.res_blk_t.push_back(BlockWeights<Real>::create_cross(
              m.ps, "res_blk_t" + tag, acfg, r));
          m.res_blk_h.push_back(BlockWeights<Real>::create_cross(
              m.ps, "res_blk_h" + tag, acfg, r));
        } else {
          m.res_t.push_back(
              CrossWeights<Real>::create(m.ps, "res_t" + tag, acfg, r));
          m.res_h.push_back(
              CrossWeights<Real>::create(m.ps, "res_h" + tag, acfg, r));
        }
      }
    }
    {
      auto r = fork(8);
      m.decomp_sa = BlockWeights<Real>::create_self(m.ps, "decomp.sa", acfg, r);
      m.proj_m = Linear<Real>::create(m.ps, "decomp.m", d, d, r);
      m.proj_p = Linear<Real>::create(m.ps, "decomp.p", d, d, r);
      m.proj_c = Linear<Real>::create(m.ps, "decomp.c", d, d, r);
    }
    {
      auto r = fork(9);
      std::size_t hw = cfg.heatmap.h * cfg.heatmap.w;
      m.hotspot_head = CvaeHead<Real>::create(m.ps, "head_h", hw, d,
                                              cfg.latent.hotspot, hw, hidden,
                                              r);
    }
    {
      auto r = fork(10);
      m.trend_dec =
          TrajDecoder<Real>::create(m.ps, "head_t", acfg, cfg.latent.trend, r);
    }
    {
      auto r = fork(11);
      m.mani_dec =
          TrajDecoder<Real>::create(m.ps, "head_m", acfg, cfg.latent.mani, r);
    }
    {
      auto r = fork(12);
      m.pose_head = CvaeHead<Real>::create(m.ps, "head_p", 58, d,
                                           cfg.latent.pose, 58, hidden, r);
    }
    {
      auto r = fork(13);
      m.contact_head = CvaeHead<Real>::create(m.ps, "head_c", 778, d,
                                              cfg.latent.contact, 778, hidden,
                                              r);
    }
    return m;
  }
};

template <class Real>
struct TrunkFeatures {
  Tensor<Real> f_t, f_h;        // token features [16, d]
  Tensor<Real> f_m, f_p, f_c;   // decomposed element features [1, d]
  Tensor<Real> cond_h;          // pooled hotspot condition [1, d]
  int deq_iters = 0;
  double deq_residual = 0;
};

// Shared encoder / constraint / fusion / decomposition trunk of the forward
// pass; decoders hang off the returned features.
template <class Real>
TrunkFeatures<Real> run_trunk(const Model<Real>& m,
                              const InteractionSample& s) {
  TrunkFeatures<Real> out;
  auto [h_tok, o_tok] = stub_encode(m.enc, s);
  auto f_t = m.trend_enc(h_tok);
  auto f_h = m.hot_ln(o_tok + m.hot_ffn2(gelu(m.hot_ffn1(o_tok))));
  if (m.cfg.enable_cross) {
    if (m.cfg.cross_strategy == "sum") {
      auto mixed = f_t + f_h;
      auto ct = f_t + m.cross_mix_t(mixed);
      auto ch = f_h + m.cross_mix_h(mixed);
      f_t = ct;
      f_h = ch;
    } else if (m.cfg.cross_strategy == "concat") {
      auto mixed = concat<Real>({f_t, f_h}, 1);
      auto ct = f_t + m.cross_mix_t(mixed);
      auto ch = f_h + m.cross_mix_h(mixed);
      f_t = ct;
      f_h = ch;
    } else if (m.cfg.cross_strategy == "series-cross-attention") {
      for (std::size_t i = 0; i < m.cross.t_blocks.size(); ++i) {
        f_t = mca(f_t, f_h, m.cross.t_blocks[i]);
        f_h = mca(f_h, f_t, m.cross.h_blocks[i]);
      }
    } else {
      auto [ct, ch] = m.cross(f_t, f_h);
      f_t = ct;
      f_h = ch;
    }
  }

  Tensor<Real> f_i;
  if (m.cfg.enable_deq) {
    if (m.cfg.fusion_strategy == "deq") {
      try {
        auto [fi, st] = deq_fuse(f_t, f_h, m.fusion, m.cfg.deq);
        f_i = fi;
        out.deq_iters = st.iterations;
        out.deq_residual = st.residual;
      } catch (const DivergedError& e) {
        throw DivergedError(e.iteration, "sample " + s.sample_id + ": " +
                                             e.what());
      }
    } else {
      f_i = alt_fuse(m.alt, f_t, f_h);
    }
  } else {
    f_i = m.pooled_proj(
        concat<Real>({mean_axis(f_t, 0, true), mean_axis(f_h, 0, true)}, 1));
  }

  if (m.cfg.enable_res) {
    auto pool_t = mean_axis(f_t, 0, true);
    auto pool_h = mean_axis(f_h, 0, true);
    if (m.cfg.res_strategy == "sum") {
      for (auto& mix : m.res_mix) f_i = f_i + mix(pool_t + pool_h);
    } else if (m.cfg.res_strategy == "concat") {
      for (auto& mix : m.res_mix)
        f_i = f_i + mix(concat<Real>({f_i, pool_t, pool_h}, 1));
    } else if (m.cfg.res_strategy == "series-cross-attention") {
      for (std::size_t i = 0; i < m.res_blk_t.size(); ++i) {
        f_i = mca(f_i, f_t, m.res_blk_t[i]);
        f_i = mca(f_i, f_h, m.res_blk_h[i]);
      }
    } else {
      for (std::size_t i = 0; i < m.res_t.size(); ++i) {
        f_i = residual_correct(f_i, f_t, m.res_t[i]);
        f_i = residual_correct(f_i, f_h, m.res_h[i]);
      }
    }
  }

  auto fd = msa_block(f_i, m.decomp_sa);
  out.f_m = m.proj_m(fd);
  out.f_p = m.proj_p(fd);
  out.f_c = m.proj_c(fd);
  out.f_t = f_t;
  out.f_h = f_h;
  out.cond_h = mean_axis(f_h, 0, true);
  return out;
}

struct PredictionBundle {
  std::vector<Waypoint> trend;      // n_c + 1 points, index 0 = hand start
  std::vector<double> hotspot_map;  // h*w, sums to 1
  double hotspot_u = 0, hotspot_v = 0;
  std::vector<Waypoint> mani;       // n_m + 1 points, index 0 = trend end
  std::vector<double> theta, beta;
  std::vector<double> joints21, vertices;  // 21*3, 778*3
  std::vector<double> contact_probs;
  std::vector<int> contact_mask;
  int deq_iters = 0;
  double deq_residual = 0;
};

template <class Real>
PredictionBundle forward(const Model<Real>& m, const InteractionSample& s,
                         Rng& rng, bool deterministic) {
  auto trunk = run_trunk(m, s);
  PredictionBundle b;
  b.deq_iters = trunk.deq_iters;
  b.deq_residual = trunk.deq_residual;

  auto z_h = prior_latent<Real>(m.cfg.latent.hotspot, rng, deterministic);
  auto hot = decode_hotspots(m.hotspot_head, trunk.cond_h, z_h, m.cfg.heatmap);
  b.hotspot_map = hot.map;
  b.hotspot_u = hot.u;
  b.hotspot_v = hot.v;

  double su = s.gt_trend.empty() ? 0.5 : s.gt_trend[0].u;
  double sv = s.gt_trend.empty() ? 0.5 : s.gt_trend[0].v;
  auto trend = decode_trajectory(m.trend_dec, trunk.f_t, su, sv,
                                 m.cfg.traj.n_c, rng, deterministic);
  b.trend = trend.points;

  auto mani = decode_trajectory(m.mani_dec, trunk.f_m, b.trend.back().u,
                                b.trend.back().v, m.cfg.traj.n_m, rng,
                                deterministic);
  b.mani = mani.points;

  auto z_p = prior_latent<Real>(m.cfg.latent.pose, rng, deterministic);
  auto [theta_t, beta_t] = decode_pose(m.pose_head, trunk.f_p, z_p);
  for (std::size_t i = 0; i < theta_t.size(); ++i)
    b.theta.push_back(double(theta_t.at(i)));
  for (std::size_t i = 0; i < beta_t.size(); ++i)
    b.beta.push_back(double(beta_t.at(i)));
  auto mesh = hand_forward(m.tpl, theta_t, beta_t);
  for (std::size_t i = 0; i < mesh.joints21.size(); ++i)
    b.joints21.push_back(double(mesh.joints21.at(i)));
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    b.vertices.push_back(double(mesh.vertices.at(i)));

  auto z_c = prior_latent<Real>(m.cfg.latent.contact, rng, deterministic);
  auto probs = decode_contact(m.contact_head, trunk.f_c, z_c);
  for (std::size_t i = 0; i < probs.size(); ++i)
    b.contact_probs.push_back(double(probs.at(i)));
  b.contact_mask = binarize_contact(b.contact_probs);
  return b;
}

template <class Real>
struct SampleLosses {
  ElementLoss<Real> trend, hotspot, pose, contact, mani;
  Tensor<Real> joint_term;
  int deq_iters = 0;
  double deq_residual = 0;
};

// Teacher-forced training pass producing every component of the total loss.
template <class Real>
SampleLosses<Real> train_forward(const Model<Real>& m,
                                 const InteractionSample& s, Rng& rng) {
  auto trunk = run_trunk(m, s);
  SampleLosses<Real> out;
  out.deq_iters = trunk.deq_iters;
  out.deq_residual = trunk.deq_residual;
  std::size_t hw = m.cfg.heatmap.h * m.cfg.heatmap.w;

  auto traj_element = [&](const TrajDecoder<Real>& dec,
                          const Tensor<Real>& tokens,
                          const std::vector<Waypoint>& track) {
    std::vector<Waypoint> fresh(track.begin() + 1, track.end());
    auto tr = encode_trajectory(dec, tokens, track[0].u, track[0].v, fresh,
                                rng);
    Tensor<Real> recon, kl;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      auto gt = Tensor<Real>::from({1, 2},
                                   {Real(fresh[i].u), Real(fresh[i].v)});
      auto r = mse_recon(tr.raw[i], gt);
      auto k = kl_loss(tr.mu[i], tr.log_var[i]);
      recon = i == 0 ? r : recon + r;
      kl = i == 0 ? k : kl + k;
    }
    double inv = 1.0 / double(fresh.size());
    return ElementLoss<Real>{recon * inv, kl * inv};
  };

  out.trend = traj_element(m.trend_dec, trunk.f_t, s.gt_trend);
  out.mani = traj_element(m.mani_dec, trunk.f_m, s.gt_mani);

  {
    auto map = gaussian_render(s.hotspot_u, s.hotspot_v,
                               m.cfg.heatmap.sigma(), m.cfg.heatmap.h,
                               m.cfg.heatmap.w);
    auto gamma = Tensor<Real>::from({1, hw},
                                    std::vector<Real>(map.begin(), map.end()));
    auto [mu, lv] = cvae_encode(m.hotspot_head, gamma, trunk.cond_h);
    auto z = reparameterize(mu, lv, rng);
    auto grid = softmax(cvae_decode(m.hotspot_head, z, trunk.cond_h), 1);
    // summed over cells so the unit-mass maps keep a usable scale
    out.hotspot = {mse_recon(grid, gamma) * double(hw), kl_loss(mu, lv)};
  }

  {
    std::vector<Real> pb;
    pb.reserve(58);
    for (double x : s.gt_theta) pb.push_back(Real(x));
    for (double x : s.gt_beta) pb.push_back(Real(x));
    auto gamma = Tensor<Real>::from({1, 58}, std::move(pb));
    auto [mu, lv] = cvae_encode(m.pose_head, gamma, trunk.f_p);
    auto z = reparameterize(mu, lv, rng);
    auto raw = cvae_decode(m.pose_head, z, trunk.f_p);
    out.pose = {mse_recon(raw, gamma), kl_loss(mu, lv)};

    auto mesh = hand_forward(m.tpl, slice(raw, 1, 0, 48),
                             slice(raw, 1, 48, 10));
    auto gt_theta = Tensor<Real>::from(
        {1, 48}, std::vector<Real>(s.gt_theta.begin(), s.gt_theta.end()));
    auto gt_beta = Tensor<Real>::from(
        {1, 10}, std::vector<Real>(s.gt_beta.begin(), s.gt_beta.end()));
    auto gt_mesh = hand_forward(m.tpl, gt_theta, gt_beta);
    out.joint_term = joint_loss(mesh.joints21, detach(gt_mesh.joints21));
  }

  {
    std::vector<Real> cb;
    cb.reserve(778);
    for (int c : s.gt_contact) cb.push_back(Real(c));
    auto gamma = Tensor<Real>::from({1, 778}, std::move(cb));
    auto [mu, lv] = cvae_encode(m.contact_head, gamma, trunk.f_c);
    auto z = reparameterize(mu, lv, rng);
    auto probs = decode_contact(m.contact_head, trunk.f_c, z);
    out.contact = {bce_contact(probs, gamma), kl_loss(mu, lv)};
  }
  return out;
}

template <class Real>
Tensor<Real> sample_total_loss(const SampleLosses<Real>& l,
                               const LossWeights& w) {
  return total_loss(l.trend, l.hotspot, l.pose, l.contact, l.mani,
                    l.joint_term, w);
}

// ---- checkpoints ----

template <class Real>
nlohmann::json optimizer_to_json(const AdamW<Real>& opt) {
  nlohmann::json j;
  j["t"] = opt.t;
  j["m"] = opt.m;
  j["v"] = opt.v;
  return j;
}

template <class Real>
void optimizer_from_json(const nlohmann::json& j, AdamW<Real>& opt) {
  opt.t = j.at("t").get<long long>();
  opt.m = j.at("m").template get<std::vector<std::vector<Real>>>();
  opt.v = j.at("v").template get<std::vector<std::vector<Real>>>();
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const Model<Real>& m,
                     std::uint64_t init_seed, std::size_t epoch,
                     std::size_t step, const AdamW<Real>* opt = nullptr) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["model_config"] = m.cfg.to_json();
  j["init_seed"] = init_seed;
  j["epoch"] = epoch;
  j["step"] = step;
  nlohmann::json params;
  for (const auto& [name, t] : m.ps.items) params[name] = t.values();
  j["params"] = std::move(params);
  if (opt) j["optimizer"] = optimizer_to_json(*opt);
  write_text_file(path, j.dump());
}

struct CheckpointInfo {
  ModelConfig cfg;
  std::uint64_t init_seed = 0;
  std::size_t epoch = 0, step = 0;
  bool has_optimizer = false;
};

template <class Real>
CheckpointInfo load_checkpoint(const std::filesystem::path& path,
                               Model<Real>& out, AdamW<Real>* opt = nullptr) {
  auto j = nlohmann::json::parse(read_text_file(path));
  if (!j.contains("schema_version") ||
      j.at("schema_version").get<std::string>() != kSchemaVersion)
    throw ValueError("checkpoint '" + path.string() +
                     "': field 'schema_version' has unknown value");
  CheckpointInfo info;
  info.cfg = ModelConfig::from_json(j.at("model_config"));
  info.init_seed = j.at("init_seed").get<std::uint64_t>();
  info.epoch = j.at("epoch").get<std::size_t>();
  info.step = j.at("step").get<std::size_t>();
  out = Model<Real>::create(info.cfg, info.init_seed);
  const auto& params = j.at("params");
  for (auto& [name, t] : out.ps.items) {
    if (!params.contains(name))
      throw ValueError("checkpoint '" + path.string() +
                       "': missing parameter '" + name + "'");
    auto vals = params.at(name).template get<std::vector<Real>>();
    if (vals.size() != t.size())
      throw ValueError("checkpoint '" + path.string() + "': parameter '" +
                       name + "' has size " + std::to_string(vals.size()) +
                       ", expected " + std::to_string(t.size()));
    t.values_mut() = std::move(vals);
  }
  if (j.contains("optimizer")) {
    info.has_optimizer = true;
    if (opt) {
      opt->init(out.ps);
      optimizer_from_json(j.at("optimizer"), *opt);
    }
  }
  return info;
}

}  // namespace hoi
