#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hoi/model.hpp"
#include "hoi/parallel.hpp"

namespace hoi {

// Ground-truth quantities derived once per sample and reused across repeats.
template <class Real>
struct SampleTruth {
  std::vector<double> hotspot_map;
  std::size_t fixation_cell = 0;
  std::vector<double> joints21;
  std::vector<Waypoint> trend_fresh, mani_fresh, chain_fresh;

  static SampleTruth compute(const Model<Real>& m,
                             const InteractionSample& s) {
    SampleTruth t;
    t.hotspot_map = gaussian_render(s.hotspot_u, s.hotspot_v,
                                    m.cfg.heatmap.sigma(), m.cfg.heatmap.h,
                                    m.cfg.heatmap.w);
    t.fixation_cell =
        point_to_cell(s.hotspot_u, s.hotspot_v, m.cfg.heatmap.h,
                      m.cfg.heatmap.w);
    auto theta = Tensor<Real>::from(
        {1, 48}, std::vector<Real>(s.gt_theta.begin(), s.gt_theta.end()));
    auto beta = Tensor<Real>::from(
        {1, 10}, std::vector<Real>(s.gt_beta.begin(), s.gt_beta.end()));
    auto mesh = hand_forward(m.tpl, theta, beta);
    for (std::size_t i = 0; i < mesh.joints21.size(); ++i)
      t.joints21.push_back(double(mesh.joints21.at(i)));
    t.trend_fresh.assign(s.gt_trend.begin() + 1, s.gt_trend.end());
    t.mani_fresh.assign(s.gt_mani.begin() + 1, s.gt_mani.end());
    t.chain_fresh = t.trend_fresh;
    t.chain_fresh.insert(t.chain_fresh.end(), t.mani_fresh.begin(),
                         t.mani_fresh.end());
    return t;
  }
};

template <class Real>
std::map<std::string, double> sample_metrics(const PredictionBundle& b,
                                             const InteractionSample& s,
                                             const SampleTruth<Real>& t) {
  std::map<std::string, double> m;
  std::vector<Waypoint> pt(b.trend.begin() + 1, b.trend.end());
  std::vector<Waypoint> pm(b.mani.begin() + 1, b.mani.end());
  std::vector<Waypoint> pc = pt;
  pc.insert(pc.end(), pm.begin(), pm.end());
  m["trend_ade"] = ade(pt, t.trend_fresh);
  m["trend_fde"] = fde(pt, t.trend_fresh);
  m["mani_ade"] = ade(pm, t.mani_fresh);
  m["mani_fde"] = fde(pm, t.mani_fresh);
  m["chain_ade"] = ade(pc, t.chain_fresh);
  m["hotspot_err"] = std::hypot(b.hotspot_u - s.hotspot_u,
                                b.hotspot_v - s.hotspot_v);
  m["sim"] = sim_metric(b.hotspot_map, t.hotspot_map);
  m["auc_j"] = auc_judd(b.hotspot_map, {t.fixation_cell});
  m["nss"] = nss_metric(b.hotspot_map, {t.fixation_cell});
  m["pa_mpjpe"] = pa_mpjpe(b.joints21, t.joints21);
  auto prf = contact_prf(b.contact_mask, s.gt_contact);
  m["precision"] = prf.precision;
  m["recall"] = prf.recall;
  m["f1"] = prf.f1;
  return m;
}

// The repeated-sampling protocol: `repeats` stochastic passes over the whole
// split, metrics averaged over samples within each repeat, then mean and
// population std taken across repeats.
template <class Real>
EvalReport evaluate_model(const Model<Real>& m,
                          const std::vector<InteractionSample>& samples,
                          std::size_t repeats, std::uint64_t seed) {
  if (samples.empty()) throw ValueError("evaluate: empty split");
  if (repeats < 1) throw ValueError("evaluate: repeats must be >= 1");

  std::vector<SampleTruth<Real>> truths(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    truths[i] = SampleTruth<Real>::compute(m, samples[i]);
  });

  auto names = metric_names();
  std::size_t n = samples.size();
  std::vector<std::map<std::string, double>> per_pass(repeats * n);
  parallel_for(repeats * n, [&](std::size_t job) {
    std::size_t r = job / n, i = job % n;
    Rng rng(mix64(seed, (std::uint64_t(r) << 32) | std::uint64_t(i)));
    auto b = forward(m, samples[i], rng, false);
    per_pass[job] = sample_metrics(b, samples[i], truths[i]);
  });

  std::vector<std::map<std::string, double>> per_repeat;
  for (std::size_t r = 0; r < repeats; ++r) {
    std::map<std::string, double> acc;
    for (const auto& nm : names) acc[nm] = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& nm : names) acc[nm] += per_pass[r * n + i].at(nm);
    for (const auto& nm : names) acc[nm] /= double(n);
    per_repeat.push_back(std::move(acc));
  }

  EvalReport rep;
  rep.n_samples = samples.size();
  rep.repeats = repeats;
  rep.seed = seed;
  rep.config_echo = m.cfg.to_json().dump();
  for (const auto& n : names) {
    double mean = 0;
    for (const auto& pr : per_repeat) mean += pr.at(n);
    mean /= double(repeats);
    double var = 0;
    for (const auto& pr : per_repeat) {
      double d = pr.at(n) - mean;
      var += d * d;
    }
    rep.metrics[n] = {mean, std::sqrt(var / double(repeats))};
  }
  return rep;
}

// ---- reference baselines for the learning gates ----

// Constant predictor: the per-index mean waypoint over the train split.
inline std::vector<Waypoint> mean_waypoints(
    const std::vector<InteractionSample>& train, bool mani) {
  if (train.empty()) throw ValueError("mean_waypoints: empty split");
  std::size_t n = (mani ? train[0].gt_mani.size() : train[0].gt_trend.size()) -
                  1;
  std::vector<Waypoint> mean(n, {0, 0});
  for (const auto& s : train) {
    const auto& track = mani ? s.gt_mani : s.gt_trend;
    for (std::size_t j = 0; j < n; ++j) {
      mean[j].u += track[j + 1].u;
      mean[j].v += track[j + 1].v;
    }
  }
  for (auto& p : mean) {
    p.u /= double(train.size());
    p.v /= double(train.size());
  }
  return mean;
}

inline double constant_baseline_ade(
    const std::vector<InteractionSample>& train,
    const std::vector<InteractionSample>& test, bool mani) {
  auto mean = mean_waypoints(train, mani);
  double total = 0;
  for (const auto& s : test) {
    const auto& track = mani ? s.gt_mani : s.gt_trend;
    std::vector<Waypoint> fresh(track.begin() + 1, track.end());
    total += ade(mean, fresh);
  }
  return total / double(test.size());
}

// PA-MPJPE of the rest pose (zero theta, zero beta) against each sample.
template <class Real>
double rest_pose_baseline(const Model<Real>& m,
                          const std::vector<InteractionSample>& test) {
  auto rest = hand_forward(m.tpl, Tensor<Real>::zeros({1, 48}),
                           Tensor<Real>::zeros({1, 10}));
  std::vector<double> rest_j;
  for (std::size_t i = 0; i < rest.joints21.size(); ++i)
    rest_j.push_back(double(rest.joints21.at(i)));
  double total = 0;
  for (const auto& s : test) {
    auto t = SampleTruth<Real>::compute(m, s);
    total += pa_mpjpe(rest_j, t.joints21);
  }
  return total / double(test.size());
}

}  // namespace hoi
