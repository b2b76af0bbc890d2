#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hoi/eval.hpp"
#include "hoi/train.hpp"

namespace hoi {

// Metric direction table; everything not listed here improves downward.
inline bool higher_is_better(const std::string& metric) {
  return metric == "sim" || metric == "auc_j" || metric == "nss" ||
         metric == "precision" || metric == "recall" || metric == "f1";
}

template <class Real>
std::size_t param_scalar_count(const ParamStore<Real>& ps) {
  std::size_t n = 0;
  for (const auto& [name, t] : ps.items) n += t.size();
  return n;
}

struct StudyRow {
  std::string label;
  nlohmann::json detail;
  std::size_t param_count = 0;
  double initial_loss = 0, final_loss = 0;
  bool aborted = false;
  EvalReport report;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["label"] = label;
    j["detail"] = detail;
    j["param_count"] = param_count;
    j["initial_loss"] = initial_loss;
    j["final_loss"] = final_loss;
    if (aborted) j["aborted"] = true;
    nlohmann::json means = nlohmann::json::object();
    nlohmann::json stds = nlohmann::json::object();
    for (const auto& [name, stat] : report.metrics) {
      means[name] = stat.mean;
      stds[name] = stat.std_across_repeats;
    }
    j["metrics"] = means;
    j["metrics_std"] = stds;
    return j;
  }
};

struct StudyReport {
  std::string study;
  std::uint64_t seed = 0;
  std::vector<StudyRow> rows;
  std::string jsonl_path;
};

namespace detail {

inline void write_rows_jsonl(const std::string& path,
                             const std::vector<StudyRow>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.to_json().dump() + "\n";
  write_text_file(path, text);
}

// One train+eval leg.  Every stochastic stream hangs off `seed`, so a row is
// a pure function of (config, data, seed) and identical configs tie exactly.
template <class Real>
StudyRow run_leg(const ModelConfig& mc, const TrainConfig& tc,
                 const std::vector<InteractionSample>& train_set,
                 const std::vector<InteractionSample>& test_set,
                 std::size_t eval_repeats, std::uint64_t seed,
                 const std::filesystem::path& leg_dir) {
  std::filesystem::create_directories(leg_dir);
  auto m = Model<Real>::create(mc, seed);
  auto outcome = train_model(m, tc, train_set, leg_dir.string(), seed);
  StudyRow row;
  row.param_count = param_scalar_count(m.ps);
  row.initial_loss = outcome.initial_loss;
  row.final_loss = outcome.final_loss;
  row.aborted = outcome.aborted;
  row.report = evaluate_model(m, test_set, eval_repeats, seed);
  return row;
}

}  // namespace detail

// Toggle study over the three constraint chains: every on/off combination,
// all-off first and the full model last, trained and scored under one seed.
template <class Real>
StudyReport run_ablation(const std::vector<InteractionSample>& train_set,
                         const std::vector<InteractionSample>& test_set,
                         const ModelConfig& base, const TrainConfig& tc,
                         std::size_t eval_repeats, std::uint64_t seed,
                         const std::string& out_dir) {
  static const bool kCombos[8][3] = {
      {false, false, false}, {true, false, false}, {false, true, false},
      {false, false, true},  {true, true, false},  {true, false, true},
      {false, true, true},   {true, true, true}};
  StudyReport rep;
  rep.study = "ablation";
  rep.seed = seed;
  std::filesystem::create_directories(out_dir);
  for (const auto& combo : kCombos) {
    ModelConfig mc = base;
    mc.enable_cross = combo[0];
    mc.enable_deq = combo[1];
    mc.enable_res = combo[2];
    char label[48];
    std::snprintf(label, sizeof(label), "cross=%d,deq=%d,res=%d",
                  int(combo[0]), int(combo[1]), int(combo[2]));
    char slug[48];
    std::snprintf(slug, sizeof(slug), "cross%d_deq%d_res%d", int(combo[0]),
                  int(combo[1]), int(combo[2]));
    auto row = detail::run_leg<Real>(mc, tc, train_set, test_set, eval_repeats,
                                     seed,
                                     std::filesystem::path(out_dir) / slug);
    row.label = label;
    row.detail = {{"cross", combo[0]}, {"deq", combo[1]}, {"res", combo[2]}};
    rep.rows.push_back(std::move(row));
  }
  rep.jsonl_path = (std::filesystem::path(out_dir) / "ablation.jsonl").string();
  detail::write_rows_jsonl(rep.jsonl_path, rep.rows);
  return rep;
}

// Constraint-site replacement study: each of the three sites swapped for a
// plain combiner while the other two keep their default form.
inline const std::vector<std::string>& modification_sites() {
  static const std::vector<std::string> sites = {"cross", "fusion",
                                                 "residual"};
  return sites;
}

inline const std::vector<std::string>& modification_strategies() {
  static const std::vector<std::string> strategies = {
      "default", "sum", "concat", "series-cross-attention"};
  return strategies;
}

inline ModelConfig apply_modification(ModelConfig mc, const std::string& site,
                                      const std::string& strategy) {
  if (site == "cross") {
    mc.cross_strategy = strategy;
  } else if (site == "fusion") {
    mc.fusion_strategy = strategy == "default" ? "deq" : strategy;
  } else if (site == "residual") {
    mc.res_strategy = strategy;
  } else {
    throw ValueError("modification: unknown site '" + site + "'");
  }
  return mc;
}

template <class Real>
StudyReport run_modification(const std::vector<InteractionSample>& train_set,
                             const std::vector<InteractionSample>& test_set,
                             const ModelConfig& base, const TrainConfig& tc,
                             std::size_t eval_repeats, std::uint64_t seed,
                             const std::string& out_dir) {
  StudyReport rep;
  rep.study = "modification";
  rep.seed = seed;
  std::filesystem::create_directories(out_dir);
  for (const auto& site : modification_sites()) {
    for (const auto& strategy : modification_strategies()) {
      ModelConfig mc = apply_modification(base, site, strategy);
      auto row = detail::run_leg<Real>(
          mc, tc, train_set, test_set, eval_repeats, seed,
          std::filesystem::path(out_dir) / (site + "_" + strategy));
      row.label = "site=" + site + ",strategy=" + strategy;
      row.detail = {{"site", site}, {"strategy", strategy}};
      rep.rows.push_back(std::move(row));
    }
  }
  rep.jsonl_path =
      (std::filesystem::path(out_dir) / "modification.jsonl").string();
  detail::write_rows_jsonl(rep.jsonl_path, rep.rows);
  return rep;
}

// ---- latent-capacity sweep ----

struct LatentSweepResult {
  std::vector<std::size_t> dims;
  std::vector<StudyRow> rows;
  // head -> (headline metric, value per dim)
  std::map<std::string, std::pair<std::string, std::vector<double>>> curves;
  std::string json_path;
  std::vector<std::string> plot_paths;
};

inline const std::vector<std::pair<std::string, std::string>>&
latent_curve_specs() {
  static const std::vector<std::pair<std::string, std::string>> specs = {
      {"trend", "trend_ade"},   {"hotspot", "auc_j"}, {"mani", "mani_ade"},
      {"pose", "pa_mpjpe"},     {"contact", "f1"}};
  return specs;
}

// Minimal self-contained polyline chart; no plotting dependency.
inline std::string line_chart_svg(const std::string& title,
                                  const std::vector<std::string>& xlabels,
                                  const std::vector<double>& ys) {
  if (ys.empty() || xlabels.size() != ys.size())
    throw ValueError("line_chart_svg: label/value size mismatch");
  const double width = 640, height = 400;
  const double left = 70, right = 620, top = 50, bottom = 350;
  double lo = ys[0], hi = ys[0];
  for (double y : ys) {
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  double pad = (hi - lo) * 0.08;
  if (pad <= 0) pad = std::abs(hi) * 0.1 + 1e-3;
  lo -= pad;
  hi += pad;
  auto xpos = [&](std::size_t i) {
    if (ys.size() == 1) return (left + right) / 2;
    return left + (right - left) * double(i) / double(ys.size() - 1);
  };
  auto ypos = [&](double v) {
    return bottom - (bottom - top) * (v - lo) / (hi - lo);
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
  };
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) +
         "\" height=\"" + num(height) + "\" viewBox=\"0 0 " + num(width) +
         " " + num(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(width / 2) +
         "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" +
         title + "</text>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(bottom) + "\" x2=\"" +
         num(right) + "\" y2=\"" + num(bottom) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" +
         num(left) + "\" y2=\"" + num(bottom) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"" + num(left - 8) + "\" y=\"" + num(ypos(hi - pad)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\">" +
         num(hi - pad) + "</text>\n";
  svg += "<text x=\"" + num(left - 8) + "\" y=\"" + num(ypos(lo + pad)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" "
         "font-size=\"11\">" +
         num(lo + pad) + "</text>\n";
  std::string points;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (i) points += " ";
    points += num(xpos(i)) + "," + num(ypos(ys[i]));
  }
  if (ys.size() > 1)
    svg += "<polyline points=\"" + points +
           "\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>\n";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    svg += "<circle cx=\"" + num(xpos(i)) + "\" cy=\"" + num(ypos(ys[i])) +
           "\" r=\"3.5\" fill=\"#1f6fb2\"/>\n";
    svg += "<text x=\"" + num(xpos(i)) + "\" y=\"" + num(bottom + 20) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">" +
           xlabels[i] + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

template <class Real>
LatentSweepResult run_latent_sweep(
    const std::vector<InteractionSample>& train_set,
    const std::vector<InteractionSample>& test_set, const ModelConfig& base,
    const TrainConfig& tc, const std::vector<std::size_t>& dims,
    std::size_t eval_repeats, std::uint64_t seed, const std::string& out_dir) {
  if (dims.empty()) throw ValueError("latent sweep: empty dim list");
  LatentSweepResult res;
  res.dims = dims;
  std::filesystem::create_directories(out_dir);
  for (std::size_t dim : dims) {
    ModelConfig mc = base;
    mc.latent.set_all(dim);
    auto row = detail::run_leg<Real>(
        mc, tc, train_set, test_set, eval_repeats, seed,
        std::filesystem::path(out_dir) / ("latent" + std::to_string(dim)));
    row.label = "latent_dim=" + std::to_string(dim);
    row.detail = {{"latent_dim", dim}};
    res.rows.push_back(std::move(row));
  }
  for (const auto& [head, metric] : latent_curve_specs()) {
    std::vector<double> values;
    for (const auto& row : res.rows)
      values.push_back(row.report.metrics.at(metric).mean);
    res.curves[head] = {metric, values};
  }

  nlohmann::json j;
  j["schema_version"] = "1";
  j["study"] = "latent_sweep";
  j["seed"] = seed;
  j["dims"] = dims;
  nlohmann::json curves = nlohmann::json::object();
  for (const auto& [head, curve] : res.curves)
    curves[head] = {{"metric", curve.first}, {"values", curve.second}};
  j["curves"] = curves;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : res.rows) rows.push_back(row.to_json());
  j["rows"] = rows;
  res.json_path =
      (std::filesystem::path(out_dir) / "latent_sweep.json").string();
  write_text_file(res.json_path, j.dump(2) + "\n");

  std::vector<std::string> xlabels;
  for (std::size_t dim : dims) xlabels.push_back(std::to_string(dim));
  for (const auto& [head, curve] : res.curves) {
    auto path =
        (std::filesystem::path(out_dir) / ("latent_" + head + ".svg"))
            .string();
    write_text_file(path, line_chart_svg(head + " : " + curve.first +
                                             " vs latent dim",
                                         xlabels, curve.second));
    res.plot_paths.push_back(path);
  }
  return res;
}

// ---- repeated inference with spread statistics ----

struct SpreadStats {
  std::vector<double> trend_point_std, mani_point_std;
  double trend_spread = 0, mani_spread = 0;
  double hotspot_dispersion = 0;
  std::vector<double> contact_vote;
  double contact_disagreement = 0;

  double total_spread() const {
    return trend_spread + mani_spread + hotspot_dispersion +
           contact_disagreement;
  }
};

struct InferenceResult {
  std::vector<PredictionBundle> bundles;
  bool has_spread = false;
  SpreadStats spread;
};

namespace detail {

// RMS distance of repeated points from their mean, per waypoint index.
inline std::vector<double> point_dispersion(
    const std::vector<PredictionBundle>& bundles, bool mani) {
  std::size_t n = mani ? bundles[0].mani.size() : bundles[0].trend.size();
  std::vector<double> out(n, 0);
  // means are taken on deviations from the first bundle so that identical
  // bundles produce exact zeros
  for (std::size_t j = 0; j < n; ++j) {
    const auto& p0 = mani ? bundles[0].mani[j] : bundles[0].trend[j];
    double mu = 0, mv = 0;
    for (const auto& b : bundles) {
      const auto& p = mani ? b.mani[j] : b.trend[j];
      mu += p.u - p0.u;
      mv += p.v - p0.v;
    }
    mu /= double(bundles.size());
    mv /= double(bundles.size());
    double var = 0;
    for (const auto& b : bundles) {
      const auto& p = mani ? b.mani[j] : b.trend[j];
      var += (p.u - p0.u - mu) * (p.u - p0.u - mu) +
             (p.v - p0.v - mv) * (p.v - p0.v - mv);
    }
    out[j] = std::sqrt(var / double(bundles.size()));
  }
  return out;
}

}  // namespace detail

inline SpreadStats compute_spread(const std::vector<PredictionBundle>& bundles) {
  if (bundles.size() < 2)
    throw ValueError("spread statistics need at least two bundles");
  SpreadStats s;
  s.trend_point_std = detail::point_dispersion(bundles, false);
  s.mani_point_std = detail::point_dispersion(bundles, true);
  for (double v : s.trend_point_std) s.trend_spread += v;
  s.trend_spread /= double(s.trend_point_std.size());
  for (double v : s.mani_point_std) s.mani_spread += v;
  s.mani_spread /= double(s.mani_point_std.size());

  double u0 = bundles[0].hotspot_u, v0 = bundles[0].hotspot_v;
  double mu = 0, mv = 0;
  for (const auto& b : bundles) {
    mu += b.hotspot_u - u0;
    mv += b.hotspot_v - v0;
  }
  mu /= double(bundles.size());
  mv /= double(bundles.size());
  double var = 0;
  for (const auto& b : bundles)
    var += (b.hotspot_u - u0 - mu) * (b.hotspot_u - u0 - mu) +
           (b.hotspot_v - v0 - mv) * (b.hotspot_v - v0 - mv);
  s.hotspot_dispersion = std::sqrt(var / double(bundles.size()));

  std::size_t nv = bundles[0].contact_mask.size();
  s.contact_vote.assign(nv, 0);
  for (const auto& b : bundles)
    for (std::size_t i = 0; i < nv; ++i)
      s.contact_vote[i] += double(b.contact_mask[i]);
  for (auto& v : s.contact_vote) v /= double(bundles.size());
  for (double v : s.contact_vote) s.contact_disagreement += v * (1 - v);
  s.contact_disagreement /= double(nv);
  return s;
}

template <class Real>
InferenceResult infer_with_spread(const Model<Real>& m,
                                  const InteractionSample& s,
                                  std::size_t repeats, std::uint64_t seed,
                                  bool deterministic = false) {
  if (repeats < 1) throw ValueError("infer: repeats must be >= 1");
  InferenceResult res;
  res.bundles.resize(repeats);
  parallel_for(repeats, [&](std::size_t r) {
    Rng rng(mix64(seed, r));
    res.bundles[r] = forward(m, s, rng, deterministic);
  });
  if (repeats > 1) {
    res.has_spread = true;
    res.spread = compute_spread(res.bundles);
  }
  return res;
}

inline nlohmann::json waypoints_to_json(const std::vector<Waypoint>& pts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.u, p.v});
  return arr;
}

inline nlohmann::json bundle_to_json(const PredictionBundle& b) {
  nlohmann::json j;
  j["trend"] = waypoints_to_json(b.trend);
  j["mani"] = waypoints_to_json(b.mani);
  j["hotspot_u"] = b.hotspot_u;
  j["hotspot_v"] = b.hotspot_v;
  j["hotspot_map"] = b.hotspot_map;
  j["theta"] = b.theta;
  j["beta"] = b.beta;
  j["joints21"] = b.joints21;
  j["vertices"] = b.vertices;
  j["contact_probs"] = b.contact_probs;
  j["contact_mask"] = b.contact_mask;
  j["deq_iters"] = b.deq_iters;
  j["deq_residual"] = b.deq_residual;
  return j;
}

inline nlohmann::json inference_to_json(const InferenceResult& r) {
  nlohmann::json j;
  j["schema_version"] = "1";
  j["repeats"] = r.bundles.size();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : r.bundles) arr.push_back(bundle_to_json(b));
  j["bundles"] = arr;
  if (r.has_spread) {
    j["spread"] = {{"trend_point_std", r.spread.trend_point_std},
                   {"mani_point_std", r.spread.mani_point_std},
                   {"trend_spread", r.spread.trend_spread},
                   {"mani_spread", r.spread.mani_spread},
                   {"hotspot_dispersion", r.spread.hotspot_dispersion},
                   {"contact_vote", r.spread.contact_vote},
                   {"contact_disagreement", r.spread.contact_disagreement},
                   {"total_spread", r.spread.total_spread()}};
  }
  return j;
}

}  // namespace hoi
