#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "hoi/tensor.hpp"

#include "json.hpp"

namespace hoi {

struct Waypoint {
  double u = 0, v = 0;
};

inline double ade(const std::vector<Waypoint>& pred,
                  const std::vector<Waypoint>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ShapeError("ade: waypoint lists must match and be non-empty");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::hypot(pred[i].u - gt[i].u, pred[i].v - gt[i].v);
  return acc / double(pred.size());
}

inline double fde(const std::vector<Waypoint>& pred,
                  const std::vector<Waypoint>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ShapeError("fde: waypoint lists must match and be non-empty");
  return std::hypot(pred.back().u - gt.back().u,
                    pred.back().v - gt.back().v);
}

// Histogram intersection of two maps normalized to unit mass.
inline double sim_metric(const std::vector<double>& pred,
                         const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ShapeError("sim: maps must have equal size");
  double sp = 0, sg = 0;
  for (double x : pred) sp += x;
  for (double x : gt) sg += x;
  if (sp <= 0 || sg <= 0)
    throw ValueError("sim: map with non-positive mass is degenerate");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::min(pred[i] / sp, gt[i] / sg);
  return acc;
}

// Mean standardized saliency at fixation cells; population std, and a
// zero-variance map scores 0 by convention.
inline double nss_metric(const std::vector<double>& map,
                         const std::vector<std::size_t>& fixations) {
  if (fixations.empty()) throw ValueError("nss: need at least one fixation");
  double mean = 0;
  for (double x : map) mean += x;
  mean /= double(map.size());
  double var = 0;
  for (double x : map) var += (x - mean) * (x - mean);
  var /= double(map.size());
  if (var == 0) return 0;
  double sd = std::sqrt(var);
  double acc = 0;
  for (std::size_t f : fixations) {
    if (f >= map.size()) throw ShapeError("nss: fixation index out of range");
    acc += (map[f] - mean) / sd;
  }
  return acc / double(fixations.size());
}

// Judd-variant ROC area: one threshold per distinct fixation saliency
// value, TPR over fixations and FPR over non-fixation cells (both >=).
// The curve is a step function: TPR holds until each threshold's FPR and
// rises vertically there, so a fixation at the unique maximum scores 1,
// at the median ~0.5, and at the unique minimum 0.
inline double auc_judd(const std::vector<double>& map,
                       const std::vector<std::size_t>& fixations) {
  if (fixations.empty())
    throw ValueError("auc_judd: need at least one fixation");
  std::vector<char> is_fix(map.size(), 0);
  for (std::size_t f : fixations) {
    if (f >= map.size())
      throw ShapeError("auc_judd: fixation index out of range");
    is_fix[f] = 1;
  }
  std::size_t n_fix = 0;
  for (char b : is_fix) n_fix += b;
  std::size_t n_non = map.size() - n_fix;
  std::vector<double> thresh;
  thresh.reserve(fixations.size());
  for (std::size_t i = 0; i < map.size(); ++i)
    if (is_fix[i]) thresh.push_back(map[i]);
  std::sort(thresh.begin(), thresh.end(), std::greater<>());
  thresh.erase(std::unique(thresh.begin(), thresh.end()), thresh.end());
  double area = 0, prev_fpr = 0, prev_tpr = 0;
  for (double t : thresh) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] >= t) (is_fix[i] ? tp : fp)++;
    double tpr = double(tp) / double(n_fix);
    double fpr = n_non == 0 ? 0.0 : double(fp) / double(n_non);
    area += (fpr - prev_fpr) * prev_tpr;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  area += (1.0 - prev_fpr) * prev_tpr;
  return area;
}

struct ProcrustesTransform {
  std::array<double, 9> r = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> v = {0, 0, 0};
  double scale = 1.0;
};

namespace detail {

// Eigen-decomposition of a symmetric 3x3 by cyclic Jacobi rotations.
// a is overwritten with the diagonalized matrix; v gets the eigenvectors
// as columns.
inline void jacobi3(std::array<double, 9>& a, std::array<double, 9>& v) {
  v = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = std::abs(a[1]) + std::abs(a[2]) + std::abs(a[5]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        double apq = a[p * 3 + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * 3 + p], aqq = a[q * 3 + q];
        double phi = 0.5 * std::atan2(2 * apq, aqq - app);
        double c = std::cos(phi), s = std::sin(phi);
        for (int k = 0; k < 3; ++k) {
          double akp = a[k * 3 + p], akq = a[k * 3 + q];
          a[k * 3 + p] = c * akp - s * akq;
          a[k * 3 + q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          double apk = a[p * 3 + k], aqk = a[q * 3 + k];
          a[p * 3 + k] = c * apk - s * aqk;
          a[q * 3 + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k * 3 + p], vkq = v[k * 3 + q];
          v[k * 3 + p] = c * vkp - s * vkq;
          v[k * 3 + q] = s * vkp + c * vkq;
        }
      }
  }
}

inline std::array<double, 3> cross3(const std::array<double, 3>& a,
                                    const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

inline double det3(const std::array<double, 9>& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Singular value decomposition of a 3x3: m = u s v^T.
inline void svd3(const std::array<double, 9>& m, std::array<double, 9>& u,
                 std::array<double, 3>& s, std::array<double, 9>& vt) {
  std::array<double, 9> mtm{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += m[k * 3 + i] * m[k * 3 + j];
      mtm[i * 3 + j] = acc;
    }
  std::array<double, 9> vv{};
  jacobi3(mtm, vv);
  std::array<int, 3> order = {0, 1, 2};
  std::array<double, 3> lam = {mtm[0], mtm[4], mtm[8]};
  std::sort(order.begin(), order.end(),
            [&lam](int a, int b) { return lam[a] > lam[b]; });
  std::array<std::array<double, 3>, 3> vcol, ucol;
  for (int c = 0; c < 3; ++c) {
    int src = order[c];
    s[c] = std::sqrt(std::max(0.0, lam[src]));
    for (int r = 0; r < 3; ++r) vcol[c][r] = vv[r * 3 + src];
  }
  double smax = s[0];
  for (int c = 0; c < 3; ++c) {
    if (s[c] > 1e-12 * (smax > 0 ? smax : 1.0)) {
      for (int r = 0; r < 3; ++r) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += m[r * 3 + k] * vcol[c][k];
        ucol[c][r] = acc / s[c];
      }
    } else if (c == 2) {
      ucol[2] = cross3(ucol[0], ucol[1]);
    } else if (c == 1) {
      // rank <= 1: any unit vector orthogonal to u0
      std::array<double, 3> e =
          std::abs(ucol[0][0]) < 0.9 ? std::array<double, 3>{1, 0, 0}
                                     : std::array<double, 3>{0, 1, 0};
      auto w = cross3(ucol[0], e);
      double n = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
      for (int r = 0; r < 3; ++r) ucol[1][r] = w[r] / n;
    } else {
      ucol[0] = {1, 0, 0};
    }
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      u[r * 3 + c] = ucol[c][r];
      vt[c * 3 + r] = vcol[c][r];
    }
}

}  // namespace detail

// Least-squares rigid alignment R p + v ~= q (no scale unless asked).
inline ProcrustesTransform procrustes_align(const std::vector<double>& pred,
                                            const std::vector<double>& gt,
                                            std::size_t n,
                                            bool with_scale = false) {
  if (pred.size() != 3 * n || gt.size() != 3 * n || n < 2)
    throw ShapeError("procrustes: need matching 3-D point sets, n >= 2");
  std::array<double, 3> pm = {0, 0, 0}, qm = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      pm[c] += pred[i * 3 + c] / double(n);
      qm[c] += gt[i * 3 + c] / double(n);
    }
  std::array<double, 9> h{};
  double pvar = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double p[3], q[3];
    for (int c = 0; c < 3; ++c) {
      p[c] = pred[i * 3 + c] - pm[c];
      q[c] = gt[i * 3 + c] - qm[c];
      pvar += p[c] * p[c];
    }
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h[r * 3 + c] += p[r] * q[c];
  }
  double hnorm = 0;
  for (double x : h) hnorm += x * x;
  if (pvar < 1e-24 || hnorm < 1e-30)
    throw ValueError("procrustes: degenerate (coincident) point set");

  std::array<double, 9> u{}, vt{};
  std::array<double, 3> s{};
  detail::svd3(h, u, s, vt);
  // R = V D U^T with D correcting a reflection
  std::array<double, 9> vmat{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) vmat[r * 3 + c] = vt[c * 3 + r];
  double d = detail::det3(vmat) * detail::det3(u) < 0 ? -1.0 : 1.0;
  ProcrustesTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) {
        double dk = k == 2 ? d : 1.0;
        acc += vmat[r * 3 + k] * dk * u[c * 3 + k];
      }
      t.r[r * 3 + c] = acc;
    }
  if (with_scale) {
    double trace = s[0] + s[1] + d * s[2];
    t.scale = pvar > 0 ? trace / pvar : 1.0;
  }
  for (int c = 0; c < 3; ++c) {
    double rp = 0;
    for (int k = 0; k < 3; ++k) rp += t.r[c * 3 + k] * pm[k];
    t.v[c] = qm[c] - t.scale * rp;
  }
  return t;
}

// Mean per-joint error after rigid alignment, in milli-units (x1000).
inline double pa_mpjpe(const std::vector<double>& pred,
                       const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.size() % 3 != 0)
    throw ShapeError("pa_mpjpe: need matching flat 3-D joint arrays");
  std::size_t n = pred.size() / 3;
  auto t = procrustes_align(pred, gt, n);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double e[3];
    for (int c = 0; c < 3; ++c) {
      double rx = 0;
      for (int k = 0; k < 3; ++k) rx += t.r[c * 3 + k] * pred[i * 3 + k];
      e[c] = rx + t.v[c] - gt[i * 3 + c];
    }
    acc += std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
  }
  return 1000.0 * acc / double(n);
}

struct Prf {
  double precision = 0, recall = 0, f1 = 0;
  bool degenerate = false;
};

inline Prf contact_prf(const std::vector<int>& pred,
                       const std::vector<int>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ShapeError("contact_prf: mask sizes must match");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gt[i]) ++tp;
    if (pred[i] && !gt[i]) ++fp;
    if (!pred[i] && gt[i]) ++fn;
  }
  Prf out;
  if (tp + fp == 0 || tp + fn == 0) out.degenerate = true;
  out.precision = tp + fp == 0 ? 0.0 : tp / (tp + fp);
  out.recall = tp + fn == 0 ? 0.0 : tp / (tp + fn);
  out.f1 = out.precision + out.recall == 0
               ? 0.0
               : 2 * out.precision * out.recall /
                     (out.precision + out.recall);
  return out;
}

// (u,v) in [0,1]^2 to a row-major grid cell; u indexes columns.
inline std::size_t point_to_cell(double u, double v, std::size_t h,
                                 std::size_t w) {
  auto clampi = [](long x, long hi) {
    return std::size_t(std::min(hi, std::max(0L, x)));
  };
  std::size_t col = clampi(long(u * double(w)), long(w) - 1);
  std::size_t row = clampi(long(v * double(h)), long(h) - 1);
  return row * w + col;
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "trend_ade",  "trend_fde", "sim",      "auc_j",    "nss",
      "pa_mpjpe",   "precision", "recall",   "f1",       "mani_ade",
      "mani_fde",   "hotspot_err", "chain_ade"};
  return names;
}

struct MetricStat {
  double mean = 0;
  double std_across_repeats = 0;
};

struct EvalReport {
  std::map<std::string, MetricStat> metrics;
  std::size_t n_samples = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::string config_echo;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = "1";
    j["n_samples"] = n_samples;
    j["repeats"] = repeats;
    j["seed"] = seed;
    j["config"] = config_echo;
    nlohmann::json m;
    for (const auto& [name, st] : metrics) {
      m[name] = {{"mean", st.mean},
                 {"std_across_repeats", st.std_across_repeats}};
    }
    j["metrics"] = m;
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.repeats = j.at("repeats").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_echo = j.at("config").get<std::string>();
    for (auto it = j.at("metrics").begin(); it != j.at("metrics").end();
         ++it) {
      MetricStat st;
      st.mean = it.value().at("mean").get<double>();
      st.std_across_repeats =
          it.value().at("std_across_repeats").get<double>();
      r.metrics[it.key()] = st;
    }
    return r;
  }
};

}  // namespace hoi
