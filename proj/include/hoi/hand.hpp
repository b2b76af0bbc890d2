#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"

#include "json.hpp"

namespace hoi {

// Parametric hand: 778 mesh vertices skinned to a 16-joint tree
// (wrist + 3 joints per digit), 21 regressed keypoints (wrist + 4 per
// digit including fingertips), 48 axis-angle pose values, 10 shape
// coefficients.  The template is procedurally generated.
template <class Real>
struct HandTemplate {
  static constexpr std::size_t n_vertices = 778;
  static constexpr std::size_t n_joints = 16;
  static constexpr std::size_t n_keypoints = 21;
  static constexpr std::size_t n_pose = 48;
  static constexpr std::size_t n_shape = 10;

  std::uint64_t seed = 0;
  std::vector<int> parent;               // 16, parent[0] = -1
  std::vector<Real> rest_vertices;       // 778*3
  std::vector<Real> rest_joints;         // 16*3, regressed from rest vertices
  std::vector<Real> skinning_weights;    // 778*16, rows convex
  std::vector<Real> shape_basis;         // 10*(778*3)
  std::vector<Real> keypoint_regressor;  // 21*778, rows convex
  std::vector<Real> joint_regressor;     // 16*778, rows convex
};

template <class Real>
struct HandMesh {
  Tensor<Real> vertices;  // [778,3]
  Tensor<Real> joints21;  // [21,3]
  Tensor<Real> joints16;  // [16,3] posed skeleton
};

namespace detail {

struct V3 {
  double x = 0, y = 0, z = 0;
  V3 operator+(const V3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  V3 operator-(const V3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  V3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double point_segment_dist(const V3& p, const V3& a, const V3& b) {
  V3 ab = b - a;
  double len2 = ab.x * ab.x + ab.y * ab.y + ab.z * ab.z;
  double t = 0;
  if (len2 > 0) {
    V3 ap = p - a;
    t = (ap.x * ab.x + ap.y * ab.y + ap.z * ab.z) / len2;
    t = std::min(1.0, std::max(0.0, t));
  }
  V3 q = a + ab * t;
  return (p - q).norm();
}

// Row-convex weights from squared distances: shift by the row minimum so
// the largest weight is exactly 1 and normalization never degenerates.
inline void gaussian_row(const std::vector<double>& d2, double sigma,
                         double* out) {
  double mn = d2[0];
  for (double v : d2) mn = std::min(mn, v);
  double sum = 0;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    out[i] = std::exp(-(d2[i] - mn) / (2 * sigma * sigma));
    sum += out[i];
  }
  for (std::size_t i = 0; i < d2.size(); ++i) out[i] /= sum;
}

}  // namespace detail

// Deterministic capsule-sampled hand around a five-digit skeleton.
template <class Real>
HandTemplate<Real> make_synthetic_template(std::uint64_t seed) {
  using detail::V3;
  HandTemplate<Real> t;
  t.seed = seed;
  Rng rng(mix64(seed, 0x68616e64));

  constexpr std::size_t nv = HandTemplate<Real>::n_vertices;
  constexpr std::size_t nj = HandTemplate<Real>::n_joints;

  // skeleton: per digit a base knuckle on the palm rim, then three
  // segments curling slightly out of plane, then a fingertip
  std::array<double, 5> palm_r = {0.045, 0.072, 0.075, 0.071, 0.065};
  std::array<double, 5> digit_len = {0.070, 0.095, 0.105, 0.095, 0.075};
  std::array<double, 3> seg_frac = {0.45, 0.32, 0.23};
  std::array<V3, nj> joint_pos;  // generative skeleton
  std::array<V3, 5> fingertip;
  joint_pos[0] = {0, 0, 0};
  for (std::size_t d = 0; d < 5; ++d) {
    double phi = -0.70 + 0.35 * double(d) + rng.uniform(-0.04, 0.04);
    double radius = palm_r[d] * (1.0 + rng.uniform(-0.06, 0.06));
    double len = digit_len[d] * (1.0 + rng.uniform(-0.08, 0.08));
    double zlift = d == 0 ? 0.012 : rng.uniform(-0.004, 0.004);
    V3 base = {radius * std::cos(phi), radius * std::sin(phi), zlift};
    joint_pos[1 + 3 * d] = base;
    double pitch = 0;
    V3 cur = base;
    V3 dir = {std::cos(phi), std::sin(phi), 0.0};
    for (std::size_t s = 0; s < 3; ++s) {
      pitch += 0.14 + rng.uniform(-0.03, 0.03);
      V3 step = {dir.x * std::cos(pitch), dir.y * std::cos(pitch),
                 -std::sin(pitch)};
      cur = cur + step * (len * seg_frac[s]);
      if (s < 2)
        joint_pos[2 + 3 * d + s] = cur;
      else
        fingertip[d] = cur;
    }
  }

  t.parent.assign(nj, -1);
  for (std::size_t d = 0; d < 5; ++d) {
    t.parent[1 + 3 * d] = 0;
    t.parent[2 + 3 * d] = int(1 + 3 * d);
    t.parent[3 + 3 * d] = int(2 + 3 * d);
  }

  // influence segment per joint, used for sampling and for skinning
  std::array<std::pair<V3, V3>, nj> seg;
  std::array<double, nj> seg_sigma;
  V3 palm_center = {0, 0, 0};
  for (std::size_t d = 0; d < 5; ++d)
    palm_center = palm_center + joint_pos[1 + 3 * d] * 0.12;
  seg[0] = {joint_pos[0], palm_center};
  seg_sigma[0] = 0.030;
  for (std::size_t d = 0; d < 5; ++d) {
    seg[1 + 3 * d] = {joint_pos[1 + 3 * d], joint_pos[2 + 3 * d]};
    seg[2 + 3 * d] = {joint_pos[2 + 3 * d], joint_pos[3 + 3 * d]};
    seg[3 + 3 * d] = {joint_pos[3 + 3 * d], fingertip[d]};
    seg_sigma[1 + 3 * d] = seg_sigma[2 + 3 * d] = seg_sigma[3 + 3 * d] =
        0.012;
  }

  // vertices: palm capsules (wrist to each knuckle) plus digit capsules
  std::vector<V3> verts;
  verts.reserve(nv);
  auto radial = [&rng](double r) {
    V3 n;
    do {
      n = {rng.normal(), rng.normal(), rng.normal()};
    } while (n.norm() < 1e-9);
    return n * (r / n.norm());
  };
  std::size_t n_palm = 258;
  for (std::size_t i = 0; i < n_palm; ++i) {
    std::size_t d = rng.uniform_int(0, 4);
    double u = rng.uniform();
    V3 p = joint_pos[0] * (1 - u) + joint_pos[1 + 3 * d] * u;
    verts.push_back(p + radial(0.013 * (1.0 + rng.uniform(-0.3, 0.3))));
  }
  std::size_t per_digit = (nv - n_palm) / 5;  // 104
  for (std::size_t d = 0; d < 5; ++d) {
    std::size_t count = d == 4 ? nv - verts.size() : per_digit;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t s = rng.uniform_int(0, 3);
      V3 a = s == 0 ? joint_pos[1 + 3 * d]
                    : (s == 1 ? joint_pos[2 + 3 * d] : joint_pos[3 + 3 * d]);
      V3 b = s == 0 ? joint_pos[2 + 3 * d]
                    : (s == 1 ? joint_pos[3 + 3 * d] : fingertip[d]);
      double u = rng.uniform();
      V3 p = a * (1 - u) + b * u;
      verts.push_back(p + radial(0.008 * (1.0 + rng.uniform(-0.3, 0.3))));
    }
  }

  t.rest_vertices.resize(nv * 3);
  for (std::size_t i = 0; i < nv; ++i) {
    t.rest_vertices[3 * i + 0] = Real(verts[i].x);
    t.rest_vertices[3 * i + 1] = Real(verts[i].y);
    t.rest_vertices[3 * i + 2] = Real(verts[i].z);
  }

  // skinning: smooth falloff from each joint's influence segment
  t.skinning_weights.resize(nv * nj);
  {
    std::vector<double> d2(nj);
    std::vector<double> row(nj);
    for (std::size_t i = 0; i < nv; ++i) {
      for (std::size_t j = 0; j < nj; ++j) {
        double dist =
            detail::point_segment_dist(verts[i], seg[j].first, seg[j].second);
        d2[j] = dist * dist / (seg_sigma[j] * seg_sigma[j]);
      }
      // distances pre-divided by per-joint sigma: unit sigma below
      detail::gaussian_row(d2, 1.0, row.data());
      for (std::size_t j = 0; j < nj; ++j)
        t.skinning_weights[i * nj + j] = Real(row[j]);
    }
  }

  // regressors: convex vertex weights around target points
  auto build_regressor = [&](const std::vector<V3>& targets, double sigma,
                             std::vector<Real>& out) {
    out.resize(targets.size() * nv);
    std::vector<double> d2(nv);
    std::vector<double> row(nv);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      for (std::size_t i = 0; i < nv; ++i) {
        double dist = (verts[i] - targets[k]).norm();
        d2[i] = dist * dist;
      }
      detail::gaussian_row(d2, sigma, row.data());
      for (std::size_t i = 0; i < nv; ++i) out[k * nv + i] = Real(row[i]);
    }
  };
  std::vector<V3> jt(joint_pos.begin(), joint_pos.end());
  build_regressor(jt, 0.010, t.joint_regressor);
  std::vector<V3> kp;
  kp.push_back(joint_pos[0]);
  for (std::size_t d = 0; d < 5; ++d) {
    kp.push_back(joint_pos[1 + 3 * d]);
    kp.push_back(joint_pos[2 + 3 * d]);
    kp.push_back(joint_pos[3 + 3 * d]);
    kp.push_back(fingertip[d]);
  }
  build_regressor(kp, 0.008, t.keypoint_regressor);

  // rest joints are the regressed ones so the zero-pose forward pass is
  // exactly the identity on the skeleton it uses
  t.rest_joints.assign(nj * 3, Real(0));
  for (std::size_t j = 0; j < nj; ++j)
    for (std::size_t i = 0; i < nv; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        t.rest_joints[j * 3 + c] += t.joint_regressor[j * nv + i] *
                                    t.rest_vertices[i * 3 + c];

  // shape basis: ten smooth low-frequency displacement fields
  t.shape_basis.resize(10 * nv * 3);
  for (std::size_t k = 0; k < 10; ++k) {
    V3 dir = radial(1.0);
    V3 freq = {rng.uniform(5.0, 20.0), rng.uniform(5.0, 20.0),
               rng.uniform(5.0, 20.0)};
    double phase = rng.uniform(0.0, 6.283185307179586);
    double amp = 0.008;
    for (std::size_t i = 0; i < nv; ++i) {
      double arg =
          freq.x * verts[i].x + freq.y * verts[i].y + freq.z * verts[i].z;
      double s = amp * std::sin(arg + phase);
      t.shape_basis[(k * nv + i) * 3 + 0] = Real(s * dir.x);
      t.shape_basis[(k * nv + i) * 3 + 1] = Real(s * dir.y);
      t.shape_basis[(k * nv + i) * 3 + 2] = Real(s * dir.z);
    }
  }
  return t;
}

// Axis-angle rotation matrix, smooth through the identity:
// R = I + a(s) K + b(s) K^2 with K = skew(w), s = |w|^2.
template <class Real>
Tensor<Real> rodrigues(const Tensor<Real>& w_row) {
  if (w_row.size() != 3) throw ShapeError("rodrigues: need 3 values");
  auto w = reshape(w_row, {1, 3});
  auto s = sum(w * w);  // [1]
  auto a = sinc_sqrt(s);
  auto b = cos1m_over(s);
  auto x = slice(w, 1, 0, 1), y = slice(w, 1, 1, 1), z = slice(w, 1, 2, 1);
  auto zero = Tensor<Real>::zeros({1, 1});
  auto r0 = concat<Real>({zero, -z, y}, 1);
  auto r1 = concat<Real>({z, zero, -x}, 1);
  auto r2 = concat<Real>({-y, x, zero}, 1);
  auto k = concat<Real>({r0, r1, r2}, 0);  // [3,3]
  auto wwt = matmul(transpose(w), w);      // [3,3]
  auto eye = Tensor<Real>::from(
      {3, 3}, {Real(1), Real(0), Real(0), Real(0), Real(1), Real(0), Real(0),
               Real(0), Real(1)});
  return eye + a * k + b * (wwt - s * eye);
}

// Shape blend, forward kinematics along the tree, linear blend skinning,
// then keypoint regression.  Differentiable w.r.t. theta and beta.
template <class Real>
HandMesh<Real> hand_forward(const HandTemplate<Real>& tpl,
                            const Tensor<Real>& theta,
                            const Tensor<Real>& beta) {
  constexpr std::size_t nv = HandTemplate<Real>::n_vertices;
  constexpr std::size_t nj = HandTemplate<Real>::n_joints;
  if (theta.size() != HandTemplate<Real>::n_pose)
    throw ShapeError("pose params must have 48 values, got " +
                     std::to_string(theta.size()));
  if (beta.size() != HandTemplate<Real>::n_shape)
    throw ShapeError("shape params must have 10 values, got " +
                     std::to_string(beta.size()));

  auto rest = Tensor<Real>::from({1, nv * 3}, tpl.rest_vertices);
  auto basis = Tensor<Real>::from({10, nv * 3}, tpl.shape_basis);
  auto beta_row = reshape(beta, {1, 10});
  auto shaped = reshape(rest + matmul(beta_row, basis), {nv, 3});

  auto jreg = Tensor<Real>::from({nj, nv}, tpl.joint_regressor);
  auto j16 = matmul(jreg, shaped);  // [16,3]

  auto theta_flat = reshape(theta, {HandTemplate<Real>::n_pose});
  std::vector<Tensor<Real>> rw(nj), pw(nj);
  for (std::size_t j = 0; j < nj; ++j) {
    auto rl = rodrigues(slice(theta_flat, 0, 3 * j, 3));
    if (tpl.parent[j] < 0) {
      rw[j] = rl;
      pw[j] = slice(j16, 0, j, 1);
    } else {
      std::size_t par = std::size_t(tpl.parent[j]);
      rw[j] = matmul(rw[par], rl);
      auto off = slice(j16, 0, j, 1) - slice(j16, 0, par, 1);
      pw[j] = pw[par] + matmul(off, transpose(rw[par]));
    }
  }

  auto skin = Tensor<Real>::from({nv, nj}, tpl.skinning_weights);
  Tensor<Real> posed;
  for (std::size_t j = 0; j < nj; ++j) {
    auto rot = transpose(rw[j]);  // row vectors: v R^T
    auto pivot = pw[j] - matmul(slice(j16, 0, j, 1), rot);  // [1,3]
    auto contrib = matmul(shaped, rot) + pivot;             // [778,3]
    auto wcol = slice(skin, 1, j, 1);                       // [778,1]
    auto weighted = wcol * contrib;
    posed = j == 0 ? weighted : posed + weighted;
  }

  auto kreg = Tensor<Real>::from({HandTemplate<Real>::n_keypoints, nv},
                                 tpl.keypoint_regressor);
  HandMesh<Real> mesh;
  mesh.vertices = posed;
  mesh.joints21 = matmul(kreg, posed);
  mesh.joints16 = concat<Real>(pw, 0);
  return mesh;
}

// Compose two axis-angle rotations: result represents rot(a) then applied
// after rot(b) composes as R(a) R(b) acting on column vectors.
template <class Real>
std::array<Real, 3> aa_compose(const std::array<Real, 3>& a,
                               const std::array<Real, 3>& b) {
  auto to_quat = [](const std::array<Real, 3>& v) {
    double th = std::sqrt(double(v[0]) * v[0] + double(v[1]) * v[1] +
                          double(v[2]) * v[2]);
    double w = std::cos(th / 2);
    double f = th < 1e-12 ? 0.5 - th * th / 48.0 : std::sin(th / 2) / th;
    return std::array<double, 4>{w, f * v[0], f * v[1], f * v[2]};
  };
  auto qa = to_quat(a), qb = to_quat(b);
  std::array<double, 4> q = {
      qa[0] * qb[0] - qa[1] * qb[1] - qa[2] * qb[2] - qa[3] * qb[3],
      qa[0] * qb[1] + qa[1] * qb[0] + qa[2] * qb[3] - qa[3] * qb[2],
      qa[0] * qb[2] - qa[1] * qb[3] + qa[2] * qb[0] + qa[3] * qb[1],
      qa[0] * qb[3] + qa[1] * qb[2] - qa[2] * qb[1] + qa[3] * qb[0]};
  if (q[0] < 0)
    for (auto& c : q) c = -c;
  double vn = std::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  double angle = 2 * std::atan2(vn, q[0]);
  double f = vn < 1e-12 ? 2.0 : angle / vn;
  return {Real(f * q[1]), Real(f * q[2]), Real(f * q[3])};
}

template <class Real>
void save_template(const HandTemplate<Real>& t, const std::string& path) {
  nlohmann::json j;
  j["seed"] = t.seed;
  j["parent"] = t.parent;
  auto dump = [&j](const char* key, const std::vector<Real>& v) {
    std::vector<double> d(v.begin(), v.end());
    j[key] = d;
  };
  dump("rest_vertices", t.rest_vertices);
  dump("rest_joints", t.rest_joints);
  dump("skinning_weights", t.skinning_weights);
  dump("shape_basis", t.shape_basis);
  dump("keypoint_regressor", t.keypoint_regressor);
  dump("joint_regressor", t.joint_regressor);
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write template file: " + path);
  out << j.dump();
}

template <class Real>
HandTemplate<Real> load_template(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot read template file: " + path);
  nlohmann::json j;
  in >> j;
  HandTemplate<Real> t;
  auto need = [&j, &path](const char* key) -> const nlohmann::json& {
    if (!j.contains(key))
      throw ValueError("template file " + path + " missing field: " + key);
    return j[key];
  };
  t.seed = need("seed").template get<std::uint64_t>();
  t.parent = need("parent").template get<std::vector<int>>();
  auto read = [&need](const char* key, std::vector<Real>& out,
                      std::size_t expect) {
    auto d = need(key).template get<std::vector<double>>();
    if (d.size() != expect)
      throw ValueError(std::string("template field ") + key +
                       " has wrong size " + std::to_string(d.size()));
    out.assign(d.begin(), d.end());
  };
  constexpr std::size_t nv = HandTemplate<Real>::n_vertices;
  read("rest_vertices", t.rest_vertices, nv * 3);
  read("rest_joints", t.rest_joints, 16 * 3);
  read("skinning_weights", t.skinning_weights, nv * 16);
  read("shape_basis", t.shape_basis, 10 * nv * 3);
  read("keypoint_regressor", t.keypoint_regressor, 21 * nv);
  read("joint_regressor", t.joint_regressor, 16 * nv);
  if (t.parent.size() != 16)
    throw ValueError("template kinematic tree must have 16 entries");
  return t;
}

}  // namespace hoi
