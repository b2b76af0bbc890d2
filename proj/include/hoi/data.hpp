#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hoi/metrics.hpp"
#include "hoi/nn.hpp"
#include "hoi/parallel.hpp"
#include "hoi/rng.hpp"
#include "hoi/tensor.hpp"

#include "json.hpp"

namespace hoi {

inline constexpr const char* kSchemaVersion = "1";

struct GeneratorConfig {
  std::size_t n_train = 500;
  std::size_t n_test = 100;
  std::size_t n_verbs = 16;
  std::size_t n_nouns = 32;
  std::size_t n_c = 3;
  std::size_t n_m = 3;
  std::size_t scene_dim = 8;
  double noise_scale = 1.0;

  void validate() const {
    if (n_verbs < 1 || n_nouns < 1 || n_c < 1 || n_m < 1 || scene_dim < 2)
      throw ValueError("generator config: counts out of range");
    if (noise_scale < 0)
      throw ValueError("generator config: noise_scale must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"n_train", n_train},   {"n_test", n_test},
            {"n_verbs", n_verbs},   {"n_nouns", n_nouns},
            {"n_c", n_c},           {"n_m", n_m},
            {"scene_dim", scene_dim}, {"noise_scale", noise_scale}};
  }

  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.n_train = j.at("n_train").get<std::size_t>();
    c.n_test = j.at("n_test").get<std::size_t>();
    c.n_verbs = j.at("n_verbs").get<std::size_t>();
    c.n_nouns = j.at("n_nouns").get<std::size_t>();
    c.n_c = j.at("n_c").get<std::size_t>();
    c.n_m = j.at("n_m").get<std::size_t>();
    c.scene_dim = j.at("scene_dim").get<std::size_t>();
    c.noise_scale = j.at("noise_scale").get<double>();
    c.validate();
    return c;
  }
};

struct InteractionSample {
  std::string sample_id;
  int verb_id = 0;
  int noun_id = 0;
  std::string hand_side = "right";
  std::vector<double> scene_latent;
  double hotspot_u = 0, hotspot_v = 0;
  std::vector<Waypoint> gt_trend;  // n_c + 1 points, index 0 = hand start
  std::vector<Waypoint> gt_mani;   // n_m + 1 points, index 0 = chain point
  std::vector<double> gt_theta;    // 48
  std::vector<double> gt_beta;     // 10
  std::vector<int> gt_contact;     // 778 binary
};

namespace detail {

inline double clamp01(double x, double lo = 0.0, double hi = 1.0) {
  return std::min(hi, std::max(lo, x));
}

inline std::vector<Waypoint> bezier_polyline(Waypoint a, Waypoint ctrl,
                                             Waypoint b, std::size_t n) {
  std::vector<Waypoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = double(i) / double(n - 1);
    double s = 1.0 - t;
    out.push_back({s * s * a.u + 2 * s * t * ctrl.u + t * t * b.u,
                   s * s * a.v + 2 * s * t * ctrl.v + t * t * b.v});
  }
  return out;
}

}  // namespace detail

// Arc-length resampling to k points, spaced at j*L/k for j = 1..k: the
// start point is excluded and the endpoint included.
inline std::vector<Waypoint> resample_waypoints(
    const std::vector<Waypoint>& raw, std::size_t k) {
  if (raw.size() < 2)
    throw ValueError("resample_waypoints: need at least 2 input points");
  if (k < 1) throw ValueError("resample_waypoints: k must be >= 1");
  std::vector<double> cum(raw.size(), 0.0);
  for (std::size_t i = 1; i < raw.size(); ++i)
    cum[i] = cum[i - 1] +
             std::hypot(raw[i].u - raw[i - 1].u, raw[i].v - raw[i - 1].v);
  double total = cum.back();
  std::vector<Waypoint> out;
  out.reserve(k);
  if (total < 1e-15) {
    for (std::size_t j = 0; j < k; ++j) out.push_back(raw.back());
    return out;
  }
  std::size_t seg = 0;
  for (std::size_t j = 1; j <= k; ++j) {
    double target = total * double(j) / double(k);
    while (seg + 2 < raw.size() && cum[seg + 1] < target) ++seg;
    double len = cum[seg + 1] - cum[seg];
    double t = len < 1e-15 ? 0.0 : (target - cum[seg]) / len;
    t = detail::clamp01(t);
    out.push_back({raw[seg].u + t * (raw[seg + 1].u - raw[seg].u),
                   raw[seg].v + t * (raw[seg + 1].v - raw[seg].v)});
  }
  return out;
}

// Fixed per-vertex layout of the synthetic hand mesh: 258 palm vertices
// then 104 per digit.
inline std::vector<int> contact_pattern(int verb_id) {
  std::vector<int> mask(778, 0);
  bool palm = verb_id % 3 == 0;
  int d1 = verb_id % 5;
  int d2 = (verb_id * 7 + 2) % 5;
  if (palm)
    for (std::size_t i = 0; i < 258; ++i) mask[i] = 1;
  for (int d : {d1, d2}) {
    std::size_t lo = 258 + 104 * std::size_t(d);
    std::size_t hi = std::min<std::size_t>(778, lo + 104);
    for (std::size_t i = lo; i < hi; ++i) mask[i] = 1;
  }
  return mask;
}

inline InteractionSample generate_sample(const GeneratorConfig& cfg,
                                         std::uint64_t seed,
                                         const std::string& split,
                                         std::size_t index) {
  cfg.validate();
  std::uint64_t split_tag = split == "train" ? 1 : split == "test" ? 2 : 3;
  Rng rng(mix64(seed, (split_tag << 32) | std::uint64_t(index)));

  InteractionSample s;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05zu", split.c_str(), index);
  s.sample_id = buf;
  s.verb_id = rng.uniform_int(0, int(cfg.n_verbs) - 1);
  s.noun_id = rng.uniform_int(0, int(cfg.n_nouns) - 1);
  s.hand_side = s.noun_id % 2 == 0 ? "right" : "left";
  double ns = cfg.noise_scale;
  int v = s.verb_id, n = s.noun_id;

  // noun picks the object position cell on an 8-column grid
  double base_u = 0.2 + 0.6 * ((double(n % 8) + 0.5) / 8.0);
  double base_v = 0.25 + 0.5 * ((double(n / 8) + 0.5) /
                                std::ceil(double(cfg.n_nouns) / 8.0));
  double obj_u = detail::clamp01(base_u + ns * rng.uniform(-0.02, 0.02));
  double obj_v = detail::clamp01(base_v + ns * rng.uniform(-0.02, 0.02));

  s.scene_latent.resize(cfg.scene_dim);
  s.scene_latent[0] = obj_u;
  s.scene_latent[1] = obj_v;
  for (std::size_t k = 2; k < cfg.scene_dim; ++k)
    s.scene_latent[k] = 0.5 * std::sin(0.3 * v + 0.9 * double(k)) +
                        0.5 * std::cos(0.4 * n + 1.3 * double(k)) +
                        ns * rng.uniform(-0.05, 0.05);

  // noun also fixes a hotspot offset on the object
  s.hotspot_u = detail::clamp01(obj_u + 0.04 * std::sin(1.7 * n + 0.3),
                                0.05, 0.95);
  s.hotspot_v = detail::clamp01(obj_v + 0.04 * std::cos(2.3 * n + 1.1),
                                0.05, 0.95);

  // approach trajectory: hand enters from the bottom on the noun's side,
  // verb selects the curvature family
  double start_u = (s.hand_side == "right" ? 0.75 : 0.25) +
                   ns * rng.uniform(-0.03, 0.03);
  double start_v = 0.9 + ns * rng.uniform(-0.02, 0.02);
  Waypoint start{detail::clamp01(start_u), detail::clamp01(start_v)};
  Waypoint goal{s.hotspot_u, s.hotspot_v};
  double amp_t = 0.05 * std::sin(2.1 * v + 0.4);
  double du = goal.u - start.u, dv = goal.v - start.v;
  double len = std::max(1e-9, std::hypot(du, dv));
  Waypoint ctrl{(start.u + goal.u) / 2 - amp_t * dv / len,
                (start.v + goal.v) / 2 + amp_t * du / len};
  auto dense = detail::bezier_polyline(start, ctrl, goal, 48);
  for (auto& p : dense) {
    p.u = detail::clamp01(p.u);
    p.v = detail::clamp01(p.v);
  }
  s.gt_trend.push_back(start);
  for (auto& p : resample_waypoints(dense, cfg.n_c)) s.gt_trend.push_back(p);
  s.gt_trend.back() = goal;  // endpoint exactly at the contact point

  // manipulation trajectory: verb picks direction and length from contact
  double phi = 2.0 * 3.14159265358979323846 * double(v) / double(cfg.n_verbs);
  double lm = 0.12 + 0.05 * std::sin(1.3 * v);
  Waypoint mend{detail::clamp01(goal.u + lm * std::cos(phi)),
                detail::clamp01(goal.v + lm * std::sin(phi))};
  double amp_m = 0.03 * std::cos(1.9 * v + 0.8);
  double mu = mend.u - goal.u, mv = mend.v - goal.v;
  double mlen = std::max(1e-9, std::hypot(mu, mv));
  Waypoint mctrl{(goal.u + mend.u) / 2 - amp_m * mv / mlen,
                 (goal.v + mend.v) / 2 + amp_m * mu / mlen};
  auto mdense = detail::bezier_polyline(goal, mctrl, mend, 48);
  for (auto& p : mdense) {
    p.u = detail::clamp01(p.u);
    p.v = detail::clamp01(p.v);
  }
  s.gt_mani.push_back(goal);
  for (auto& p : resample_waypoints(mdense, cfg.n_m)) s.gt_mani.push_back(p);

  // verb picks the pose cluster; noun the shape coefficients
  s.gt_theta.resize(48);
  for (std::size_t i = 0; i < 3; ++i)
    s.gt_theta[i] = 0.2 * std::sin(0.5 * v + double(i)) +
                    ns * rng.uniform(-0.04, 0.04);
  for (std::size_t i = 3; i < 48; ++i)
    s.gt_theta[i] = 0.25 * std::sin(0.9 * v + 1.7 * double(i)) +
                    ns * rng.uniform(-0.04, 0.04);
  s.gt_beta.resize(10);
  for (std::size_t i = 0; i < 10; ++i)
    s.gt_beta[i] = 0.4 * std::sin(0.9 * n + 1.3 * double(i)) +
                   ns * rng.uniform(-0.04, 0.04);

  // verb-determined contact pattern with sparse label noise
  s.gt_contact = contact_pattern(v);
  for (auto& m : s.gt_contact)
    if (rng.uniform() < 0.01 * ns) m = 1 - m;
  return s;
}

inline nlohmann::json sample_to_json(const InteractionSample& s) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["sample_id"] = s.sample_id;
  j["verb_id"] = s.verb_id;
  j["noun_id"] = s.noun_id;
  j["hand_side"] = s.hand_side;
  j["scene_latent"] = s.scene_latent;
  j["gt_hotspot_point"] = {s.hotspot_u, s.hotspot_v};
  auto pts = [](const std::vector<Waypoint>& w) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : w) a.push_back({p.u, p.v});
    return a;
  };
  j["gt_trend"] = pts(s.gt_trend);
  j["gt_mani"] = pts(s.gt_mani);
  j["gt_theta"] = s.gt_theta;
  j["gt_beta"] = s.gt_beta;
  j["gt_contact"] = s.gt_contact;
  return j;
}

namespace detail {

[[noreturn]] inline void field_error(const std::string& where,
                                     const std::string& field,
                                     const std::string& what) {
  throw ValueError("sample '" + where + "': field '" + field + "' " + what);
}

inline void require(const nlohmann::json& j, const std::string& where,
                    const std::string& field) {
  if (!j.contains(field)) field_error(where, field, "is missing");
}

inline std::vector<Waypoint> read_points(const nlohmann::json& a,
                                         const std::string& where,
                                         const std::string& field) {
  if (!a.is_array()) field_error(where, field, "must be an array");
  std::vector<Waypoint> out;
  for (const auto& p : a) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() ||
        !p[1].is_number())
      field_error(where, field, "must contain [u,v] number pairs");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace detail

inline InteractionSample sample_from_json(const nlohmann::json& j,
                                          const std::string& where) {
  detail::require(j, where, "schema_version");
  if (!j.at("schema_version").is_string() ||
      j.at("schema_version").get<std::string>() != kSchemaVersion)
    detail::field_error(where, "schema_version",
                        "has unknown value (expected \"" +
                            std::string(kSchemaVersion) + "\")");
  for (const char* f :
       {"sample_id", "verb_id", "noun_id", "hand_side", "scene_latent",
        "gt_hotspot_point", "gt_trend", "gt_mani", "gt_theta", "gt_beta",
        "gt_contact"})
    detail::require(j, where, f);

  InteractionSample s;
  if (!j.at("sample_id").is_string())
    detail::field_error(where, "sample_id", "must be a string");
  s.sample_id = j.at("sample_id").get<std::string>();
  if (!j.at("verb_id").is_number_integer())
    detail::field_error(where, "verb_id", "must be an integer");
  s.verb_id = j.at("verb_id").get<int>();
  if (!j.at("noun_id").is_number_integer())
    detail::field_error(where, "noun_id", "must be an integer");
  s.noun_id = j.at("noun_id").get<int>();
  if (!j.at("hand_side").is_string())
    detail::field_error(where, "hand_side", "must be a string");
  s.hand_side = j.at("hand_side").get<std::string>();
  if (s.hand_side != "left" && s.hand_side != "right")
    detail::field_error(where, "hand_side", "must be 'left' or 'right'");

  if (!j.at("scene_latent").is_array())
    detail::field_error(where, "scene_latent", "must be an array");
  for (const auto& x : j.at("scene_latent")) {
    if (!x.is_number())
      detail::field_error(where, "scene_latent", "must contain numbers");
    s.scene_latent.push_back(x.get<double>());
  }

  auto hp = j.at("gt_hotspot_point");
  if (!hp.is_array() || hp.size() != 2 || !hp[0].is_number() ||
      !hp[1].is_number())
    detail::field_error(where, "gt_hotspot_point", "must be [u, v]");
  s.hotspot_u = hp[0].get<double>();
  s.hotspot_v = hp[1].get<double>();

  s.gt_trend = detail::read_points(j.at("gt_trend"), where, "gt_trend");
  s.gt_mani = detail::read_points(j.at("gt_mani"), where, "gt_mani");

  auto read_doubles = [&where](const nlohmann::json& a,
                               const std::string& field, std::size_t want) {
    if (!a.is_array() || a.size() != want)
      detail::field_error(where, field,
                          "must be an array of " + std::to_string(want) +
                              " numbers");
    std::vector<double> out;
    for (const auto& x : a) {
      if (!x.is_number()) detail::field_error(where, field, "must be numeric");
      out.push_back(x.get<double>());
    }
    return out;
  };
  s.gt_theta = read_doubles(j.at("gt_theta"), "gt_theta", 48);
  s.gt_beta = read_doubles(j.at("gt_beta"), "gt_beta", 10);

  if (!j.at("gt_contact").is_array() || j.at("gt_contact").size() != 778)
    detail::field_error(where, "gt_contact",
                        "must be an array of 778 binary values");
  for (const auto& x : j.at("gt_contact")) {
    if (!x.is_number_integer() ||
        (x.get<int>() != 0 && x.get<int>() != 1))
      detail::field_error(where, "gt_contact", "must hold 0/1 values");
    s.gt_contact.push_back(x.get<int>());
  }
  return s;
}

struct DatasetManifest {
  GeneratorConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> train_paths;  // relative to the manifest dir
  std::vector<std::string> test_paths;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["generator"] = config.to_json();
    j["seed"] = seed;
    j["splits"] = {{"train", train_paths}, {"test", test_paths}};
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    detail::require(j, "manifest", "schema_version");
    if (!j.at("schema_version").is_string() ||
        j.at("schema_version").get<std::string>() != kSchemaVersion)
      detail::field_error("manifest", "schema_version",
                          "has unknown value (expected \"" +
                              std::string(kSchemaVersion) + "\")");
    detail::require(j, "manifest", "generator");
    detail::require(j, "manifest", "seed");
    detail::require(j, "manifest", "splits");
    DatasetManifest m;
    m.config = GeneratorConfig::from_json(j.at("generator"));
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& sp = j.at("splits");
    detail::require(sp, "manifest.splits", "train");
    detail::require(sp, "manifest.splits", "test");
    m.train_paths = sp.at("train").get<std::vector<std::string>>();
    m.test_paths = sp.at("test").get<std::vector<std::string>>();
    return m;
  }
};

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("cannot open for writing: " + path.string());
  out << text;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open for reading: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline DatasetManifest generate_dataset(const GeneratorConfig& cfg,
                                        std::uint64_t seed,
                                        const std::filesystem::path& out_dir) {
  cfg.validate();
  DatasetManifest m;
  m.config = cfg;
  m.seed = seed;
  auto emit = [&](const std::string& split, std::size_t count,
                  std::vector<std::string>& paths) {
    for (std::size_t i = 0; i < count; ++i) {
      auto s = generate_sample(cfg, seed, split, i);
      std::string rel = "samples/" + s.sample_id + ".json";
      write_text_file(out_dir / rel, sample_to_json(s).dump(2) + "\n");
      paths.push_back(rel);
    }
  };
  emit("train", cfg.n_train, m.train_paths);
  emit("test", cfg.n_test, m.test_paths);
  write_text_file(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_text_file(path));
  return DatasetManifest::from_json(j);
}

inline std::vector<InteractionSample> load_split(
    const std::filesystem::path& manifest_path,
    const std::vector<std::string>& rel_paths) {
  std::vector<InteractionSample> out(rel_paths.size());
  auto dir = manifest_path.parent_path();
  parallel_for(rel_paths.size(), [&](std::size_t i) {
    auto j = nlohmann::json::parse(read_text_file(dir / rel_paths[i]));
    out[i] = sample_from_json(j, rel_paths[i]);
  });
  return out;
}

// Deterministic stand-ins for the pretrained language/vision encoders:
// verb and noun embedding tables mixed with projected scene tokens.
template <class Real>
struct StubEncoders {
  std::size_t d = 0, n_tokens = 16, n_verbs = 0, n_nouns = 0, scene_dim = 0;
  Tensor<Real> verb_table, noun_table;
  Linear<Real> scene_proj, mix_h_scene, mix_h_verb, mix_o_scene, mix_o_noun;

  static StubEncoders create(ParamStore<Real>& ps, const std::string& name,
                             std::size_t n_verbs, std::size_t n_nouns,
                             std::size_t scene_dim, std::size_t d, Rng& rng) {
    StubEncoders e;
    e.d = d;
    e.n_verbs = n_verbs;
    e.n_nouns = n_nouns;
    e.scene_dim = scene_dim;
    e.verb_table = ps.add(name + ".verb_table",
                          normal_init<Real>({n_verbs, d}, 0.5, rng));
    e.noun_table = ps.add(name + ".noun_table",
                          normal_init<Real>({n_nouns, d}, 0.5, rng));
    e.scene_proj = Linear<Real>::create(ps, name + ".scene", scene_dim,
                                        e.n_tokens * d, rng);
    e.mix_h_scene = Linear<Real>::create(ps, name + ".hs", d, d, rng);
    e.mix_h_verb = Linear<Real>::create(ps, name + ".hv", d, d, rng);
    e.mix_o_scene = Linear<Real>::create(ps, name + ".os", d, d, rng);
    e.mix_o_noun = Linear<Real>::create(ps, name + ".on", d, d, rng);
    return e;
  }
};

template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> stub_encode(
    const StubEncoders<Real>& enc, const InteractionSample& s) {
  if (s.verb_id < 0 || std::size_t(s.verb_id) >= enc.n_verbs)
    throw ValueError("stub_encode: verb_id out of range: " +
                     std::to_string(s.verb_id));
  if (s.noun_id < 0 || std::size_t(s.noun_id) >= enc.n_nouns)
    throw ValueError("stub_encode: noun_id out of range: " +
                     std::to_string(s.noun_id));
  if (s.scene_latent.size() != enc.scene_dim)
    throw ShapeError("stub_encode: scene_latent length " +
                     std::to_string(s.scene_latent.size()) + ", expected " +
                     std::to_string(enc.scene_dim));
  std::vector<Real> sl(s.scene_latent.begin(), s.scene_latent.end());
  auto scene = Tensor<Real>::from({1, enc.scene_dim}, std::move(sl));
  auto tokens =
      reshape(enc.scene_proj(scene), {enc.n_tokens, enc.d});
  auto ev = slice(enc.verb_table, 0, std::size_t(s.verb_id), 1);
  auto en = slice(enc.noun_table, 0, std::size_t(s.noun_id), 1);
  auto h = gelu(enc.mix_h_scene(tokens) + enc.mix_h_verb(ev));
  auto o = gelu(enc.mix_o_scene(tokens) + enc.mix_o_noun(en));
  return {h, o};
}

}  // namespace hoi
