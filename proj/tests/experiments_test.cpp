#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "hoi/experiments.hpp"

namespace fs = std::filesystem;
using hoi::GeneratorConfig;
using hoi::InteractionSample;
using hoi::ModelConfig;
using hoi::TrainConfig;
using DModel = hoi::Model<double>;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_sa_blocks = 1;
  cfg.depth_D = 1;
  cfg.latent.set_all(8);
  cfg.heatmap.h = 16;
  cfg.heatmap.w = 16;
  cfg.n_verbs = 4;
  cfg.n_nouns = 4;
  cfg.scene_dim = 6;
  return cfg;
}

std::vector<InteractionSample> tiny_data(std::size_t count,
                                         const std::string& split,
                                         double noise_scale = 1.0,
                                         std::uint64_t seed = 101) {
  GeneratorConfig g;
  g.n_verbs = 4;
  g.n_nouns = 4;
  g.scene_dim = 6;
  g.noise_scale = noise_scale;
  std::vector<InteractionSample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(hoi::generate_sample(g, seed, split, i));
  return out;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig quick_tc(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr = 1e-3;
  tc.batch_size = 6;
  tc.seed = 5;
  return tc;
}

std::vector<std::string> slurp_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(Direction, MetricTablePartitionsAllThirteen) {
  auto names = hoi::metric_names();
  ASSERT_EQ(names.size(), 13u);
  std::size_t up = 0;
  for (const auto& n : names)
    if (hoi::higher_is_better(n)) ++up;
  EXPECT_EQ(up, 6u);
  EXPECT_TRUE(hoi::higher_is_better("f1"));
  EXPECT_FALSE(hoi::higher_is_better("trend_ade"));
  EXPECT_FALSE(hoi::higher_is_better("pa_mpjpe"));
}

TEST(Ablation, EightRowsThirteenColumnsAndRerunTiesExactly) {
  auto train = tiny_data(12, "train");
  auto test = tiny_data(6, "test");
  auto dir_a = fresh_dir("hoi_ablate_a");
  auto rep = hoi::run_ablation<double>(train, test, tiny_cfg(), quick_tc(2),
                                       2, 99, dir_a.string());
  ASSERT_EQ(rep.rows.size(), 8u);
  EXPECT_EQ(rep.rows.front().label, "cross=0,deq=0,res=0");
  EXPECT_EQ(rep.rows.back().label, "cross=1,deq=1,res=1");
  std::set<std::string> labels;
  for (const auto& row : rep.rows) {
    labels.insert(row.label);
    EXPECT_EQ(row.report.metrics.size(), 13u) << row.label;
    EXPECT_FALSE(row.aborted) << row.label;
    for (const auto& [name, stat] : row.report.metrics)
      EXPECT_TRUE(std::isfinite(stat.mean)) << row.label << " " << name;
  }
  EXPECT_EQ(labels.size(), 8u);
  EXPECT_GT(rep.rows.back().param_count, rep.rows.front().param_count);

  auto lines = slurp_lines(rep.jsonl_path);
  ASSERT_EQ(lines.size(), 8u);
  for (const auto& line : lines) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("metrics").size(), 13u);
    EXPECT_TRUE(j.contains("param_count"));
  }

  auto dir_b = fresh_dir("hoi_ablate_b");
  auto rep2 = hoi::run_ablation<double>(train, test, tiny_cfg(), quick_tc(2),
                                        2, 99, dir_b.string());
  ASSERT_EQ(rep2.rows.size(), rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    EXPECT_EQ(rep.rows[i].to_json().dump(), rep2.rows[i].to_json().dump())
        << rep.rows[i].label;
}

TEST(Modification, TwelveRowsDefaultRowsTieAndStrategiesDiffer) {
  auto train = tiny_data(12, "train");
  auto test = tiny_data(6, "test");
  auto dir = fresh_dir("hoi_modify");
  auto rep = hoi::run_modification<double>(train, test, tiny_cfg(),
                                           quick_tc(2), 2, 99, dir.string());
  ASSERT_EQ(rep.rows.size(), 12u);

  std::vector<std::string> default_dumps;
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.report.metrics.size(), 13u) << row.label;
    for (const auto& [name, stat] : row.report.metrics)
      EXPECT_TRUE(std::isfinite(stat.mean)) << row.label << " " << name;
    if (row.detail.at("strategy") == "default")
      default_dumps.push_back(row.to_json().at("metrics").dump());
  }
  // the three default rows are the same configuration: they must tie exactly
  ASSERT_EQ(default_dumps.size(), 3u);
  EXPECT_EQ(default_dumps[0], default_dumps[1]);
  EXPECT_EQ(default_dumps[0], default_dumps[2]);

  // within each site the four strategies wire different modules
  for (const auto& site : hoi::modification_sites()) {
    std::set<std::string> dumps;
    std::set<std::size_t> counts;
    for (const auto& row : rep.rows)
      if (row.detail.at("site") == site) {
        dumps.insert(row.to_json().at("metrics").dump());
        counts.insert(row.param_count);
      }
    EXPECT_EQ(dumps.size(), 4u) << site;
    EXPECT_GE(counts.size(), 3u) << site;
  }

  auto lines = slurp_lines(rep.jsonl_path);
  EXPECT_EQ(lines.size(), 12u);
}

TEST(Modification, SiteStrategyConfigsRoundTripThroughJson) {
  for (const auto& site : hoi::modification_sites())
    for (const auto& strategy : hoi::modification_strategies()) {
      auto mc = hoi::apply_modification(tiny_cfg(), site, strategy);
      auto back = ModelConfig::from_json(mc.to_json());
      EXPECT_EQ(back.to_json().dump(), mc.to_json().dump())
          << site << "/" << strategy;
    }
  EXPECT_THROW(hoi::apply_modification(tiny_cfg(), "nowhere", "sum"),
               hoi::ValueError);
}

TEST(LatentSweep, CurvesPlotsAndDegenerateSweepMatchesPlainRun) {
  auto train = tiny_data(12, "train");
  auto test = tiny_data(6, "test");
  auto dir = fresh_dir("hoi_sweep");
  auto res = hoi::run_latent_sweep<double>(train, test, tiny_cfg(),
                                           quick_tc(2), {4, 8}, 2, 99,
                                           dir.string());
  ASSERT_EQ(res.rows.size(), 2u);
  ASSERT_EQ(res.curves.size(), 5u);
  for (const auto& [head, curve] : res.curves) {
    ASSERT_EQ(curve.second.size(), 2u) << head;
    for (double v : curve.second) EXPECT_TRUE(std::isfinite(v)) << head;
  }
  ASSERT_EQ(res.plot_paths.size(), 5u);
  for (const auto& p : res.plot_paths) {
    ASSERT_TRUE(fs::exists(p)) << p;
    std::ifstream in(p);
    std::string svg((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    EXPECT_NE(svg.find("<svg"), std::string::npos) << p;
    EXPECT_NE(svg.find("polyline"), std::string::npos) << p;
  }
  auto j = nlohmann::json::parse(
      std::ifstream(res.json_path), nullptr, true);
  EXPECT_EQ(j.at("curves").size(), 5u);
  EXPECT_EQ(j.at("dims").size(), 2u);

  // a one-dim sweep is exactly a plain train+eval of that configuration
  auto dir_one = fresh_dir("hoi_sweep_one");
  auto one = hoi::run_latent_sweep<double>(train, test, tiny_cfg(),
                                           quick_tc(2), {8}, 2, 99,
                                           dir_one.string());
  ModelConfig plain_cfg = tiny_cfg();
  plain_cfg.latent.set_all(8);
  auto model = DModel::create(plain_cfg, 99);
  auto dir_plain = fresh_dir("hoi_sweep_plain");
  hoi::train_model(model, quick_tc(2), train, dir_plain.string(), 99);
  auto plain = hoi::evaluate_model(model, test, 2, 99);
  EXPECT_EQ(one.rows[0].report.to_json().dump(), plain.to_json().dump());
}

TEST(Infer, SpreadProtocolAndDeterministicCollapse) {
  auto train = tiny_data(12, "train");
  auto model = DModel::create(tiny_cfg(), 7);
  auto dir = fresh_dir("hoi_infer");
  hoi::train_model(model, quick_tc(3), train, dir.string(), 7);
  auto sample = tiny_data(1, "test")[0];

  auto single = hoi::infer_with_spread(model, sample, 1, 42);
  EXPECT_EQ(single.bundles.size(), 1u);
  EXPECT_FALSE(single.has_spread);
  EXPECT_FALSE(hoi::inference_to_json(single).contains("spread"));

  auto many = hoi::infer_with_spread(model, sample, 6, 42);
  ASSERT_EQ(many.bundles.size(), 6u);
  ASSERT_TRUE(many.has_spread);
  EXPECT_EQ(many.spread.trend_point_std.size(), many.bundles[0].trend.size());
  EXPECT_EQ(many.spread.mani_point_std.size(), many.bundles[0].mani.size());
  EXPECT_EQ(many.spread.contact_vote.size(), 778u);
  // index 0 of the approach track is the fixed hand start
  EXPECT_EQ(many.spread.trend_point_std[0], 0.0);
  EXPECT_GT(many.spread.total_spread(), 0.0);
  for (double v : many.spread.contact_vote) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  auto j = hoi::inference_to_json(many);
  EXPECT_EQ(j.at("bundles").size(), 6u);
  EXPECT_TRUE(std::isfinite(
      j.at("spread").at("total_spread").get<double>()));

  auto det = hoi::infer_with_spread(model, sample, 5, 42, true);
  ASSERT_TRUE(det.has_spread);
  EXPECT_EQ(det.spread.total_spread(), 0.0);
  EXPECT_EQ(hoi::bundle_to_json(det.bundles[0]).dump(),
            hoi::bundle_to_json(det.bundles[4]).dump());

  EXPECT_THROW(hoi::infer_with_spread(model, sample, 0, 42), hoi::ValueError);
}

TEST(Infer, SpreadGrowsWhenGeneratorNoiseDoubles) {
  auto train_a = tiny_data(48, "train", 1.0, 77);
  auto test_a = tiny_data(20, "test", 1.0, 77);
  auto train_b = tiny_data(48, "train", 2.0, 77);
  auto test_b = tiny_data(20, "test", 2.0, 77);

  TrainConfig tc;
  tc.epochs = 30;
  tc.lr = 1e-3;
  tc.batch_size = 12;
  tc.seed = 5;

  auto ma = DModel::create(tiny_cfg(), 3);
  auto mb = DModel::create(tiny_cfg(), 3);
  auto dir_a = fresh_dir("hoi_spread_a");
  auto dir_b = fresh_dir("hoi_spread_b");
  auto oa = hoi::train_model(ma, tc, train_a, dir_a.string(), 3);
  auto ob = hoi::train_model(mb, tc, train_b, dir_b.string(), 3);
  ASSERT_FALSE(oa.aborted);
  ASSERT_FALSE(ob.aborted);

  std::vector<double> paired_diff;
  for (std::size_t i = 0; i < 20; ++i) {
    auto ra = hoi::infer_with_spread(ma, test_a[i], 16, 1000 + i);
    auto rb = hoi::infer_with_spread(mb, test_b[i], 16, 1000 + i);
    paired_diff.push_back(rb.spread.total_spread() -
                          ra.spread.total_spread());
  }
  EXPECT_GT(median(paired_diff), 0.0);
}
