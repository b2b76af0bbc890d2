#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hoi/experiments.hpp"

namespace fs = std::filesystem;

namespace {

nlohmann::json load_config_json(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(hoi::read_text_file(path));
  if (!j.is_object())
    throw hoi::ValueError("config file must hold a JSON object");
  return j;
}

// Sections are deep-merged over defaults so configs only need the fields
// they change.
hoi::ModelConfig model_config_from(const nlohmann::json& user) {
  auto base = hoi::ModelConfig().to_json();
  if (user.contains("model")) base.merge_patch(user.at("model"));
  return hoi::ModelConfig::from_json(base);
}

hoi::TrainConfig train_config_from(const nlohmann::json& user,
                                   std::uint64_t master_seed) {
  auto base = hoi::TrainConfig().to_json();
  base["seed"] = master_seed;
  if (user.contains("train")) base.merge_patch(user.at("train"));
  return hoi::TrainConfig::from_json(base);
}

hoi::GeneratorConfig generator_config_from(const nlohmann::json& user) {
  auto base = hoi::GeneratorConfig().to_json();
  if (user.contains("generator")) base.merge_patch(user.at("generator"));
  return hoi::GeneratorConfig::from_json(base);
}

// The model's vocabulary and track shape must agree with the dataset; fields
// the config did not pin explicitly are inherited from the manifest, pinned
// mismatches are an error.
void sync_model_to_manifest(hoi::ModelConfig& mc, const nlohmann::json& user,
                            const hoi::GeneratorConfig& gen) {
  auto pinned = [&](const char* key) {
    return user.contains("model") && user.at("model").contains(key);
  };
  auto adopt = [&](const char* key, std::size_t& field, std::size_t value) {
    if (!pinned(key))
      field = value;
    else if (field != value)
      throw hoi::ValueError(std::string("config model.") + key + " = " +
                            std::to_string(field) +
                            " does not match the dataset's " +
                            std::to_string(value));
  };
  adopt("n_verbs", mc.n_verbs, gen.n_verbs);
  adopt("n_nouns", mc.n_nouns, gen.n_nouns);
  adopt("scene_dim", mc.scene_dim, gen.scene_dim);
  adopt("n_c", mc.traj.n_c, gen.n_c);
  adopt("n_m", mc.traj.n_m, gen.n_m);
}

std::vector<hoi::InteractionSample> load_named_split(
    const hoi::DatasetManifest& manifest, const std::string& manifest_path,
    const std::string& split) {
  if (split == "train")
    return hoi::load_split(manifest_path, manifest.train_paths);
  if (split == "test") return hoi::load_split(manifest_path, manifest.test_paths);
  throw hoi::ValueError("unknown split '" + split + "' (train|test)");
}

void emit(const nlohmann::json& j) {
  std::printf("%s\n", j.dump().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand-object interaction anticipation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "hoi_out";
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");

  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  cmd_gen->fallthrough();

  std::string manifest_path, resume_path;
  auto* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->fallthrough();
  cmd_train->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_train->add_option("--resume", resume_path,
                        "checkpoint to resume from");

  std::string checkpoint_path, split = "test";
  std::size_t repeats = 10;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->fallthrough();
  cmd_eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  cmd_eval->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_eval->add_option("--split", split, "split to score (train|test)");
  cmd_eval->add_option("--repeats", repeats, "sampling repeats");

  std::string sample_id;
  bool deterministic = false;
  auto* cmd_infer = app.add_subcommand("infer", "repeated inference on one sample");
  cmd_infer->fallthrough();
  cmd_infer->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  cmd_infer->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_infer->add_option("--sample-id", sample_id, "sample to run")->required();
  cmd_infer->add_option("--repeats", repeats, "sampling repeats");
  cmd_infer->add_flag("--deterministic", deterministic,
                      "decode latent means instead of sampling");

  std::size_t study_repeats = 3;
  auto* cmd_ablate = app.add_subcommand("ablate", "constraint-chain toggle study");
  cmd_ablate->fallthrough();
  cmd_ablate->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_ablate->add_option("--repeats", study_repeats, "eval repeats per row");

  auto* cmd_modify = app.add_subcommand("modify", "constraint-site replacement study");
  cmd_modify->fallthrough();
  cmd_modify->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_modify->add_option("--repeats", study_repeats, "eval repeats per row");

  std::vector<std::size_t> dims = {8, 16, 32, 64, 128};
  auto* cmd_sweep = app.add_subcommand("sweep-latent", "latent-capacity sweep");
  cmd_sweep->fallthrough();
  cmd_sweep->add_option("--manifest", manifest_path, "dataset manifest")
      ->required();
  cmd_sweep->add_option("--dims", dims, "latent dims to sweep")
      ->delimiter(',');
  cmd_sweep->add_option("--repeats", study_repeats, "eval repeats per row");

  CLI11_PARSE(app, argc, argv);

  try {
    auto user = load_config_json(config_path);
    fs::create_directories(out_dir);

    if (app.got_subcommand(cmd_gen)) {
      auto gen = generator_config_from(user);
      auto manifest = hoi::generate_dataset(gen, seed, out_dir);
      emit({{"manifest", (fs::path(out_dir) / "manifest.json").string()},
            {"train", manifest.train_paths.size()},
            {"test", manifest.test_paths.size()}});
      return 0;
    }

    if (app.got_subcommand(cmd_train)) {
      auto manifest = hoi::load_manifest(manifest_path);
      auto train_set = hoi::load_split(manifest_path, manifest.train_paths);
      auto mc = model_config_from(user);
      sync_model_to_manifest(mc, user, manifest.config);
      auto tc = train_config_from(user, seed);
      hoi::TrainOutcome outcome;
      if (resume_path.empty()) {
        auto model = hoi::Model<double>::create(mc, seed);
        outcome = hoi::train_model(model, tc, train_set, out_dir, seed);
      } else {
        hoi::Model<double> model;
        hoi::AdamW<double> opt;
        auto info = hoi::load_checkpoint(resume_path, model, &opt);
        if (!info.has_optimizer)
          throw hoi::ValueError("resume checkpoint has no optimizer state: " +
                                resume_path);
        outcome = hoi::train_model(model, tc, train_set, out_dir,
                                   info.init_seed, &opt, info.epoch,
                                   info.step);
      }
      emit({{"initial_loss", outcome.initial_loss},
            {"final_loss", outcome.final_loss},
            {"epochs_run", outcome.epochs_run},
            {"steps", outcome.steps},
            {"aborted", outcome.aborted},
            {"abort_reason", outcome.abort_reason},
            {"final_checkpoint", outcome.final_checkpoint},
            {"best_checkpoint", outcome.best_checkpoint},
            {"log", outcome.log_path}});
      return outcome.aborted ? 1 : 0;
    }

    if (app.got_subcommand(cmd_eval)) {
      hoi::Model<double> model;
      hoi::load_checkpoint(checkpoint_path, model);
      auto manifest = hoi::load_manifest(manifest_path);
      auto samples = load_named_split(manifest, manifest_path, split);
      auto report = hoi::evaluate_model(model, samples, repeats, seed);
      auto path = (fs::path(out_dir) / "eval_report.json").string();
      hoi::write_text_file(path, report.to_json().dump(2) + "\n");
      nlohmann::json means = nlohmann::json::object();
      for (const auto& [name, stat] : report.metrics) means[name] = stat.mean;
      emit({{"report", path}, {"metrics", means}});
      return 0;
    }

    if (app.got_subcommand(cmd_infer)) {
      hoi::Model<double> model;
      hoi::load_checkpoint(checkpoint_path, model);
      auto manifest = hoi::load_manifest(manifest_path);
      auto samples = hoi::load_split(manifest_path, manifest.test_paths);
      auto more = hoi::load_split(manifest_path, manifest.train_paths);
      samples.insert(samples.end(), more.begin(), more.end());
      const hoi::InteractionSample* hit = nullptr;
      for (const auto& s : samples)
        if (s.sample_id == sample_id) {
          hit = &s;
          break;
        }
      if (!hit)
        throw hoi::ValueError("sample id '" + sample_id +
                              "' not found in the dataset");
      auto result =
          hoi::infer_with_spread(model, *hit, repeats, seed, deterministic);
      auto path = (fs::path(out_dir) / "inference.json").string();
      hoi::write_text_file(path, hoi::inference_to_json(result).dump(2) + "\n");
      nlohmann::json summary = {{"output", path},
                                {"repeats", result.bundles.size()}};
      if (result.has_spread)
        summary["total_spread"] = result.spread.total_spread();
      emit(summary);
      return 0;
    }

    auto run_study = [&](const std::string& which) {
      auto manifest = hoi::load_manifest(manifest_path);
      auto train_set = hoi::load_split(manifest_path, manifest.train_paths);
      auto test_set = hoi::load_split(manifest_path, manifest.test_paths);
      auto mc = model_config_from(user);
      sync_model_to_manifest(mc, user, manifest.config);
      auto tc = train_config_from(user, seed);
      if (which == "ablate") {
        auto rep = hoi::run_ablation<double>(train_set, test_set, mc, tc,
                                             study_repeats, seed, out_dir);
        emit({{"report", rep.jsonl_path}, {"rows", rep.rows.size()}});
      } else if (which == "modify") {
        auto rep = hoi::run_modification<double>(train_set, test_set, mc, tc,
                                                 study_repeats, seed, out_dir);
        emit({{"report", rep.jsonl_path}, {"rows", rep.rows.size()}});
      } else {
        auto res = hoi::run_latent_sweep<double>(train_set, test_set, mc, tc,
                                                 dims, study_repeats, seed,
                                                 out_dir);
        emit({{"json", res.json_path}, {"plots", res.plot_paths}});
      }
    };

    if (app.got_subcommand(cmd_ablate)) {
      run_study("ablate");
      return 0;
    }
    if (app.got_subcommand(cmd_modify)) {
      run_study("modify");
      return 0;
    }
    if (app.got_subcommand(cmd_sweep)) {
      run_study("sweep");
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
