#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hoi/model.hpp"

namespace hoi {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 75;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  LossWeights weights;

  // lr == 0 is allowed: it makes the optimizer a provable no-op
  void validate() const {
    if (lr < 0) throw ValueError("train config: lr must be >= 0");
    if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
    if (batch_size < 1)
      throw ValueError("train config: batch_size must be >= 1");
    if (weight_decay < 0)
      throw ValueError("train config: weight_decay must be >= 0");
    weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"weights",
             {{"w1", weights.w1},
              {"w2", weights.w2},
              {"w3", weights.w3},
              {"w4", weights.w4},
              {"w5", weights.w5},
              {"lambda_kl", weights.lambda_kl},
              {"zeta_joint", weights.zeta_joint}}}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& w = j.at("weights");
    c.weights.w1 = w.at("w1").get<double>();
    c.weights.w2 = w.at("w2").get<double>();
    c.weights.w3 = w.at("w3").get<double>();
    c.weights.w4 = w.at("w4").get<double>();
    c.weights.w5 = w.at("w5").get<double>();
    c.weights.lambda_kl = w.at("lambda_kl").get<double>();
    c.weights.zeta_joint = w.at("zeta_joint").get<double>();
    c.validate();
    return c;
  }
};

struct TrainOutcome {
  double initial_loss = 0;   // first epoch's mean batch loss
  double final_loss = 0;     // last completed epoch's mean batch loss
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  bool aborted = false;
  std::string abort_reason;
  std::filesystem::path final_checkpoint, best_checkpoint, log_path;
};

namespace detail {

template <class Real>
std::vector<std::vector<Real>> snapshot_params(const ParamStore<Real>& ps) {
  std::vector<std::vector<Real>> vals;
  vals.reserve(ps.items.size());
  for (const auto& [_, t] : ps.items) vals.push_back(t.values());
  return vals;
}

template <class Real>
void restore_params(ParamStore<Real>& ps,
                    const std::vector<std::vector<Real>>& vals) {
  for (std::size_t i = 0; i < ps.items.size(); ++i)
    ps.items[i].second.values_mut() = vals[i];
}

}  // namespace detail

// Seeded AdamW loop over the train split.  Per-sample latent draws come from
// streams keyed on (seed, epoch, sample index), so a resumed run replays the
// exact remaining schedule of a straight-through run.
template <class Real>
TrainOutcome train_model(Model<Real>& model, const TrainConfig& tc,
                         const std::vector<InteractionSample>& train_set,
                         const std::filesystem::path& out_dir,
                         std::uint64_t init_seed, AdamW<Real>* resume_opt,
                         std::size_t start_epoch, std::size_t start_step) {
  tc.validate();
  if (train_set.empty()) throw ValueError("train: empty train split");
  std::filesystem::create_directories(out_dir);

  AdamW<Real> fresh_opt;
  AdamW<Real>& opt = resume_opt ? *resume_opt : fresh_opt;
  if (!resume_opt) {
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
    opt.init(model.ps);
  } else {
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
  }

  TrainOutcome out;
  out.log_path = out_dir / "train_log.jsonl";
  std::ofstream log(out.log_path,
                    start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw ValueError("train: cannot open log " + out.log_path.string());

  double best_epoch_loss = std::numeric_limits<double>::infinity();
  auto best_params = detail::snapshot_params(model.ps);
  std::size_t best_epoch = start_epoch;
  std::size_t step = start_step;

  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix64(tc.seed, 0xe70c0000ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[std::size_t(shuffle_rng.uniform_int(0, int(i) - 1))]);

    double epoch_loss = 0;
    std::size_t epoch_batches = 0;
    for (std::size_t beg = 0; beg < order.size(); beg += tc.batch_size) {
      std::size_t end = std::min(order.size(), beg + tc.batch_size);
      model.ps.zero_grad();

      auto abort_run = [&](const std::string& why) {
        out.aborted = true;
        out.abort_reason = why + " at step " + std::to_string(step) +
                           " (epoch " + std::to_string(epoch) + ")";
        auto last_good = out_dir / "checkpoint_last_good.json";
        save_checkpoint(last_good, model, init_seed, epoch, step, &opt);
        out.final_checkpoint = last_good;
        detail::restore_params(model.ps, best_params);
        save_checkpoint(out_dir / "checkpoint_best.json", model, init_seed,
                        best_epoch, step);
        out.best_checkpoint = out_dir / "checkpoint_best.json";
        nlohmann::json diag{{"aborted", true},
                            {"reason", out.abort_reason},
                            {"step", step},
                            {"epoch", epoch}};
        log << diag.dump() << "\n";
        return out;
      };

      Tensor<Real> loss;
      double s_t = 0, s_h = 0, s_p = 0, s_c = 0, s_m = 0;
      double d_it = 0, d_res = 0;
      try {
        for (std::size_t k = beg; k < end; ++k) {
          std::size_t idx = order[k];
          Rng srng(mix64(tc.seed, (std::uint64_t(epoch) << 32) |
                                      std::uint64_t(idx)));
          auto l = train_forward(model, train_set[idx], srng);
          auto t = sample_total_loss(l, tc.weights);
          loss = k == beg ? t : loss + t;
          auto part = [&](const ElementLoss<Real>& e) {
            return double(e.recon.at(0)) +
                   tc.weights.lambda_kl * double(e.kl.at(0));
          };
          s_t += part(l.trend);
          s_h += part(l.hotspot);
          s_p += part(l.pose) +
                 tc.weights.zeta_joint * double(l.joint_term.at(0));
          s_c += part(l.contact);
          s_m += part(l.mani);
          d_it += l.deq_iters;
          d_res += l.deq_residual;
        }
      } catch (const DivergedError& e) {
        return abort_run(std::string("fusion divergence (") + e.what() + ")");
      }
      double bs = double(end - beg);
      loss = loss * (1.0 / bs);
      double loss_val = double(loss.at(0));

      if (!std::isfinite(loss_val)) return abort_run("non-finite loss");

      loss.backward();
      bool grads_ok = true;
      for (const auto& [_, p] : model.ps.items) {
        for (double g : p.grad())
          if (!std::isfinite(g)) {
            grads_ok = false;
            break;
          }
        if (!grads_ok) break;
      }
      if (!grads_ok) return abort_run("non-finite gradient");
      opt.step(model.ps);
      ++step;
      epoch_loss += loss_val;
      ++epoch_batches;

      nlohmann::json line{{"step", step},
                          {"epoch", epoch},
                          {"loss_total", loss_val},
                          {"loss_t", s_t / bs},
                          {"loss_h", s_h / bs},
                          {"loss_p", s_p / bs},
                          {"loss_c", s_c / bs},
                          {"loss_m", s_m / bs},
                          {"deq_iters", d_it / bs},
                          {"deq_residual", d_res / bs}};
      log << line.dump() << "\n";
    }
    epoch_loss /= double(epoch_batches);
    if (epoch == start_epoch) out.initial_loss = epoch_loss;
    out.final_loss = epoch_loss;
    ++out.epochs_run;
    if (epoch_loss < best_epoch_loss) {
      best_epoch_loss = epoch_loss;
      best_params = detail::snapshot_params(model.ps);
      best_epoch = epoch;
    }
  }
  out.steps = step;

  out.final_checkpoint = out_dir / "checkpoint_final.json";
  save_checkpoint(out.final_checkpoint, model, init_seed, tc.epochs, step,
                  &opt);
  {
    auto current = detail::snapshot_params(model.ps);
    detail::restore_params(model.ps, best_params);
    out.best_checkpoint = out_dir / "checkpoint_best.json";
    save_checkpoint(out.best_checkpoint, model, init_seed, best_epoch, step);
    detail::restore_params(model.ps, current);
  }
  return out;
}

template <class Real>
TrainOutcome train_model(Model<Real>& model, const TrainConfig& tc,
                         const std::vector<InteractionSample>& train_set,
                         const std::filesystem::path& out_dir,
                         std::uint64_t init_seed) {
  return train_model(model, tc, train_set, out_dir, init_seed,
                     static_cast<AdamW<Real>*>(nullptr), 0, 0);
}

}  // namespace hoi
