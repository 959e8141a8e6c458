#pragma once

// Deterministic training loop: batch size 1, Adam with bias correction,
// cosine-annealed learning rate (per optimizer step by default), per-epoch
// validation and a configurable checkpoint policy. Identical configs, seed
// and dataset bytes give identical logs and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "hiclass/data.hpp"
#include "hiclass/evaluation.hpp"
#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"
#include "hiclass/rng.hpp"

namespace hiclass {

enum class CheckpointPolicy { best_val_fine_f1, last, every_k };

inline const char* to_string(CheckpointPolicy p) {
  switch (p) {
    case CheckpointPolicy::best_val_fine_f1: return "best_val_fine_f1";
    case CheckpointPolicy::last: return "last";
    case CheckpointPolicy::every_k: return "every_k";
  }
  throw std::logic_error("unreachable checkpoint policy");
}

inline CheckpointPolicy checkpoint_policy_from_string(const std::string& s) {
  if (s == "best_val_fine_f1") return CheckpointPolicy::best_val_fine_f1;
  if (s == "last") return CheckpointPolicy::last;
  if (s == "every_k") return CheckpointPolicy::every_k;
  throw std::invalid_argument("unknown checkpoint policy '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 20;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool shuffle_each_epoch = true;
  bool anneal_per_epoch = false;  // default anneals per optimizer step
  CheckpointPolicy checkpoint_policy = CheckpointPolicy::best_val_fine_f1;
  std::size_t checkpoint_every = 5;  // for every_k

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (!(lr_final > 0.0) || !(lr_final <= lr_initial))
      throw std::invalid_argument("train config: need 0 < lr_final <= lr_initial");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
      throw std::invalid_argument("train config: invalid adam constants");
    if (checkpoint_policy == CheckpointPolicy::every_k && checkpoint_every < 1)
      throw std::invalid_argument("train config: checkpoint_every must be >= 1");
  }
};

// lr_final + (lr_initial - lr_final) * (1 + cos(pi * step / total)) / 2.
inline double cosine_lr(std::size_t step, std::size_t total_steps,
                        double lr_initial, double lr_final) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

struct OptimizerState {
  ModelParams m, v;  // first/second moment accumulators, shaped like the params
  std::size_t step = 0;

  explicit OptimizerState(const ModelConfig& cfg)
      : m(zero_params(cfg)), v(zero_params(cfg)) {}
};

// One bias-corrected Adam update in place. Aborts on a non-finite gradient,
// naming the offending parameter block.
inline void adam_step(ModelParams& params, const ModelParams& grads,
                      OptimizerState& state, double lr, const TrainConfig& tc) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
  state.step += 1;
  const double b1 = tc.adam_beta1, b2 = tc.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto pb = param_blocks(params);
  auto gb = param_blocks(grads);
  auto mb = param_blocks(state.m);
  auto vb = param_blocks(state.v);
  for (std::size_t b = 0; b < pb.size(); ++b) {
    for (std::size_t i = 0; i < pb[b].size; ++i) {
      const double g = gb[b].data[i];
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in block " +
                                 gb[b].name);
      mb[b].data[i] = b1 * mb[b].data[i] + (1.0 - b1) * g;
      vb[b].data[i] = b2 * vb[b].data[i] + (1.0 - b2) * g * g;
      const double m_hat = mb[b].data[i] / corr1;
      const double v_hat = vb[b].data[i] / corr2;
      pb[b].data[i] -= lr * m_hat / (std::sqrt(v_hat) + tc.adam_eps);
    }
  }
}

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  double mean_ce_coarse = 0.0, mean_ce_fine = 0.0, mean_con = 0.0, mean_int = 0.0,
         mean_gce = 0.0, mean_total = 0.0;
  double lr_last = 0.0;
  double val_acc_coarse = 0.0, val_f1_coarse = 0.0, val_acc_fine = 0.0,
         val_f1_fine = 0.0, val_consistency = 0.0;
};

struct TrainResult {
  ModelConfig config;
  ModelParams params;  // selected per checkpoint policy
  std::vector<EpochRow> log;
  std::size_t selected_epoch = 0;
  std::size_t total_steps = 0;
};

inline void write_train_log_csv(const std::vector<EpochRow>& log,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write train log '" + path.string() + "'");
  out << "epoch,mean_ce_coarse,mean_ce_fine,mean_con,mean_int,mean_gce,mean_total,"
         "lr_last,val_acc_coarse,val_f1_coarse,val_acc_fine,val_f1_fine,"
         "val_consistency\n";
  char buf[64];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    out << "," << buf;
  };
  for (const auto& row : log) {
    out << row.epoch;
    cell(row.mean_ce_coarse);
    cell(row.mean_ce_fine);
    cell(row.mean_con);
    cell(row.mean_int);
    cell(row.mean_gce);
    cell(row.mean_total);
    cell(row.lr_last);
    cell(row.val_acc_coarse);
    cell(row.val_f1_coarse);
    cell(row.val_acc_fine);
    cell(row.val_f1_fine);
    cell(row.val_consistency);
    out << "\n";
  }
}

// Trains on the train split, validates per epoch on the val split, and
// returns the checkpoint selected by the policy. `every_k_dir`, when given,
// receives intermediate checkpoints under the every_k policy.
inline TrainResult train(const Dataset& dataset, ModelConfig model_cfg,
                         const LossConfig& loss_cfg, const TrainConfig& train_cfg,
                         const std::filesystem::path* every_k_dir = nullptr) {
  train_cfg.validate();
  loss_cfg.validate();
  if (dataset.train.empty())
    throw std::invalid_argument("train: empty train split");

  model_cfg.num_coarse = dataset.taxonomy.num_coarse();
  model_cfg.num_fine = dataset.taxonomy.num_fine();
  model_cfg.feature_dim = dataset.train.front().features.cols();
  model_cfg.validate();
  for (const Bag& bag : dataset.train)
    if (bag.features.cols() != model_cfg.feature_dim)
      throw std::invalid_argument("train: inconsistent feature dims across bags");

  ModelParams params = init_params(model_cfg, seed_combine(train_cfg.seed, 0x1217));
  OptimizerState state(model_cfg);

  const std::size_t n_train = dataset.train.size();
  const std::size_t total_steps = train_cfg.epochs * n_train;
  // Per-step annealing hits lr_initial at the first step and lr_final at the
  // last one (inclusive endpoints).
  const std::size_t lr_span = std::max<std::size_t>(1, total_steps - 1);
  const std::size_t epoch_span = std::max<std::size_t>(1, train_cfg.epochs - 1);

  TrainResult result;
  result.config = model_cfg;
  std::size_t global_step = 0;

  ModelParams best_params = params;
  double best_f1 = -1.0;
  std::size_t best_epoch = 1;

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    if (train_cfg.shuffle_each_epoch) {
      Rng rng(seed_combine(train_cfg.seed, 0x5421, epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    EpochRow row;
    row.epoch = epoch;
    double lr = train_cfg.lr_initial;
    for (std::size_t idx : order) {
      const Bag& bag = dataset.train[idx];
      TotalLoss loss;
      try {
        const ForwardTrace trace = forward(bag, params, model_cfg);
        loss = total_loss(trace, bag, dataset.taxonomy, loss_cfg);
        if (!std::isfinite(loss.breakdown.total))
          throw std::runtime_error("non-finite loss");
        const ModelParams grads = backward(trace, loss.seeds, params);
        lr = train_cfg.anneal_per_epoch
                 ? cosine_lr(epoch - 1, epoch_span, train_cfg.lr_initial,
                             train_cfg.lr_final)
                 : cosine_lr(global_step, lr_span, train_cfg.lr_initial,
                             train_cfg.lr_final);
        adam_step(params, grads, state, lr, train_cfg);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: bag '" + bag.slide_id + "': " + e.what());
      }
      ++global_step;
      row.mean_ce_coarse += loss.breakdown.ce_coarse;
      row.mean_ce_fine += loss.breakdown.ce_fine;
      row.mean_con += loss.breakdown.con;
      row.mean_int += loss.breakdown.intra_inter;
      row.mean_gce += loss.breakdown.gce;
      row.mean_total += loss.breakdown.total;
    }
    const double inv_n = 1.0 / static_cast<double>(n_train);
    row.mean_ce_coarse *= inv_n;
    row.mean_ce_fine *= inv_n;
    row.mean_con *= inv_n;
    row.mean_int *= inv_n;
    row.mean_gce *= inv_n;
    row.mean_total *= inv_n;
    row.lr_last = lr;

    if (!dataset.val.empty()) {
      const EvalReport val =
          evaluate(params, model_cfg, dataset.val, dataset.taxonomy);
      row.val_acc_coarse = val.acc_coarse;
      row.val_f1_coarse = val.f1_macro_coarse;
      row.val_acc_fine = val.acc_fine;
      row.val_f1_fine = val.f1_macro_fine;
      row.val_consistency = val.consistency_rate;
    }
    result.log.push_back(row);

    if (row.val_f1_fine > best_f1) {
      best_f1 = row.val_f1_fine;
      best_params = params;
      best_epoch = epoch;
    }
    if (train_cfg.checkpoint_policy == CheckpointPolicy::every_k && every_k_dir &&
        epoch % train_cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%03zu.bin", epoch);
      save_checkpoint(model_cfg, params, *every_k_dir / name);
    }
  }

  result.total_steps = global_step;
  if (train_cfg.checkpoint_policy == CheckpointPolicy::best_val_fine_f1) {
    result.params = std::move(best_params);
    result.selected_epoch = best_epoch;
  } else {
    result.params = std::move(params);
    result.selected_epoch = train_cfg.epochs;
  }
  return result;
}

}  // namespace hiclass
