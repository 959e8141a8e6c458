#pragma once

// Finite-difference verification of the analytic gradients, block by block.
//
// The probe differentiates the same objective the backward pass is defined
// for: the stop-gradient copies inserted by integrate() are held constant at
// their base-point values while parameters are perturbed. Without freezing,
// finite differences of the full value function would see the gated paths
// that backward() deliberately blocks. Probe points are resampled until they
// sit clear of the argmax ties, hinge kinks and relu corners, where the
// subgradient conventions would make the comparison meaningless.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"
#include "hiclass/numerics.hpp"
#include "hiclass/rng.hpp"
#include "hiclass/taxonomy.hpp"

namespace hiclass {

struct GradCheckSettings {
  ModelConfig model;
  LossConfig loss;
  std::size_t n_patches = 3;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double rel_tol = 1e-4;
  // Entries below this magnitude compare absolutely (rel_tol * floor), so
  // exact zeros from gates and dead relus stay checkable.
  double magnitude_floor = 1e-3;
  double kink_margin = 1e-3;
  std::string corrupt_block;  // debug: perturb this block's analytic gradient
};

struct BlockReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

namespace detail {

// Head outputs with the gated copies pinned to the supplied base halves.
// Identical to forward() when the perturbed parameters equal the base ones.
inline HeadOutputs heads_with_frozen_gates(const Matrix& features,
                                           const ModelParams& params,
                                           const ModelConfig& cfg,
                                           const Vector& frozen_coarse,
                                           const Vector& frozen_fine) {
  const PoolTrace pool = attention_pool(features, params, cfg);
  auto [coarse_part, fine_part] = split_slide(pool.slide, cfg);
  auto concat = [](const Vector& a, const Vector& b) {
    Vector out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  Vector coarse_aug, fine_aug;
  switch (cfg.integration) {
    case IntegrationMode::none:
      coarse_aug = coarse_part;
      fine_aug = fine_part;
      break;
    case IntegrationMode::fine_to_coarse:
      coarse_aug = concat(coarse_part, frozen_fine);
      fine_aug = fine_part;
      break;
    case IntegrationMode::coarse_to_fine:
      coarse_aug = coarse_part;
      fine_aug = concat(fine_part, frozen_coarse);
      break;
    case IntegrationMode::bidirectional:
      coarse_aug = concat(coarse_part, frozen_fine);
      fine_aug = concat(fine_part, frozen_coarse);
      break;
  }
  return project_and_classify(coarse_aug, fine_aug, params, cfg);
}

inline double top2_gap(const Vector& v) {
  if (v.size() < 2) return std::numeric_limits<double>::infinity();
  double best = -std::numeric_limits<double>::infinity();
  double second = best;
  for (double x : v) {
    if (x > best) {
      second = best;
      best = x;
    } else if (x > second) {
      second = x;
    }
  }
  return best - second;
}

// True when the sample sits clear of every non-smooth point the losses and
// the relu introduce.
inline bool clear_of_kinks(const ForwardTrace& trace, std::size_t fine_label,
                           const Taxonomy& taxonomy, const LossConfig& lc,
                           double margin) {
  if (top2_gap(trace.heads.logits_coarse) < margin) return false;
  if (top2_gap(trace.heads.logits_fine) < margin) return false;
  for (double z : trace.pool.pre_act.data())
    if (std::abs(z) < margin) return false;
  if (lc.enable_int) {
    const Vector p_true = softmax(trace.heads.class_feat_fine.row(fine_label));
    for (std::size_t other : taxonomy.complement_of(fine_label)) {
      const Vector p_other = softmax(trace.heads.class_feat_fine.row(other));
      if (std::abs(kl_div(p_true, p_other) - lc.alpha) < margin) return false;
    }
  }
  return true;
}

}  // namespace detail

// Compares backward() to central differences of the gate-frozen objective
// for one randomly drawn (params, bag, labels) sample; resamples until the
// point is clear of kinks. Returns one report per parameter block.
inline std::vector<BlockReport> run_gradcheck(const GradCheckSettings& settings,
                                              const Taxonomy& taxonomy) {
  ModelConfig cfg = settings.model;
  cfg.num_coarse = taxonomy.num_coarse();
  cfg.num_fine = taxonomy.num_fine();
  cfg.validate();
  settings.loss.validate();

  ModelParams params = zero_params(cfg);
  Matrix features(settings.n_patches, cfg.feature_dim);
  std::size_t fine_label = 0;
  ForwardTrace trace;
  bool found = false;
  for (std::uint64_t attempt = 0; attempt < 100 && !found; ++attempt) {
    const std::uint64_t draw = seed_combine(settings.seed, 0x6b, attempt);
    params = init_params(cfg, seed_combine(draw, 1));
    Rng rng(seed_combine(draw, 2));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : features.data()) x = normal(rng);
    fine_label = std::uniform_int_distribution<std::size_t>(
        0, taxonomy.num_fine() - 1)(rng);
    trace = forward(features, params, cfg);
    found = detail::clear_of_kinks(trace, fine_label, taxonomy, settings.loss,
                                   settings.kink_margin);
  }
  if (!found)
    throw std::runtime_error("run_gradcheck: no kink-free sample in 100 draws");
  const std::size_t coarse_label = taxonomy.group_of(fine_label);

  const TotalLoss base =
      total_loss(trace, coarse_label, fine_label, taxonomy, settings.loss);
  ModelParams analytic = backward(trace, base.seeds, params);
  if (!settings.corrupt_block.empty()) {
    bool hit = false;
    for (auto& b : param_blocks(analytic)) {
      if (b.name != settings.corrupt_block) continue;
      hit = true;
      for (std::size_t i = 0; i < b.size; ++i) b.data[i] += 1e-2;
    }
    if (!hit)
      throw std::invalid_argument("run_gradcheck: unknown block '" +
                                  settings.corrupt_block + "'");
  }

  const Vector frozen_coarse = trace.coarse_part;
  const Vector frozen_fine = trace.fine_part;
  auto objective = [&](const Vector& flat) {
    ModelParams probe = zero_params(cfg);
    unflatten(flat, probe);
    const HeadOutputs heads = detail::heads_with_frozen_gates(
        features, probe, cfg, frozen_coarse, frozen_fine);
    return total_loss(heads, coarse_label, fine_label, taxonomy, settings.loss)
        .breakdown.total;
  };
  const Vector fd = finite_diff_grad(objective, flatten(params), settings.step);
  const Vector an = flatten(analytic);

  std::vector<BlockReport> reports;
  std::size_t offset = 0;
  for (const auto& b : param_blocks(analytic)) {
    BlockReport report;
    report.name = b.name;
    for (std::size_t i = 0; i < b.size; ++i) {
      const double a = an[offset + i];
      const double f = fd[offset + i];
      const double denom =
          std::max({std::abs(a), std::abs(f), settings.magnitude_floor});
      report.max_rel_err = std::max(report.max_rel_err, std::abs(a - f) / denom);
    }
    report.pass = report.max_rel_err < settings.rel_tol;
    offset += b.size;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace hiclass
