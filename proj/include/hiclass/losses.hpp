#pragma once

// The four loss terms and their weighted sum. Every term returns its value
// together with gradient seeds w.r.t. the head tensors it touches; feature
// rows are softmax-normalized before any divergence so KL/JSD act on
// distributions. Argmax selections and the hinge are treated as constants /
// subgradient-0 at their non-smooth points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "hiclass/model.hpp"
#include "hiclass/numerics.hpp"
#include "hiclass/taxonomy.hpp"

namespace hiclass {

struct LossConfig {
  bool enable_con = true;
  bool enable_int = true;
  bool enable_gce = true;
  double alpha = 1.0;  // hinge margin of the intra/inter-class distance term
  double weight_ce_coarse = 1.0;
  double weight_ce_fine = 1.0;
  double weight_con = 1.0;
  double weight_int = 1.0;
  double weight_gce = 1.0;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw std::invalid_argument("loss config: alpha must be a finite nonnegative real");
    for (double w : {weight_ce_coarse, weight_ce_fine, weight_con, weight_int,
                     weight_gce})
      if (!(w >= 0.0) || !std::isfinite(w))
        throw std::invalid_argument("loss config: weights must be finite and >= 0");
  }
};

struct LossBreakdown {
  double ce_coarse = 0.0;
  double ce_fine = 0.0;
  double con = 0.0;
  double intra_inter = 0.0;
  double gce = 0.0;
  double total = 0.0;
};

inline std::size_t argmax_index(const Vector& v) {
  if (v.empty()) throw std::invalid_argument("argmax_index: empty vector");
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());  // ties -> lowest index
}

struct CeResult {
  double value = 0.0;
  Vector grad;  // w.r.t. the logits
};

// -log softmax(logits)[true_index]; gradient softmax(logits) - onehot.
inline CeResult ce_loss(const Vector& logits, std::size_t true_index) {
  if (true_index >= logits.size())
    throw std::out_of_range("ce_loss: class index out of range");
  CeResult r;
  r.value = log_sum_exp(logits) - logits[true_index];
  r.grad = softmax(logits);
  r.grad[true_index] -= 1.0;
  return r;
}

struct ConResult {
  double value = 0.0;
  std::size_t selected_coarse = 0, selected_fine = 0;
  Matrix d_class_feat_coarse, d_class_feat_fine;  // nonzero only in the selected rows
};

// JSD between the softmax-normalized feature rows of the argmax coarse and
// argmax fine classes. Row selection is non-differentiable and treated as a
// constant, so gradients reach only the two selected rows.
inline ConResult con_loss(const Matrix& class_feat_coarse,
                          const Matrix& class_feat_fine,
                          const Vector& logits_coarse, const Vector& logits_fine) {
  if (class_feat_coarse.rows() != logits_coarse.size() ||
      class_feat_fine.rows() != logits_fine.size() ||
      class_feat_coarse.cols() != class_feat_fine.cols())
    throw std::invalid_argument("con_loss: shape mismatch");
  ConResult r;
  r.selected_coarse = argmax_index(logits_coarse);
  r.selected_fine = argmax_index(logits_fine);
  const Vector p = softmax(class_feat_coarse.row(r.selected_coarse));
  const Vector q = softmax(class_feat_fine.row(r.selected_fine));
  r.value = jsd(p, q);

  const std::size_t width = p.size();
  Vector g_p(width), g_q(width);
  for (std::size_t j = 0; j < width; ++j) {
    const double m = std::max(0.5 * (p[j] + q[j]), kLogEps);
    g_p[j] = 0.5 * std::log(std::max(p[j], kLogEps) / m);
    g_q[j] = 0.5 * std::log(std::max(q[j], kLogEps) / m);
  }
  r.d_class_feat_coarse = Matrix(class_feat_coarse.rows(), width);
  r.d_class_feat_fine = Matrix(class_feat_fine.rows(), width);
  const Vector d_row_c = softmax_backward(p, g_p);
  const Vector d_row_f = softmax_backward(q, g_q);
  for (std::size_t j = 0; j < width; ++j) {
    r.d_class_feat_coarse(r.selected_coarse, j) = d_row_c[j];
    r.d_class_feat_fine(r.selected_fine, j) = d_row_f[j];
  }
  return r;
}

struct IntResult {
  double value = 0.0;
  Matrix d_class_feat_fine;  // w.r.t. all rows
};

// Attract: sum over same-group rows of KL(row_true || row_sibling).
// Repel: sum over other-group rows of max(0, alpha - KL(row_true || row)).
// Rows are softmax-normalized first; the hinge subgradient is 0 exactly at
// the kink.
inline IntResult int_loss(const Matrix& class_feat_fine, std::size_t true_fine,
                          const Taxonomy& taxonomy, double alpha) {
  if (class_feat_fine.rows() != taxonomy.num_fine())
    throw std::invalid_argument("int_loss: row count does not match taxonomy");
  if (true_fine >= taxonomy.num_fine())
    throw std::out_of_range("int_loss: fine index out of range");
  if (!(alpha >= 0.0))
    throw std::invalid_argument("int_loss: alpha must be nonnegative");

  const std::size_t num_fine = class_feat_fine.rows();
  const std::size_t width = class_feat_fine.cols();
  std::vector<Vector> prob(num_fine);
  for (std::size_t i = 0; i < num_fine; ++i)
    prob[i] = softmax(class_feat_fine.row(i));
  const Vector& p_true = prob[true_fine];

  // d(value)/d(prob row), accumulated over all terms before pulling back
  // through each row's softmax.
  std::vector<Vector> g(num_fine, Vector(width, 0.0));
  IntResult r;

  auto kl_against = [&](std::size_t other) {
    const Vector& p_other = prob[other];
    double kl = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double ratio =
          std::max(p_true[j], kLogEps) / std::max(p_other[j], kLogEps);
      kl += p_true[j] * std::log(ratio);
    }
    return kl;
  };
  // sign +1 accumulates the attract KL gradients, -1 the hinge's -KL side.
  auto add_grads = [&](std::size_t other, double sign) {
    const Vector& p_other = prob[other];
    for (std::size_t j = 0; j < width; ++j) {
      const double ratio =
          std::max(p_true[j], kLogEps) / std::max(p_other[j], kLogEps);
      g[true_fine][j] += sign * (std::log(ratio) + 1.0);
      g[other][j] += sign * (-p_true[j] / std::max(p_other[j], kLogEps));
    }
  };

  for (std::size_t sib : taxonomy.siblings_of(true_fine)) {
    if (sib == true_fine) continue;  // KL(row || itself) is identically 0
    r.value += kl_against(sib);
    add_grads(sib, +1.0);
  }
  for (std::size_t other : taxonomy.complement_of(true_fine)) {
    const double kl = kl_against(other);
    if (kl < alpha) {  // hinge active; at kl == alpha the subgradient is 0
      r.value += alpha - kl;
      add_grads(other, -1.0);
    }
  }

  r.d_class_feat_fine = Matrix(num_fine, width);
  for (std::size_t i = 0; i < num_fine; ++i) {
    const Vector d_row = softmax_backward(prob[i], g[i]);
    for (std::size_t j = 0; j < width; ++j) r.d_class_feat_fine(i, j) = d_row[j];
  }
  return r;
}

// Cross-entropy with the softmax restricted to the fine classes sharing the
// ground-truth coarse parent; gradient is zero outside that group and the
// loss equals plain ce_loss when the group covers every fine class.
inline CeResult gce_loss(const Vector& logits_fine, std::size_t true_fine,
                         const Taxonomy& taxonomy) {
  if (true_fine >= taxonomy.num_fine() || logits_fine.size() != taxonomy.num_fine())
    throw std::out_of_range("gce_loss: index/logit shape mismatch");
  const auto& group = taxonomy.siblings_of(true_fine);
  Vector restricted(group.size());
  for (std::size_t pos = 0; pos < group.size(); ++pos)
    restricted[pos] = logits_fine[group[pos]];
  CeResult r;
  r.value = log_sum_exp(restricted) - logits_fine[true_fine];
  r.grad = Vector(logits_fine.size(), 0.0);
  const Vector probs = softmax(restricted);
  for (std::size_t pos = 0; pos < group.size(); ++pos) {
    r.grad[group[pos]] = probs[pos];
    if (group[pos] == true_fine) r.grad[group[pos]] -= 1.0;
  }
  return r;
}

struct TotalLoss {
  LossBreakdown breakdown;
  LossSeeds seeds;
};

// Weighted sum of the enabled terms; disabled terms contribute neither
// value nor gradient. Cross-entropy is applied at both levels.
inline TotalLoss total_loss(const HeadOutputs& heads, std::size_t coarse_label,
                            std::size_t fine_label, const Taxonomy& taxonomy,
                            const LossConfig& lc) {
  lc.validate();
  if (heads.logits_coarse.size() != taxonomy.num_coarse() ||
      heads.logits_fine.size() != taxonomy.num_fine())
    throw std::invalid_argument("total_loss: head shapes do not match taxonomy");
  if (coarse_label >= taxonomy.num_coarse() || fine_label >= taxonomy.num_fine())
    throw std::out_of_range("total_loss: label out of range");
  if (taxonomy.group_of(fine_label) != coarse_label)
    throw std::invalid_argument("total_loss: coarse/fine label pair inconsistent");

  TotalLoss r;
  r.seeds.d_logits_coarse = Vector(heads.logits_coarse.size(), 0.0);
  r.seeds.d_logits_fine = Vector(heads.logits_fine.size(), 0.0);
  r.seeds.d_class_feat_coarse =
      Matrix(heads.class_feat_coarse.rows(), heads.class_feat_coarse.cols());
  r.seeds.d_class_feat_fine =
      Matrix(heads.class_feat_fine.rows(), heads.class_feat_fine.cols());

  const CeResult ce_c = ce_loss(heads.logits_coarse, coarse_label);
  r.breakdown.ce_coarse = ce_c.value;
  for (std::size_t i = 0; i < ce_c.grad.size(); ++i)
    r.seeds.d_logits_coarse[i] += lc.weight_ce_coarse * ce_c.grad[i];

  const CeResult ce_f = ce_loss(heads.logits_fine, fine_label);
  r.breakdown.ce_fine = ce_f.value;
  for (std::size_t i = 0; i < ce_f.grad.size(); ++i)
    r.seeds.d_logits_fine[i] += lc.weight_ce_fine * ce_f.grad[i];

  if (lc.enable_con) {
    const ConResult con = con_loss(heads.class_feat_coarse, heads.class_feat_fine,
                                   heads.logits_coarse, heads.logits_fine);
    r.breakdown.con = con.value;
    for (std::size_t i = 0; i < con.d_class_feat_coarse.size(); ++i)
      r.seeds.d_class_feat_coarse.data()[i] +=
          lc.weight_con * con.d_class_feat_coarse.data()[i];
    for (std::size_t i = 0; i < con.d_class_feat_fine.size(); ++i)
      r.seeds.d_class_feat_fine.data()[i] +=
          lc.weight_con * con.d_class_feat_fine.data()[i];
  }

  if (lc.enable_int) {
    const IntResult intr =
        int_loss(heads.class_feat_fine, fine_label, taxonomy, lc.alpha);
    r.breakdown.intra_inter = intr.value;
    for (std::size_t i = 0; i < intr.d_class_feat_fine.size(); ++i)
      r.seeds.d_class_feat_fine.data()[i] +=
          lc.weight_int * intr.d_class_feat_fine.data()[i];
  }

  if (lc.enable_gce) {
    const CeResult gce = gce_loss(heads.logits_fine, fine_label, taxonomy);
    r.breakdown.gce = gce.value;
    for (std::size_t i = 0; i < gce.grad.size(); ++i)
      r.seeds.d_logits_fine[i] += lc.weight_gce * gce.grad[i];
  }

  r.breakdown.total = lc.weight_ce_coarse * r.breakdown.ce_coarse +
                      lc.weight_ce_fine * r.breakdown.ce_fine +
                      lc.weight_con * r.breakdown.con +
                      lc.weight_int * r.breakdown.intra_inter +
                      lc.weight_gce * r.breakdown.gce;
  return r;
}

inline TotalLoss total_loss(const ForwardTrace& trace, std::size_t coarse_label,
                            std::size_t fine_label, const Taxonomy& taxonomy,
                            const LossConfig& lc) {
  return total_loss(trace.heads, coarse_label, fine_label, taxonomy, lc);
}

inline TotalLoss total_loss(const ForwardTrace& trace, const Bag& bag,
                            const Taxonomy& taxonomy, const LossConfig& lc) {
  return total_loss(trace.heads, bag.coarse_label, bag.fine_label, taxonomy, lc);
}

}  // namespace hiclass
