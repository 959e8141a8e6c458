#pragma once

// The network: patch projection, gated attention pooling (with max/mean
// variants), split of the slide vector into coarse/fine halves,
// cross-level feature integration behind a stop-gradient gate, per-class
// linear projection heads and per-class classifier readouts. backward() is
// the exact reverse-mode differential of forward(); the gated copies are
// identity in the forward pass and contribute nothing to gradients.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hiclass/data.hpp"
#include "hiclass/io.hpp"
#include "hiclass/numerics.hpp"
#include "hiclass/rng.hpp"

namespace hiclass {

enum class IntegrationMode { none, fine_to_coarse, coarse_to_fine, bidirectional };
enum class Aggregator { attention, max, mean };

inline const char* to_string(IntegrationMode m) {
  switch (m) {
    case IntegrationMode::none: return "none";
    case IntegrationMode::fine_to_coarse: return "fine_to_coarse";
    case IntegrationMode::coarse_to_fine: return "coarse_to_fine";
    case IntegrationMode::bidirectional: return "bidirectional";
  }
  throw std::logic_error("unreachable integration mode");
}

inline IntegrationMode integration_from_string(const std::string& s) {
  if (s == "none") return IntegrationMode::none;
  if (s == "fine_to_coarse") return IntegrationMode::fine_to_coarse;
  if (s == "coarse_to_fine") return IntegrationMode::coarse_to_fine;
  if (s == "bidirectional") return IntegrationMode::bidirectional;
  throw std::invalid_argument("unknown integration mode '" + s + "'");
}

inline const char* to_string(Aggregator a) {
  switch (a) {
    case Aggregator::attention: return "attention";
    case Aggregator::max: return "max";
    case Aggregator::mean: return "mean";
  }
  throw std::logic_error("unreachable aggregator");
}

inline Aggregator aggregator_from_string(const std::string& s) {
  if (s == "attention") return Aggregator::attention;
  if (s == "max") return Aggregator::max;
  if (s == "mean") return Aggregator::mean;
  throw std::invalid_argument("unknown aggregator '" + s + "'");
}

struct ModelConfig {
  std::size_t feature_dim = 1024;      // D, per-patch input width
  std::size_t aggregate_dim = 512;     // H, slide vector width (= 2 * split_dim)
  std::size_t split_dim = 256;         // S, width of each half
  std::size_t class_feature_dim = 256; // P, per-class projected width
  std::size_t attention_dim = 256;     // A, attention hidden width
  std::size_t num_coarse = 0;
  std::size_t num_fine = 0;
  IntegrationMode integration = IntegrationMode::bidirectional;
  Aggregator aggregator = Aggregator::attention;

  void validate() const {
    if (aggregate_dim != 2 * split_dim)
      throw std::invalid_argument("model config: aggregate_dim must equal 2 * split_dim");
    if (feature_dim < 1 || split_dim < 1 || class_feature_dim < 1 || attention_dim < 1)
      throw std::invalid_argument("model config: all dims must be >= 1");
    if (num_coarse < 1 || num_fine < 1)
      throw std::invalid_argument("model config: class counts must be >= 1");
  }

  // Head input widths follow the integration mode: an augmented branch reads
  // both halves, an unaugmented one just its own.
  std::size_t coarse_head_width() const {
    return (integration == IntegrationMode::bidirectional ||
            integration == IntegrationMode::fine_to_coarse)
               ? 2 * split_dim
               : split_dim;
  }
  std::size_t fine_head_width() const {
    return (integration == IntegrationMode::bidirectional ||
            integration == IntegrationMode::coarse_to_fine)
               ? 2 * split_dim
               : split_dim;
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  Matrix proj_w;        // H x D
  Vector proj_b;        // H
  Matrix attn_v;        // A x H
  Matrix attn_u;        // A x H
  Vector attn_w;        // A
  Matrix head_coarse_w; // (N_c * P) x coarse_head_width
  Vector head_coarse_b; // N_c * P
  Matrix head_fine_w;   // (N_f * P) x fine_head_width
  Vector head_fine_b;   // N_f * P
  Matrix clf_coarse_w;  // N_c x P, one readout vector per class
  Vector clf_coarse_b;  // N_c
  Matrix clf_fine_w;    // N_f x P
  Vector clf_fine_b;    // N_f

  bool operator==(const ModelParams&) const = default;
};

struct ParamBlockView {
  std::string name;
  double* data;
  std::size_t size;
};

struct ConstParamBlockView {
  std::string name;
  const double* data;
  std::size_t size;
};

// Fixed block order; also the tensor order of the checkpoint format.
inline std::vector<ParamBlockView> param_blocks(ModelParams& p) {
  return {
      {"proj_w", p.proj_w.data().data(), p.proj_w.size()},
      {"proj_b", p.proj_b.data(), p.proj_b.size()},
      {"attn_v", p.attn_v.data().data(), p.attn_v.size()},
      {"attn_u", p.attn_u.data().data(), p.attn_u.size()},
      {"attn_w", p.attn_w.data(), p.attn_w.size()},
      {"head_coarse_w", p.head_coarse_w.data().data(), p.head_coarse_w.size()},
      {"head_coarse_b", p.head_coarse_b.data(), p.head_coarse_b.size()},
      {"head_fine_w", p.head_fine_w.data().data(), p.head_fine_w.size()},
      {"head_fine_b", p.head_fine_b.data(), p.head_fine_b.size()},
      {"clf_coarse_w", p.clf_coarse_w.data().data(), p.clf_coarse_w.size()},
      {"clf_coarse_b", p.clf_coarse_b.data(), p.clf_coarse_b.size()},
      {"clf_fine_w", p.clf_fine_w.data().data(), p.clf_fine_w.size()},
      {"clf_fine_b", p.clf_fine_b.data(), p.clf_fine_b.size()},
  };
}

inline std::vector<ConstParamBlockView> param_blocks(const ModelParams& p) {
  std::vector<ConstParamBlockView> out;
  for (const auto& b : param_blocks(const_cast<ModelParams&>(p)))
    out.push_back({b.name, b.data, b.size});
  return out;
}

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& b : param_blocks(p)) n += b.size;
  return n;
}

inline Vector flatten(const ModelParams& p) {
  Vector out;
  out.reserve(param_count(p));
  for (const auto& b : param_blocks(p)) out.insert(out.end(), b.data, b.data + b.size);
  return out;
}

inline void unflatten(const Vector& flat, ModelParams& p) {
  std::size_t offset = 0;
  for (auto& b : param_blocks(p)) {
    if (offset + b.size > flat.size())
      throw std::invalid_argument("unflatten: vector shorter than parameter count");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + b.size), b.data);
    offset += b.size;
  }
  if (offset != flat.size())
    throw std::invalid_argument("unflatten: vector longer than parameter count");
}

inline ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.proj_w = Matrix(cfg.aggregate_dim, cfg.feature_dim);
  p.proj_b = Vector(cfg.aggregate_dim, 0.0);
  p.attn_v = Matrix(cfg.attention_dim, cfg.aggregate_dim);
  p.attn_u = Matrix(cfg.attention_dim, cfg.aggregate_dim);
  p.attn_w = Vector(cfg.attention_dim, 0.0);
  p.head_coarse_w = Matrix(cfg.num_coarse * cfg.class_feature_dim, cfg.coarse_head_width());
  p.head_coarse_b = Vector(cfg.num_coarse * cfg.class_feature_dim, 0.0);
  p.head_fine_w = Matrix(cfg.num_fine * cfg.class_feature_dim, cfg.fine_head_width());
  p.head_fine_b = Vector(cfg.num_fine * cfg.class_feature_dim, 0.0);
  p.clf_coarse_w = Matrix(cfg.num_coarse, cfg.class_feature_dim);
  p.clf_coarse_b = Vector(cfg.num_coarse, 0.0);
  p.clf_fine_w = Matrix(cfg.num_fine, cfg.class_feature_dim);
  p.clf_fine_b = Vector(cfg.num_fine, 0.0);
  return p;
}

// Weights ~ uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zero_params(cfg);
  Rng rng(seed);
  auto fill = [&rng](Matrix& m, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : m.data()) x = dist(rng);
  };
  auto fill_vec = [&rng](Vector& v, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : v) x = dist(rng);
  };
  fill(p.proj_w, cfg.feature_dim);
  fill(p.attn_v, cfg.aggregate_dim);
  fill(p.attn_u, cfg.aggregate_dim);
  fill_vec(p.attn_w, cfg.attention_dim);
  fill(p.head_coarse_w, cfg.coarse_head_width());
  fill(p.head_fine_w, cfg.fine_head_width());
  fill(p.clf_coarse_w, cfg.class_feature_dim);
  fill(p.clf_fine_w, cfg.class_feature_dim);
  return p;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct PoolTrace {
  Matrix pre_act;   // n x H, before relu
  Matrix hidden;    // n x H
  Matrix gate_tanh; // n x A (attention aggregator only)
  Matrix gate_sig;  // n x A
  Vector attn_logits;            // n
  Vector attn_weights;           // n, sums to 1
  Vector slide;                  // H
  std::vector<std::size_t> max_source;  // per-dim argmax row (max aggregator)
};

// h_k = relu(W x_k + b); attention logit e_k = w^T (tanh(V h_k) * sig(U h_k));
// slide = sum_k softmax(e)_k h_k. Max/mean variants replace the weighted sum
// with the elementwise max/mean of h_k and report uniform weights.
inline PoolTrace attention_pool(const Matrix& features, const ModelParams& params,
                                const ModelConfig& cfg) {
  const std::size_t n = features.rows();
  const std::size_t dim = cfg.feature_dim;
  const std::size_t agg = cfg.aggregate_dim;
  const std::size_t att = cfg.attention_dim;
  if (n < 1) throw std::invalid_argument("attention_pool: empty bag");
  if (features.cols() != dim)
    throw std::invalid_argument("attention_pool: feature dim mismatch");

  PoolTrace t;
  t.pre_act = Matrix(n, agg);
  t.hidden = Matrix(n, agg);
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = features.row(k);
    for (std::size_t j = 0; j < agg; ++j) {
      double z = params.proj_b[j];
      const auto w = params.proj_w.row(j);
      for (std::size_t d = 0; d < dim; ++d) z += w[d] * x[d];
      t.pre_act(k, j) = z;
      t.hidden(k, j) = z > 0.0 ? z : 0.0;
    }
  }

  t.slide = Vector(agg, 0.0);
  switch (cfg.aggregator) {
    case Aggregator::attention: {
      t.gate_tanh = Matrix(n, att);
      t.gate_sig = Matrix(n, att);
      t.attn_logits = Vector(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto h = t.hidden.row(k);
        double logit = 0.0;
        for (std::size_t a = 0; a < att; ++a) {
          double tv = 0.0, sv = 0.0;
          const auto vr = params.attn_v.row(a);
          const auto ur = params.attn_u.row(a);
          for (std::size_t j = 0; j < agg; ++j) {
            tv += vr[j] * h[j];
            sv += ur[j] * h[j];
          }
          t.gate_tanh(k, a) = std::tanh(tv);
          t.gate_sig(k, a) = sigmoid(sv);
          logit += params.attn_w[a] * t.gate_tanh(k, a) * t.gate_sig(k, a);
        }
        t.attn_logits[k] = logit;
      }
      t.attn_weights = softmax(t.attn_logits);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < agg; ++j)
          t.slide[j] += t.attn_weights[k] * t.hidden(k, j);
      break;
    }
    case Aggregator::mean: {
      t.attn_weights = Vector(n, 1.0 / static_cast<double>(n));
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < agg; ++j) t.slide[j] += t.hidden(k, j);
      for (double& x : t.slide) x /= static_cast<double>(n);
      break;
    }
    case Aggregator::max: {
      t.attn_weights = Vector(n, 1.0 / static_cast<double>(n));
      t.max_source.assign(agg, 0);
      for (std::size_t j = 0; j < agg; ++j) {
        double best = t.hidden(0, j);
        std::size_t best_k = 0;
        for (std::size_t k = 1; k < n; ++k) {
          if (t.hidden(k, j) > best) {
            best = t.hidden(k, j);
            best_k = k;
          }
        }
        t.slide[j] = best;
        t.max_source[j] = best_k;
      }
      break;
    }
  }
  return t;
}

// First half of the slide vector is the coarse part, second half the fine
// part.
inline std::pair<Vector, Vector> split_slide(const Vector& slide,
                                             const ModelConfig& cfg) {
  if (slide.size() != cfg.aggregate_dim)
    throw std::invalid_argument("split_slide: slide width mismatch");
  const std::size_t s = cfg.split_dim;
  return {Vector(slide.begin(), slide.begin() + static_cast<std::ptrdiff_t>(s)),
          Vector(slide.begin() + static_cast<std::ptrdiff_t>(s), slide.end())};
}

// Augments each half with a copy of the other according to the mode. Values
// are copied exactly; the gate exists only in the backward pass, where the
// copied half receives no gradient.
inline std::pair<Vector, Vector> integrate(const Vector& coarse_part,
                                           const Vector& fine_part,
                                           IntegrationMode mode) {
  if (coarse_part.size() != fine_part.size())
    throw std::invalid_argument("integrate: halves must have equal width");
  auto concat = [](const Vector& a, const Vector& b) {
    Vector out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  switch (mode) {
    case IntegrationMode::none:
      return {coarse_part, fine_part};
    case IntegrationMode::fine_to_coarse:
      return {concat(coarse_part, fine_part), fine_part};
    case IntegrationMode::coarse_to_fine:
      return {coarse_part, concat(fine_part, coarse_part)};
    case IntegrationMode::bidirectional:
      return {concat(coarse_part, fine_part), concat(fine_part, coarse_part)};
  }
  throw std::logic_error("unreachable integration mode");
}

struct HeadOutputs {
  Matrix class_feat_coarse;  // N_c x P
  Matrix class_feat_fine;    // N_f x P
  Vector logits_coarse;      // N_c
  Vector logits_fine;        // N_f
};

// Linear projection into one feature row per class, then a per-class dot
// product readout: each class's logit reads only its own row.
inline HeadOutputs project_and_classify(const Vector& coarse_aug,
                                        const Vector& fine_aug,
                                        const ModelParams& params,
                                        const ModelConfig& cfg) {
  if (coarse_aug.size() != cfg.coarse_head_width() ||
      fine_aug.size() != cfg.fine_head_width())
    throw std::invalid_argument("project_and_classify: head input width mismatch");
  const std::size_t p_dim = cfg.class_feature_dim;
  HeadOutputs out;
  auto project = [&](const Matrix& w, const Vector& b, const Vector& in,
                     std::size_t classes) {
    Matrix f(classes, p_dim);
    for (std::size_t i = 0; i < classes * p_dim; ++i) {
      double v = b[i];
      const auto row = w.row(i);
      for (std::size_t j = 0; j < in.size(); ++j) v += row[j] * in[j];
      f.data()[i] = v;
    }
    return f;
  };
  out.class_feat_coarse = project(params.head_coarse_w, params.head_coarse_b,
                                  coarse_aug, cfg.num_coarse);
  out.class_feat_fine =
      project(params.head_fine_w, params.head_fine_b, fine_aug, cfg.num_fine);
  auto classify = [&](const Matrix& f, const Matrix& w, const Vector& b) {
    Vector o(f.rows());
    for (std::size_t i = 0; i < f.rows(); ++i) {
      double v = b[i];
      const auto fr = f.row(i);
      const auto wr = w.row(i);
      for (std::size_t q = 0; q < p_dim; ++q) v += wr[q] * fr[q];
      o[i] = v;
    }
    return o;
  };
  out.logits_coarse = classify(out.class_feat_coarse, params.clf_coarse_w,
                               params.clf_coarse_b);
  out.logits_fine = classify(out.class_feat_fine, params.clf_fine_w,
                             params.clf_fine_b);
  return out;
}

struct ForwardTrace {
  ModelConfig config;
  Matrix features;  // input copy, kept for the backward pass
  PoolTrace pool;
  Vector coarse_part, fine_part;  // split halves
  Vector coarse_aug, fine_aug;    // head inputs after integration
  HeadOutputs heads;
};

inline ForwardTrace forward(const Matrix& features, const ModelParams& params,
                            const ModelConfig& cfg) {
  cfg.validate();
  ForwardTrace t;
  t.config = cfg;
  t.features = features;
  t.pool = attention_pool(features, params, cfg);
  std::tie(t.coarse_part, t.fine_part) = split_slide(t.pool.slide, cfg);
  std::tie(t.coarse_aug, t.fine_aug) =
      integrate(t.coarse_part, t.fine_part, cfg.integration);
  t.heads = project_and_classify(t.coarse_aug, t.fine_aug, params, cfg);
  return t;
}

inline ForwardTrace forward(const Bag& bag, const ModelParams& params,
                            const ModelConfig& cfg) {
  if (bag.features.cols() != cfg.feature_dim)
    throw std::invalid_argument("forward: bag '" + bag.slide_id +
                                "' feature dim does not match model config");
  return forward(bag.features, params, cfg);
}

// Gradient seeds flowing into the head outputs. Losses attach both to the
// logits and directly to the per-class feature rows.
struct LossSeeds {
  Vector d_logits_coarse;     // N_c
  Vector d_logits_fine;       // N_f
  Matrix d_class_feat_coarse; // N_c x P
  Matrix d_class_feat_fine;   // N_f x P
};

inline LossSeeds zero_seeds(const ModelConfig& cfg) {
  LossSeeds s;
  s.d_logits_coarse = Vector(cfg.num_coarse, 0.0);
  s.d_logits_fine = Vector(cfg.num_fine, 0.0);
  s.d_class_feat_coarse = Matrix(cfg.num_coarse, cfg.class_feature_dim);
  s.d_class_feat_fine = Matrix(cfg.num_fine, cfg.class_feature_dim);
  return s;
}

// Exact reverse accumulation through the forward graph. The copies inserted
// by integrate() are dropped here: only each branch's own first half
// propagates to the slide vector.
inline ModelParams backward(const ForwardTrace& t, const LossSeeds& seeds,
                            const ModelParams& params) {
  const ModelConfig& cfg = t.config;
  const std::size_t n = t.features.rows();
  const std::size_t dim = cfg.feature_dim;
  const std::size_t agg = cfg.aggregate_dim;
  const std::size_t att = cfg.attention_dim;
  const std::size_t s_dim = cfg.split_dim;
  const std::size_t p_dim = cfg.class_feature_dim;
  if (seeds.d_logits_coarse.size() != cfg.num_coarse ||
      seeds.d_logits_fine.size() != cfg.num_fine ||
      seeds.d_class_feat_coarse.rows() != cfg.num_coarse ||
      seeds.d_class_feat_coarse.cols() != p_dim ||
      seeds.d_class_feat_fine.rows() != cfg.num_fine ||
      seeds.d_class_feat_fine.cols() != p_dim)
    throw std::invalid_argument("backward: seed shape mismatch");

  ModelParams g = zero_params(cfg);

  // Classifier readouts; per-class feature gradients accumulate on top of
  // the direct seeds.
  Matrix d_feat_coarse = seeds.d_class_feat_coarse;
  Matrix d_feat_fine = seeds.d_class_feat_fine;
  for (std::size_t i = 0; i < cfg.num_coarse; ++i) {
    const double go = seeds.d_logits_coarse[i];
    g.clf_coarse_b[i] = go;
    for (std::size_t q = 0; q < p_dim; ++q) {
      g.clf_coarse_w(i, q) = go * t.heads.class_feat_coarse(i, q);
      d_feat_coarse(i, q) += go * params.clf_coarse_w(i, q);
    }
  }
  for (std::size_t i = 0; i < cfg.num_fine; ++i) {
    const double go = seeds.d_logits_fine[i];
    g.clf_fine_b[i] = go;
    for (std::size_t q = 0; q < p_dim; ++q) {
      g.clf_fine_w(i, q) = go * t.heads.class_feat_fine(i, q);
      d_feat_fine(i, q) += go * params.clf_fine_w(i, q);
    }
  }

  // Projection heads.
  Vector d_coarse_aug(t.coarse_aug.size(), 0.0);
  Vector d_fine_aug(t.fine_aug.size(), 0.0);
  auto head_backward = [](const Matrix& d_feat, const Vector& input,
                          const Matrix& w, Matrix& g_w, Vector& g_b,
                          Vector& d_input) {
    for (std::size_t i = 0; i < d_feat.size(); ++i) {
      const double gf = d_feat.data()[i];
      g_b[i] = gf;
      const auto wr = w.row(i);
      auto gr = g_w.row(i);
      for (std::size_t j = 0; j < input.size(); ++j) {
        gr[j] = gf * input[j];
        d_input[j] += gf * wr[j];
      }
    }
  };
  head_backward(d_feat_coarse, t.coarse_aug, params.head_coarse_w, g.head_coarse_w,
                g.head_coarse_b, d_coarse_aug);
  head_backward(d_feat_fine, t.fine_aug, params.head_fine_w, g.head_fine_w,
                g.head_fine_b, d_fine_aug);

  // Integration backward. In every mode the first S entries of a head input
  // are the branch's own half; any gated copy sits in [S, 2S) and is
  // dropped here.
  Vector d_slide(agg, 0.0);
  for (std::size_t j = 0; j < s_dim; ++j) d_slide[j] += d_coarse_aug[j];
  for (std::size_t j = 0; j < s_dim; ++j) d_slide[s_dim + j] += d_fine_aug[j];

  // Aggregator backward.
  Matrix d_hidden(n, agg);
  switch (cfg.aggregator) {
    case Aggregator::attention: {
      Vector d_weight(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        double v = 0.0;
        for (std::size_t j = 0; j < agg; ++j) v += t.pool.hidden(k, j) * d_slide[j];
        d_weight[k] = v;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += t.pool.attn_weights[k] * d_weight[k];
      for (std::size_t k = 0; k < n; ++k) {
        const double d_logit = t.pool.attn_weights[k] * (d_weight[k] - dot);
        const auto h = t.pool.hidden.row(k);
        for (std::size_t a = 0; a < att; ++a) {
          const double tk = t.pool.gate_tanh(k, a);
          const double sk = t.pool.gate_sig(k, a);
          g.attn_w[a] += d_logit * tk * sk;
          const double d_gate = d_logit * params.attn_w[a];
          const double d_pre_t = d_gate * sk * (1.0 - tk * tk);
          const double d_pre_s = d_gate * tk * sk * (1.0 - sk);
          const auto vr = params.attn_v.row(a);
          const auto ur = params.attn_u.row(a);
          auto gv = g.attn_v.row(a);
          auto gu = g.attn_u.row(a);
          for (std::size_t j = 0; j < agg; ++j) {
            gv[j] += d_pre_t * h[j];
            gu[j] += d_pre_s * h[j];
            d_hidden(k, j) += d_pre_t * vr[j] + d_pre_s * ur[j];
          }
        }
        for (std::size_t j = 0; j < agg; ++j)
          d_hidden(k, j) += t.pool.attn_weights[k] * d_slide[j];
      }
      break;
    }
    case Aggregator::mean: {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < agg; ++j) d_hidden(k, j) = d_slide[j] * inv_n;
      break;
    }
    case Aggregator::max: {
      for (std::size_t j = 0; j < agg; ++j)
        d_hidden(t.pool.max_source[j], j) += d_slide[j];
      break;
    }
  }

  // Patch projection (relu subgradient 0 at exactly 0).
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = t.features.row(k);
    for (std::size_t j = 0; j < agg; ++j) {
      if (t.pool.pre_act(k, j) <= 0.0) continue;
      const double dz = d_hidden(k, j);
      if (dz == 0.0) continue;
      g.proj_b[j] += dz;
      auto gw = g.proj_w.row(j);
      for (std::size_t d = 0; d < dim; ++d) gw[d] += dz * x[d];
    }
  }
  return g;
}

// ---- checkpoint format -----------------------------------------------------

inline constexpr std::array<char, 4> kCheckpointMagic = {'H', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// "HCKP", version, then the config as nine u32 fields (D, H, S, P, A, N_c,
// N_f, integration, aggregator), then every parameter block in
// param_blocks() order as little-endian f64.
inline void save_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                            const std::filesystem::path& path) {
  cfg.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  write_raw(out, kCheckpointMagic.data(), kCheckpointMagic.size());
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(cfg.feature_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.aggregate_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.split_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.class_feature_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.attention_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_coarse));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_fine));
  write_u32(out, static_cast<std::uint32_t>(cfg.integration));
  write_u32(out, static_cast<std::uint32_t>(cfg.aggregator));
  for (const auto& b : param_blocks(params))
    for (std::size_t i = 0; i < b.size; ++i) write_f64(out, b.data[i]);
}

inline std::pair<ModelConfig, ModelParams> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  const std::string where = "checkpoint '" + path.string() + "'";
  std::array<char, 4> magic{};
  read_raw(in, magic.data(), magic.size(), where + " magic");
  if (magic != kCheckpointMagic) throw std::runtime_error(where + ": bad magic");
  const std::uint32_t version = read_u32(in, where + " version");
  if (version != kCheckpointVersion)
    throw std::runtime_error(where + ": unsupported version " + std::to_string(version));
  ModelConfig cfg;
  cfg.feature_dim = read_u32(in, where + " feature_dim");
  cfg.aggregate_dim = read_u32(in, where + " aggregate_dim");
  cfg.split_dim = read_u32(in, where + " split_dim");
  cfg.class_feature_dim = read_u32(in, where + " class_feature_dim");
  cfg.attention_dim = read_u32(in, where + " attention_dim");
  cfg.num_coarse = read_u32(in, where + " num_coarse");
  cfg.num_fine = read_u32(in, where + " num_fine");
  const std::uint32_t mode = read_u32(in, where + " integration mode");
  if (mode > 3) throw std::runtime_error(where + ": invalid integration mode");
  cfg.integration = static_cast<IntegrationMode>(mode);
  const std::uint32_t agg = read_u32(in, where + " aggregator");
  if (agg > 2) throw std::runtime_error(where + ": invalid aggregator");
  cfg.aggregator = static_cast<Aggregator>(agg);
  cfg.validate();
  ModelParams params = zero_params(cfg);
  for (auto& b : param_blocks(params))
    for (std::size_t i = 0; i < b.size; ++i) {
      b.data[i] = read_f64(in, where + " tensor " + b.name);
      if (!std::isfinite(b.data[i]))
        throw std::runtime_error(where + ": non-finite parameter in " + b.name);
    }
  expect_eof(in, where);
  return {cfg, params};
}

}  // namespace hiclass
