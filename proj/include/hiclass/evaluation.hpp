#pragma once

// Both-level accuracy, macro-F1, confusion matrices and the hierarchical
// consistency rate. Confusion rows are true classes, columns predictions.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hiclass/data.hpp"
#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"

namespace hiclass {

using Confusion = std::vector<std::vector<std::int64_t>>;

struct PerClassMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalReport {
  std::size_t num_samples = 0;
  double acc_coarse = 0.0, f1_macro_coarse = 0.0;
  double acc_fine = 0.0, f1_macro_fine = 0.0;
  double consistency_rate = 0.0;
  Confusion confusion_coarse, confusion_fine;
  std::vector<PerClassMetrics> per_class_coarse, per_class_fine;
};

// Independent argmax at each level; ties break to the lowest index.
inline std::pair<std::size_t, std::size_t> predict(const ForwardTrace& trace) {
  return {argmax_index(trace.heads.logits_coarse),
          argmax_index(trace.heads.logits_fine)};
}

// Optional analysis mode: fine argmax restricted to the predicted coarse
// group. Never the default.
inline std::size_t predict_fine_restricted(const ForwardTrace& trace,
                                           std::size_t predicted_coarse,
                                           const Taxonomy& taxonomy) {
  std::size_t best = 0;
  bool first = true;
  for (std::size_t f = 0; f < taxonomy.num_fine(); ++f) {
    if (taxonomy.group_of(f) != predicted_coarse) continue;
    if (first || trace.heads.logits_fine[f] > trace.heads.logits_fine[best]) {
      best = f;
      first = false;
    }
  }
  if (first)
    throw std::logic_error("predict_fine_restricted: coarse class has no children");
  return best;
}

inline std::vector<PerClassMetrics> per_class_metrics(const Confusion& confusion) {
  const std::size_t n = confusion.size();
  std::vector<PerClassMetrics> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (confusion[i].size() != n)
      throw std::invalid_argument("per_class_metrics: confusion matrix not square");
    std::int64_t row_sum = 0, col_sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row_sum += confusion[i][j];
      col_sum += confusion[j][i];
    }
    const double tp = static_cast<double>(confusion[i][i]);
    out[i].precision = col_sum > 0 ? tp / static_cast<double>(col_sum) : 0.0;
    out[i].recall = row_sum > 0 ? tp / static_cast<double>(row_sum) : 0.0;
    const double pr = out[i].precision + out[i].recall;
    out[i].f1 = pr > 0.0 ? 2.0 * out[i].precision * out[i].recall / pr : 0.0;
  }
  return out;
}

// Unweighted mean of per-class F1, with F1 = 0 whenever precision + recall
// is 0 (classes never predicted and never seen count as 0).
inline double macro_f1(const Confusion& confusion) {
  if (confusion.empty()) throw std::invalid_argument("macro_f1: empty confusion");
  const auto per_class = per_class_metrics(confusion);
  double sum = 0.0;
  for (const auto& m : per_class) sum += m.f1;
  return sum / static_cast<double>(per_class.size());
}

inline double accuracy(const Confusion& confusion) {
  std::int64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    correct += confusion[i][i];
    for (std::int64_t v : confusion[i]) total += v;
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// Fraction of samples whose predicted fine class belongs to the predicted
// coarse group.
inline double consistency_rate(
    const std::vector<std::pair<std::size_t, std::size_t>>& predictions,
    const Taxonomy& taxonomy) {
  if (predictions.empty()) return 0.0;
  std::size_t consistent = 0;
  for (const auto& [coarse, fine] : predictions)
    if (taxonomy.group_of(fine) == coarse) ++consistent;
  return static_cast<double>(consistent) / static_cast<double>(predictions.size());
}

inline EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<Bag>& bags, const Taxonomy& taxonomy,
                           bool restricted_fine = false) {
  if (cfg.num_coarse != taxonomy.num_coarse() || cfg.num_fine != taxonomy.num_fine())
    throw std::invalid_argument("evaluate: model class counts do not match taxonomy");
  EvalReport report;
  report.confusion_coarse.assign(taxonomy.num_coarse(),
                                 std::vector<std::int64_t>(taxonomy.num_coarse(), 0));
  report.confusion_fine.assign(taxonomy.num_fine(),
                               std::vector<std::int64_t>(taxonomy.num_fine(), 0));
  std::vector<std::pair<std::size_t, std::size_t>> predictions;
  predictions.reserve(bags.size());
  for (const Bag& bag : bags) {
    const ForwardTrace trace = forward(bag, params, cfg);
    auto [pred_coarse, pred_fine] = predict(trace);
    if (restricted_fine)
      pred_fine = predict_fine_restricted(trace, pred_coarse, taxonomy);
    report.confusion_coarse[bag.coarse_label][pred_coarse]++;
    report.confusion_fine[bag.fine_label][pred_fine]++;
    predictions.emplace_back(pred_coarse, pred_fine);
  }
  report.num_samples = bags.size();
  report.acc_coarse = accuracy(report.confusion_coarse);
  report.acc_fine = accuracy(report.confusion_fine);
  report.per_class_coarse = per_class_metrics(report.confusion_coarse);
  report.per_class_fine = per_class_metrics(report.confusion_fine);
  report.f1_macro_coarse = macro_f1(report.confusion_coarse);
  report.f1_macro_fine = macro_f1(report.confusion_fine);
  report.consistency_rate = consistency_rate(predictions, taxonomy);
  return report;
}

inline EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                      const std::vector<Bag>& bags,
                                      const Taxonomy& taxonomy,
                                      bool restricted_fine = false) {
  const auto [cfg, params] = load_checkpoint(checkpoint);
  return evaluate(params, cfg, bags, taxonomy, restricted_fine);
}

inline nlohmann::json report_to_json(const EvalReport& report,
                                     const Taxonomy& taxonomy) {
  auto level = [](const Taxonomy& tax, bool coarse, const EvalReport& r) {
    const auto& per_class = coarse ? r.per_class_coarse : r.per_class_fine;
    const auto& confusion = coarse ? r.confusion_coarse : r.confusion_fine;
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t i = 0; i < per_class.size(); ++i) {
      classes.push_back({{"name", coarse ? tax.coarse_name(i) : tax.fine_name(i)},
                         {"precision", per_class[i].precision},
                         {"recall", per_class[i].recall},
                         {"f1", per_class[i].f1}});
    }
    return nlohmann::json{{"accuracy", coarse ? r.acc_coarse : r.acc_fine},
                          {"f1_macro", coarse ? r.f1_macro_coarse : r.f1_macro_fine},
                          {"per_class", classes},
                          {"confusion", confusion}};
  };
  return {{"num_samples", report.num_samples},
          {"coarse", level(taxonomy, true, report)},
          {"fine", level(taxonomy, false, report)},
          {"consistency_rate", report.consistency_rate}};
}

inline void write_confusion_csv(const Confusion& confusion,
                                const std::vector<std::string>& names,
                                const std::filesystem::path& path) {
  if (confusion.size() != names.size())
    throw std::invalid_argument("write_confusion_csv: name count mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "true\\pred";
  for (const auto& n : names) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    out << names[i];
    for (std::int64_t v : confusion[i]) out << "," << v;
    out << "\n";
  }
}

}  // namespace hiclass
