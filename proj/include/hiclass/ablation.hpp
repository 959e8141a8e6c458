#pragma once

// Experiment grid driver: two flat baselines, the three alternative
// integration modes with all extra losses on, and the full toggle lattice
// under bidirectional integration, 13 runs over one shared dataset and
// seed. Flat tasks reuse the hierarchical model with the unused level's CE
// weight set to 0 and the hierarchy losses disabled.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiclass/data.hpp"
#include "hiclass/evaluation.hpp"
#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"
#include "hiclass/trainer.hpp"

namespace hiclass {

enum class AblationTask { flat_coarse, flat_fine, hierarchical };

inline const char* to_string(AblationTask t) {
  switch (t) {
    case AblationTask::flat_coarse: return "flat_coarse";
    case AblationTask::flat_fine: return "flat_fine";
    case AblationTask::hierarchical: return "hierarchical";
  }
  throw std::logic_error("unreachable ablation task");
}

inline AblationTask ablation_task_from_string(const std::string& s) {
  if (s == "flat_coarse") return AblationTask::flat_coarse;
  if (s == "flat_fine") return AblationTask::flat_fine;
  if (s == "hierarchical") return AblationTask::hierarchical;
  throw std::invalid_argument("unknown ablation task '" + s + "'");
}

struct AblationRun {
  std::string run_id;
  AblationTask task = AblationTask::hierarchical;
  IntegrationMode integration = IntegrationMode::bidirectional;
  bool con = true, intra = true, gce = true;
  std::uint64_t seed = 1;
};

struct AblationPlan {
  std::vector<AblationRun> runs;

  void validate() const {
    std::set<std::string> ids;
    for (const auto& run : runs) {
      if (run.run_id.empty())
        throw std::invalid_argument("ablation plan: empty run_id");
      if (!ids.insert(run.run_id).second)
        throw std::invalid_argument("ablation plan: duplicate run_id '" +
                                    run.run_id + "'");
    }
  }
};

// 13 runs: 2 flat baselines, 3 integration variants with every extra loss
// on, and the 8 loss-toggle subsets under bidirectional integration.
inline AblationPlan build_default_plan(std::uint64_t seed) {
  AblationPlan plan;
  auto add = [&](std::string id, AblationTask task, IntegrationMode mode, bool con,
                 bool intra, bool gce) {
    plan.runs.push_back({std::move(id), task, mode, con, intra, gce, seed});
  };
  add("flat_coarse", AblationTask::flat_coarse, IntegrationMode::none, false, false,
      false);
  add("flat_fine", AblationTask::flat_fine, IntegrationMode::none, false, false,
      false);
  add("integration_none", AblationTask::hierarchical, IntegrationMode::none, true,
      true, true);
  add("fine_to_coarse", AblationTask::hierarchical, IntegrationMode::fine_to_coarse,
      true, true, true);
  add("coarse_to_fine", AblationTask::hierarchical, IntegrationMode::coarse_to_fine,
      true, true, true);
  add("bidir_xxx", AblationTask::hierarchical, IntegrationMode::bidirectional, false,
      false, false);
  add("bidir_oxx", AblationTask::hierarchical, IntegrationMode::bidirectional, true,
      false, false);
  add("bidir_xox", AblationTask::hierarchical, IntegrationMode::bidirectional, false,
      true, false);
  add("bidir_xxo", AblationTask::hierarchical, IntegrationMode::bidirectional, false,
      false, true);
  add("bidir_xoo", AblationTask::hierarchical, IntegrationMode::bidirectional, false,
      true, true);
  add("bidir_oxo", AblationTask::hierarchical, IntegrationMode::bidirectional, true,
      false, true);
  add("bidir_oox", AblationTask::hierarchical, IntegrationMode::bidirectional, true,
      true, false);
  add("bidir_ooo", AblationTask::hierarchical, IntegrationMode::bidirectional, true,
      true, true);
  return plan;
}

inline nlohmann::json plan_to_json(const AblationPlan& plan) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : plan.runs) {
    runs.push_back({{"run_id", run.run_id},
                    {"task", to_string(run.task)},
                    {"integration", to_string(run.integration)},
                    {"con", run.con},
                    {"int", run.intra},
                    {"gce", run.gce},
                    {"seed", run.seed}});
  }
  return {{"runs", runs}};
}

inline AblationPlan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("runs") || !j["runs"].is_array())
    throw std::invalid_argument("ablation plan: expected {\"runs\": [...]}");
  for (const auto& [key, value] : j.items())
    if (key != "runs")
      throw std::invalid_argument("ablation plan: unknown key '" + key + "'");
  AblationPlan plan;
  for (const auto& item : j["runs"]) {
    for (const auto& [key, value] : item.items())
      if (key != "run_id" && key != "task" && key != "integration" &&
          key != "con" && key != "int" && key != "gce" && key != "seed")
        throw std::invalid_argument("ablation plan: unknown run key '" + key + "'");
    AblationRun run;
    run.run_id = item.at("run_id").get<std::string>();
    run.task = ablation_task_from_string(item.at("task").get<std::string>());
    run.integration =
        integration_from_string(item.at("integration").get<std::string>());
    run.con = item.at("con").get<bool>();
    run.intra = item.at("int").get<bool>();
    run.gce = item.at("gce").get<bool>();
    run.seed = item.at("seed").get<std::uint64_t>();
    plan.runs.push_back(std::move(run));
  }
  plan.validate();
  return plan;
}

inline AblationPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open plan '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("plan parse error in '" + path.string() +
                                "': " + e.what());
  }
  return plan_from_json(j);
}

inline void save_plan(const AblationPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plan '" + path.string() + "'");
  out << plan_to_json(plan).dump(2) << "\n";
}

struct AblationResult {
  AblationRun run;
  bool ok = false;
  std::string error;
  EvalReport report;
};

// Model/loss/train configs for one run, derived from the shared bases.
inline void realize_run(const AblationRun& run, const ModelConfig& base_model,
                        const LossConfig& base_loss, const TrainConfig& base_train,
                        ModelConfig& model, LossConfig& loss, TrainConfig& train) {
  model = base_model;
  loss = base_loss;
  train = base_train;
  model.integration = run.integration;
  loss.enable_con = run.con;
  loss.enable_int = run.intra;
  loss.enable_gce = run.gce;
  loss.weight_ce_coarse = base_loss.weight_ce_coarse;
  loss.weight_ce_fine = base_loss.weight_ce_fine;
  if (run.task == AblationTask::flat_coarse) loss.weight_ce_fine = 0.0;
  if (run.task == AblationTask::flat_fine) loss.weight_ce_coarse = 0.0;
  train.seed = run.seed;
  // Flat runs have no meaningful fine-level validation signal, and the grid
  // wants one deterministic checkpoint per run, so take the final epoch.
  train.checkpoint_policy = CheckpointPolicy::last;
}

// Trains and evaluates every run on the shared dataset; a failed run is
// recorded and the rest continue. Results come back in plan order.
inline std::vector<AblationResult> run_plan(const AblationPlan& plan,
                                            const Dataset& dataset,
                                            const ModelConfig& base_model,
                                            const LossConfig& base_loss,
                                            const TrainConfig& base_train) {
  plan.validate();
  std::vector<AblationResult> results;
  for (const auto& run : plan.runs) {
    AblationResult result;
    result.run = run;
    try {
      ModelConfig model;
      LossConfig loss;
      TrainConfig train_cfg;
      realize_run(run, base_model, base_loss, base_train, model, loss, train_cfg);
      const TrainResult trained = train(dataset, model, loss, train_cfg);
      result.report =
          evaluate(trained.params, trained.config, dataset.test, dataset.taxonomy);
      result.ok = true;
    } catch (const std::exception& e) {
      result.ok = false;
      result.error = e.what();
    }
    results.push_back(std::move(result));
  }
  return results;
}

// One CSV row per run, shaped like the grid: flat rows mask the unused
// level's metrics with '-'.
inline void write_results_csv(const std::vector<AblationResult>& results,
                              const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write results '" + path.string() + "'");
  out << "run_id,task,integration,con,int,gce,coarse_acc,coarse_f1,fine_acc,fine_f1\n";
  char buf[64];
  auto metric = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& result : results) {
    const auto& run = result.run;
    const bool flat = run.task != AblationTask::hierarchical;
    out << run.run_id << "," << to_string(run.task) << ","
        << (flat ? "-" : to_string(run.integration)) << ","
        << (flat ? "-" : (run.con ? "O" : "X")) << ","
        << (flat ? "-" : (run.intra ? "O" : "X")) << ","
        << (flat ? "-" : (run.gce ? "O" : "X")) << ",";
    if (!result.ok) {
      out << "error,error,error,error\n";
      continue;
    }
    const bool show_coarse = run.task != AblationTask::flat_fine;
    const bool show_fine = run.task != AblationTask::flat_coarse;
    out << (show_coarse ? metric(result.report.acc_coarse) : "-") << ","
        << (show_coarse ? metric(result.report.f1_macro_coarse) : "-") << ","
        << (show_fine ? metric(result.report.acc_fine) : "-") << ","
        << (show_fine ? metric(result.report.f1_macro_fine) : "-") << "\n";
  }
}

}  // namespace hiclass
