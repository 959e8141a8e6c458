// Command-line front end: gen / train / eval / ablate / gradcheck.
// Exit codes: 0 success, 1 usage or config error, 2 runtime error.
// Diagnostics go to stderr; data artifacts go to files only.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hiclass/hiclass.hpp"

namespace fs = std::filesystem;

namespace {

// Distinguishes bad input (exit 1) from failures while running (exit 2).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

fs::path require_output_dir(const hiclass::RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (cfg.output_dir) return *cfg.output_dir;
  throw ConfigError("no output directory: pass --out or set 'output_dir' in the config");
}

struct GenArgs {
  std::string config;
  std::string out;
};

int run_gen(const GenArgs& args) {
  hiclass::RunConfig cfg;
  try {
    cfg = hiclass::RunConfig::load(args.config);
    if (!cfg.dataset)
      throw ConfigError("config has no 'dataset' section (and 'taxonomy' path)");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path out = require_output_dir(cfg, args.out);
  const auto manifest = hiclass::generate_dataset(*cfg.dataset, out);
  std::cerr << "gen: wrote " << manifest.size() << " bags to " << out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::size_t epochs_override = 0;
};

int run_train(const TrainArgs& args) {
  hiclass::ModelConfig model_cfg;
  hiclass::LossConfig loss_cfg;
  hiclass::TrainConfig train_cfg;
  fs::path out;
  try {
    hiclass::RunConfig cfg;
    if (!args.config.empty()) cfg = hiclass::RunConfig::load(args.config);
    model_cfg = cfg.model.value_or(model_cfg);
    loss_cfg = cfg.loss.value_or(loss_cfg);
    train_cfg = cfg.train.value_or(train_cfg);
    if (args.epochs_override > 0) train_cfg.epochs = args.epochs_override;
    train_cfg.validate();
    loss_cfg.validate();
    out = require_output_dir(cfg, args.out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const hiclass::Dataset dataset = hiclass::load_dataset(args.data);
  std::error_code ec;
  fs::create_directories(out, ec);
  const hiclass::TrainResult result =
      hiclass::train(dataset, model_cfg, loss_cfg, train_cfg, &out);
  hiclass::save_checkpoint(result.config, result.params, out / "checkpoint.bin");
  hiclass::write_train_log_csv(result.log, out / "train_log.csv");
  std::cerr << "train: " << result.total_steps << " steps over "
            << result.log.size() << " epochs; selected epoch "
            << result.selected_epoch << "; wrote " << (out / "checkpoint.bin")
            << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out;
  bool restricted = false;
};

int run_eval(const EvalArgs& args) {
  hiclass::Split split;
  try {
    split = hiclass::split_from_string(args.split);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!fs::exists(args.checkpoint))
    throw ConfigError("checkpoint not found: '" + args.checkpoint + "'");
  const hiclass::Dataset dataset = hiclass::load_dataset(args.data);
  const hiclass::EvalReport report = hiclass::evaluate_checkpoint(
      args.checkpoint, dataset.split(split), dataset.taxonomy, args.restricted);
  const fs::path out = args.out.empty() ? fs::path(".") : fs::path(args.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  {
    std::ofstream f(out / "report.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write report.json");
    f << hiclass::report_to_json(report, dataset.taxonomy).dump(2) << "\n";
  }
  std::vector<std::string> coarse_names, fine_names;
  for (std::size_t i = 0; i < dataset.taxonomy.num_coarse(); ++i)
    coarse_names.push_back(dataset.taxonomy.coarse_name(i));
  for (std::size_t i = 0; i < dataset.taxonomy.num_fine(); ++i)
    fine_names.push_back(dataset.taxonomy.fine_name(i));
  hiclass::write_confusion_csv(report.confusion_coarse, coarse_names,
                               out / "confusion_coarse.csv");
  hiclass::write_confusion_csv(report.confusion_fine, fine_names,
                               out / "confusion_fine.csv");
  std::cerr << "eval: " << report.num_samples << " bags; coarse acc "
            << report.acc_coarse << ", fine acc " << report.acc_fine
            << ", consistency " << report.consistency_rate << "\n";
  return 0;
}

struct AblateArgs {
  std::string plan;
  bool default_plan = false;
  std::string data;
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
};

int run_ablate(const AblateArgs& args) {
  hiclass::AblationPlan plan;
  hiclass::ModelConfig model_cfg;
  hiclass::LossConfig loss_cfg;
  hiclass::TrainConfig train_cfg;
  fs::path out;
  try {
    if (args.default_plan && !args.plan.empty())
      throw ConfigError("pass exactly one of --plan or --default-plan");
    if (!args.default_plan && args.plan.empty())
      throw ConfigError("pass exactly one of --plan or --default-plan");
    plan = args.default_plan ? hiclass::build_default_plan(args.seed)
                             : hiclass::load_plan(args.plan);
    hiclass::RunConfig cfg;
    if (!args.config.empty()) cfg = hiclass::RunConfig::load(args.config);
    model_cfg = cfg.model.value_or(model_cfg);
    loss_cfg = cfg.loss.value_or(loss_cfg);
    train_cfg = cfg.train.value_or(train_cfg);
    out = args.out.empty()
              ? (cfg.output_dir ? *cfg.output_dir : fs::path("."))
              : fs::path(args.out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const hiclass::Dataset dataset = hiclass::load_dataset(args.data);
  const auto results =
      hiclass::run_plan(plan, dataset, model_cfg, loss_cfg, train_cfg);
  std::error_code ec;
  fs::create_directories(out, ec);
  hiclass::write_results_csv(results, out / "ablation_results.csv");
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++failed;
      std::cerr << "ablate: run '" << r.run.run_id << "' failed: " << r.error << "\n";
    }
  }
  std::cerr << "ablate: " << results.size() << " runs (" << failed
            << " failed); wrote " << (out / "ablation_results.csv") << "\n";
  return failed == 0 ? 0 : 2;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string dims = "8,8,4,4,4,2,4,3";  // D,H,S,P,A,Nc,Nf,Np
  std::string mode = "bidirectional";
  std::string aggregator = "attention";
  std::string corrupt;
};

int run_gradcheck_cmd(const GradcheckArgs& args) {
  hiclass::GradCheckSettings settings;
  std::size_t num_coarse = 0, num_fine = 0;
  try {
    std::vector<std::size_t> dims;
    std::stringstream ss(args.dims);
    std::string tok;
    while (std::getline(ss, tok, ',')) dims.push_back(std::stoul(tok));
    if (dims.size() != 8)
      throw ConfigError("--dims wants 8 comma-separated values: D,H,S,P,A,Nc,Nf,Np");
    settings.model.feature_dim = dims[0];
    settings.model.aggregate_dim = dims[1];
    settings.model.split_dim = dims[2];
    settings.model.class_feature_dim = dims[3];
    settings.model.attention_dim = dims[4];
    num_coarse = dims[5];
    num_fine = dims[6];
    settings.n_patches = dims[7];
    settings.model.integration = hiclass::integration_from_string(args.mode);
    settings.model.aggregator = hiclass::aggregator_from_string(args.aggregator);
    settings.model.num_coarse = num_coarse;
    settings.model.num_fine = num_fine;
    settings.model.validate();
    if (settings.n_patches < 1) throw ConfigError("--dims: Np must be >= 1");
    settings.seed = args.seed;
    settings.corrupt_block = args.corrupt;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const hiclass::Taxonomy taxonomy =
      hiclass::make_uniform_taxonomy(num_coarse, num_fine);
  const auto reports = hiclass::run_gradcheck(settings, taxonomy);
  bool all_pass = true;
  for (const auto& r : reports) {
    std::printf("%s %-14s max_rel_err=%.3e\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_err);
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical multiple-instance classification pipeline"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", gen_args.config, "Run config JSON")->required();
  gen->add_option("--out", gen_args.out, "Output directory (overrides config)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  train->add_option("--config", train_args.config, "Run config JSON");
  train->add_option("--data", train_args.data, "Dataset directory")->required();
  train->add_option("--out", train_args.out, "Output directory (overrides config)");
  train->add_option("--epochs", train_args.epochs_override,
                    "Override the configured epoch count");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "Dataset directory")->required();
  eval->add_option("--split", eval_args.split, "train|val|test (default test)");
  eval->add_option("--out", eval_args.out, "Output directory (default .)");
  eval->add_flag("--restricted", eval_args.restricted,
                 "Restrict fine argmax to the predicted coarse group");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Run an experiment grid");
  ablate->add_option("--plan", ablate_args.plan, "Plan JSON file");
  ablate->add_flag("--default-plan", ablate_args.default_plan,
                   "Use the built-in 13-run grid");
  ablate->add_option("--data", ablate_args.data, "Dataset directory")->required();
  ablate->add_option("--config", ablate_args.config,
                     "Run config JSON with base model/loss/train sections");
  ablate->add_option("--out", ablate_args.out, "Output directory (default .)");
  ablate->add_option("--seed", ablate_args.seed, "Seed for --default-plan");

  GradcheckArgs gc_args;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Check analytic gradients against finite differences");
  gradcheck->add_option("--seed", gc_args.seed, "Sample seed");
  gradcheck->add_option("--dims", gc_args.dims,
                        "D,H,S,P,A,Nc,Nf,Np (default 8,8,4,4,4,2,4,3)");
  gradcheck->add_option("--mode", gc_args.mode, "Integration mode");
  gradcheck->add_option("--aggregator", gc_args.aggregator,
                        "attention|max|mean");
  gradcheck->add_option("--corrupt", gc_args.corrupt,
                        "Debug: corrupt this block's analytic gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (ablate->parsed()) return run_ablate(ablate_args);
    if (gradcheck->parsed()) return run_gradcheck_cmd(gc_args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
