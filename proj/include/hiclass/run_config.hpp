#pragma once

// JSON run configuration: taxonomy path, dataset spec, model/loss/train
// sections and output directory. Unknown keys are rejected everywhere so a
// typo can't silently fall back to a default. Relative paths resolve
// against the config file's own directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"

#include "hiclass/datagen.hpp"
#include "hiclass/losses.hpp"
#include "hiclass/model.hpp"
#include "hiclass/trainer.hpp"

namespace hiclass {

namespace cfgdetail {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object())
    throw std::invalid_argument("config: " + where + " must be a JSON object");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value type for '" + std::string(key) +
                                "'");
  }
}

inline SplitCounts parse_split_counts(const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown_keys(j, {"train", "val", "test"}, where);
  SplitCounts counts;
  counts.train = get_or<std::size_t>(j, "train", 0);
  counts.val = get_or<std::size_t>(j, "val", 0);
  counts.test = get_or<std::size_t>(j, "test", 0);
  return counts;
}

inline DatasetSpec parse_dataset_spec(const json& j, Taxonomy taxonomy) {
  require_object(j, "dataset");
  reject_unknown_keys(j,
                      {"feature_dim", "patches_per_bag", "slides_per_fine_class",
                       "per_class_slides", "coarse_center_scale", "fine_offset_scale",
                       "patch_noise_scale", "background_patch_fraction",
                       "master_seed"},
                      "dataset");
  DatasetSpec spec;
  spec.taxonomy = std::move(taxonomy);
  spec.feature_dim = get_or<std::size_t>(j, "feature_dim", spec.feature_dim);
  if (j.contains("patches_per_bag")) {
    const auto& p = j.at("patches_per_bag");
    require_object(p, "dataset.patches_per_bag");
    reject_unknown_keys(p, {"min", "max"}, "dataset.patches_per_bag");
    spec.patches_min = get_or<std::size_t>(p, "min", spec.patches_min);
    spec.patches_max = get_or<std::size_t>(p, "max", spec.patches_max);
  }
  if (j.contains("slides_per_fine_class"))
    spec.slides_per_fine_class =
        parse_split_counts(j.at("slides_per_fine_class"), "dataset.slides_per_fine_class");
  if (j.contains("per_class_slides")) {
    const auto& p = j.at("per_class_slides");
    require_object(p, "dataset.per_class_slides");
    for (const auto& [name, counts] : p.items())
      spec.per_class_slides[name] =
          parse_split_counts(counts, "dataset.per_class_slides." + name);
  }
  spec.coarse_center_scale =
      get_or<double>(j, "coarse_center_scale", spec.coarse_center_scale);
  spec.fine_offset_scale =
      get_or<double>(j, "fine_offset_scale", spec.fine_offset_scale);
  spec.patch_noise_scale =
      get_or<double>(j, "patch_noise_scale", spec.patch_noise_scale);
  spec.background_patch_fraction =
      get_or<double>(j, "background_patch_fraction", spec.background_patch_fraction);
  spec.master_seed = get_or<std::uint64_t>(j, "master_seed", spec.master_seed);
  validate_spec(spec);
  return spec;
}

inline ModelConfig parse_model_config(const json& j) {
  require_object(j, "model");
  reject_unknown_keys(j,
                      {"aggregate_dim", "split_dim", "class_feature_dim",
                       "attention_dim", "integration", "aggregator"},
                      "model");
  ModelConfig cfg;
  cfg.aggregate_dim = get_or<std::size_t>(j, "aggregate_dim", cfg.aggregate_dim);
  cfg.split_dim = get_or<std::size_t>(j, "split_dim", cfg.split_dim);
  cfg.class_feature_dim =
      get_or<std::size_t>(j, "class_feature_dim", cfg.class_feature_dim);
  cfg.attention_dim = get_or<std::size_t>(j, "attention_dim", cfg.attention_dim);
  if (j.contains("integration"))
    cfg.integration = integration_from_string(j.at("integration").get<std::string>());
  if (j.contains("aggregator"))
    cfg.aggregator = aggregator_from_string(j.at("aggregator").get<std::string>());
  if (cfg.aggregate_dim != 2 * cfg.split_dim)
    throw std::invalid_argument("config: model.aggregate_dim must equal 2 * split_dim");
  return cfg;
}

inline LossConfig parse_loss_config(const json& j) {
  require_object(j, "loss");
  reject_unknown_keys(j, {"enable_con", "enable_int", "enable_gce", "alpha", "weights"},
                      "loss");
  LossConfig cfg;
  cfg.enable_con = get_or<bool>(j, "enable_con", cfg.enable_con);
  cfg.enable_int = get_or<bool>(j, "enable_int", cfg.enable_int);
  cfg.enable_gce = get_or<bool>(j, "enable_gce", cfg.enable_gce);
  cfg.alpha = get_or<double>(j, "alpha", cfg.alpha);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    require_object(w, "loss.weights");
    reject_unknown_keys(w, {"ce_coarse", "ce_fine", "con", "int", "gce"},
                        "loss.weights");
    cfg.weight_ce_coarse = get_or<double>(w, "ce_coarse", cfg.weight_ce_coarse);
    cfg.weight_ce_fine = get_or<double>(w, "ce_fine", cfg.weight_ce_fine);
    cfg.weight_con = get_or<double>(w, "con", cfg.weight_con);
    cfg.weight_int = get_or<double>(w, "int", cfg.weight_int);
    cfg.weight_gce = get_or<double>(w, "gce", cfg.weight_gce);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig parse_train_config(const json& j) {
  require_object(j, "train");
  reject_unknown_keys(j,
                      {"epochs", "lr_initial", "lr_final", "adam", "seed",
                       "shuffle_each_epoch", "anneal_per_epoch", "checkpoint_policy",
                       "checkpoint_every"},
                      "train");
  TrainConfig cfg;
  cfg.epochs = get_or<std::size_t>(j, "epochs", cfg.epochs);
  cfg.lr_initial = get_or<double>(j, "lr_initial", cfg.lr_initial);
  cfg.lr_final = get_or<double>(j, "lr_final", cfg.lr_final);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    require_object(a, "train.adam");
    reject_unknown_keys(a, {"beta1", "beta2", "eps"}, "train.adam");
    cfg.adam_beta1 = get_or<double>(a, "beta1", cfg.adam_beta1);
    cfg.adam_beta2 = get_or<double>(a, "beta2", cfg.adam_beta2);
    cfg.adam_eps = get_or<double>(a, "eps", cfg.adam_eps);
  }
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.shuffle_each_epoch = get_or<bool>(j, "shuffle_each_epoch", cfg.shuffle_each_epoch);
  cfg.anneal_per_epoch = get_or<bool>(j, "anneal_per_epoch", cfg.anneal_per_epoch);
  if (j.contains("checkpoint_policy"))
    cfg.checkpoint_policy =
        checkpoint_policy_from_string(j.at("checkpoint_policy").get<std::string>());
  cfg.checkpoint_every = get_or<std::size_t>(j, "checkpoint_every", cfg.checkpoint_every);
  cfg.validate();
  return cfg;
}

}  // namespace cfgdetail

struct RunConfig {
  std::optional<std::filesystem::path> taxonomy_path;  // resolved
  std::optional<Taxonomy> taxonomy;
  std::optional<DatasetSpec> dataset;
  std::optional<ModelConfig> model;
  std::optional<LossConfig> loss;
  std::optional<TrainConfig> train;
  std::optional<std::filesystem::path> output_dir;  // resolved

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
      throw std::invalid_argument("config: cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: parse error in '" + path.string() +
                                  "': " + e.what());
    }
    cfgdetail::require_object(j, "top level");
    cfgdetail::reject_unknown_keys(
        j, {"taxonomy", "dataset", "model", "loss", "train", "output_dir"},
        "top level");

    const std::filesystem::path base = path.has_parent_path()
                                           ? path.parent_path()
                                           : std::filesystem::path(".");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };

    RunConfig cfg;
    if (j.contains("taxonomy")) {
      if (!j.at("taxonomy").is_string())
        throw std::invalid_argument("config: 'taxonomy' must be a path string");
      cfg.taxonomy_path = resolve(j.at("taxonomy").get<std::string>());
      cfg.taxonomy = Taxonomy::load(cfg.taxonomy_path->string());
    }
    if (j.contains("dataset")) {
      if (!cfg.taxonomy)
        throw std::invalid_argument(
            "config: 'dataset' section requires a 'taxonomy' path");
      cfg.dataset = cfgdetail::parse_dataset_spec(j.at("dataset"), *cfg.taxonomy);
    }
    if (j.contains("model")) cfg.model = cfgdetail::parse_model_config(j.at("model"));
    if (j.contains("loss")) cfg.loss = cfgdetail::parse_loss_config(j.at("loss"));
    if (j.contains("train")) cfg.train = cfgdetail::parse_train_config(j.at("train"));
    if (j.contains("output_dir")) {
      if (!j.at("output_dir").is_string())
        throw std::invalid_argument("config: 'output_dir' must be a path string");
      cfg.output_dir = resolve(j.at("output_dir").get<std::string>());
    }
    return cfg;
  }
};

}  // namespace hiclass
