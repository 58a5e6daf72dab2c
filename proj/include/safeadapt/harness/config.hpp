#pragma once

#include "safeadapt/dynamics/dynamics.hpp"
#include "safeadapt/planner/planner.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace safeadapt::harness {

struct PretrainSettings {
  int episodes = 30;
  /// Leading episodes driven by uniform random actions before the planner takes over.
  int random_episodes = 5;
  int train_steps = 3000;
  /// Gradient steps are spread evenly over refits after each planner episode.
  int batch_size = 128;
  double learning_rate = 1e-3;
  int max_divergences = 100;
};

struct AdaptSettings {
  int episodes = 50;
  int train_steps = 200;
  int tasks_per_batch = 16;
  int max_context = 30;
  int n_target = 20;
  double learning_rate = 1e-3;
  int buffer_capacity = 500;
};

struct Ablation {
  bool prior_constraint = true;
  bool context = true;
  bool prioritized = true;
  bool pretrain = true;
};

struct GridSettings {
  /// Two parameter names; empty means the environment's first two parameters.
  std::vector<std::string> axes;
  int size = 5;
  int episodes_per_cell = 5;
};

struct ModelSettings {
  std::vector<std::size_t> prior_hidden{128, 128};
  dyn::PriorVariant prior_variant = dyn::PriorVariant::learned_gaussian_mlp;
  std::vector<std::size_t> anp_hidden{128, 128};
  int latent = 8;
  int deterministic = 8;
};

struct Checkpoints {
  /// Directory written by pretrain.
  std::string pretrain;
  /// Directory written by adapt; used by eval-grid and mse-report.
  std::string adapt;
};

struct RunConfig {
  std::string env = "cartpole";
  std::uint64_t seed = 0;
  /// Task horizon; 0 means the environment default.
  int horizon = 0;
  ModelSettings model;
  PretrainSettings pretrain;
  AdaptSettings adapt;
  plan::PlanConfig planner;
  Ablation ablation;
  GridSettings grid;
  Checkpoints checkpoints;
  /// Replay directory for mse-report; defaults to the adapt run's buffer.
  std::string eval_buffer;
  /// Write per-step planner diagnostics (JSON lines).
  bool planner_diagnostics = false;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep defaults; unknown keys are rejected with their dot path.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Sets a dot path ("planner.population=64") in `doc`. The value is parsed as JSON when possible,
/// otherwise kept as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Default config, overlaid with the file (if any) and the overrides, then validated.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Throws std::invalid_argument on inconsistent settings.
void validate(const RunConfig& c);

/// Grid axes with the empty default resolved against the environment.
std::vector<std::string> grid_axes(const RunConfig& c, const env::Environment& e);

}  // namespace safeadapt::harness
