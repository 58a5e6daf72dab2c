#pragma once

#include "safeadapt/harness/config.hpp"
#include "safeadapt/replay/replay.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

namespace safeadapt::harness {

struct EpisodeMetrics {
  int episode = 0;
  double ret = 0.0;
  /// Fraction of executed steps with a state or action violation.
  double violation_rate = 0.0;
  int state_violations = 0;
  int action_violations = 0;
  int steps = 0;
  int degraded_steps = 0;
  bool diverged = false;
  env::EnvParams params;
  double wall_seconds = 0.0;
};

struct EpisodeRun {
  replay::EpisodeRecord record;
  EpisodeMetrics metrics;
};

/// Called before each planner query with the step index and the context handed to the planner.
using ContextObserver = std::function<void(int, const anp::ContextSet&)>;

/// One episode from `s0` at `true_params`. A null planner drives the system with uniform random actions.
/// The planner sees the transitions of this episode so far as context (or none when `use_context` is
/// false); residuals are taken against the model's prior. A diverged step ends the episode unrecorded.
EpisodeRun run_episode(const env::Environment& environment, const env::EnvParams& true_params, const Vector& s0,
                       const dyn::CompositeModel& model, plan::Planner* planner, bool use_context, int horizon,
                       Rng& rng, std::int64_t id, const ContextObserver& observe = {});

/// Start state and generator for episode `index` of a stream, independent of everything else in the run.
struct EpisodeSeeds {
  Vector s0;
  Rng rng;
};
EpisodeSeeds episode_seeds(const env::Environment& environment, std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t index);

/// Writes metrics rows; wall time goes to a separate timing file so metric files are reproducible.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& dir, const env::Environment& environment);
  void write(const EpisodeMetrics& m);

 private:
  std::ofstream metrics_;
  std::ofstream timing_;
};

struct MseRow {
  std::size_t rows = 0;
  std::optional<double> mse;  // absent when the partition is empty
};

struct MseTable {
  MseRow safe;
  MseRow unsafe;
};

/// One-step predictive-mean squared error of the composite model, averaged over state dimensions in units of
/// the model's output scale, split by the transition's unsafe label. Context for row t is rows 0..t-1 of
/// the same episode (empty when `use_context` is false).
MseTable one_step_mse(const dyn::CompositeModel& model, const replay::ReplayBuffer& data, bool use_context);

struct DisturbanceTraining {
  int steps = 0;
  int tasks_per_batch = 16;
  int max_context = 30;
  int n_target = 20;
  bool prioritized = true;
  double learning_rate = 1e-3;
};

/// Trains `g` on tasks sampled from `data`; returns the number of skipped steps.
std::uint64_t train_disturbance(anp::AnpModel& g, diff::AdamState& adam, const replay::ReplayBuffer& data,
                                const DisturbanceTraining& t, Rng& rng);

anp::AnpDims disturbance_dims(const RunConfig& c, const env::Environment& environment);

// Subcommands. Each writes the resolved config to `out/config.json`.
void run_pretrain(const RunConfig& c, const std::filesystem::path& out);
void run_adapt(const RunConfig& c, const std::filesystem::path& out);
void run_eval_grid(const RunConfig& c, const std::filesystem::path& out);
void run_ablate(const RunConfig& c, const std::filesystem::path& out);
void run_mse_report(const RunConfig& c, const std::filesystem::path& out);

/// Random stream ids; every consumer derives its generator from (seed, stream).
enum Stream : std::uint64_t {
  kStreamPretrainEpisodes = 1,
  kStreamPriorInit = 2,
  kStreamPriorTraining = 3,
  kStreamAdaptParams = 10,
  kStreamAdaptEpisodes = 11,
  kStreamDisturbanceInit = 12,
  kStreamDisturbanceTraining = 13,
  kStreamEval = 20,
};

}  // namespace safeadapt::harness
