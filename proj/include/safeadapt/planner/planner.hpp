#pragma once

#include "safeadapt/dynamics/dynamics.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <ostream>

namespace safeadapt::plan {

struct PlanConfig {
  int horizon = 20;
  int particles = 20;
  int population = 400;
  double elite_fraction = 0.1;
  int iterations = 5;
  /// Initial CEM std as a fraction of the action half-range.
  double init_std = 0.5;
  double alpha = 0.1;
  double delta = 0.0;
  /// Penalty weight; nullopt means max|r| * horizon.
  std::optional<double> lambda;
  /// Evaluate the chance constraint on the prior-only family.
  bool prior_constraint = true;
  /// Evaluate the chance constraint on the composite family.
  bool model_constraint = true;
  anp::LatentMode latent_mode = anp::LatentMode::sampled_latent;
  /// Std floor as a fraction of the action range.
  double std_floor = 1e-3;

  double resolved_lambda(double max_abs_reward) const { return lambda.value_or(max_abs_reward * horizon); }
  /// Throws std::invalid_argument naming the offending field.
  void validate(double max_abs_reward) const;
};

nlohmann::json to_json(const PlanConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
PlanConfig plan_config_from_json(const nlohmann::json& j);

/// Rollouts of one action sequence; states[t] is N x state_dim after applying A[t].
struct ParticleTrajectories {
  std::vector<Matrix> states;
  /// diverged(t, n): particle n has produced a non-finite state at or before step t.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> diverged;
};

/// Alg. 1 rollouts of `actions` (horizon x action_dim) from s0. `g` null reproduces the prior-only family.
/// Each particle draws its latent once at the start (from `cache`) and fresh prior/disturbance noise per step.
ParticleTrajectories traj_sampling(const Matrix& actions, const dyn::PriorModel& h, const anp::AnpModel* g,
                                   const anp::AnpModel::ContextCache* cache, const Vector& s0, int particles,
                                   anp::LatentMode mode, Rng& rng);

/// Fraction of rows flagged unsafe.
double violation_prob(const Eigen::Ref<const Eigen::Array<bool, Eigen::Dynamic, 1>>& unsafe);

/// Per-particle augmented returns. rewards(t, n) and the per-step ensemble probabilities of both families;
/// a family that is not evaluated passes an empty vector.
Vector augmented_return(const Matrix& rewards, const Vector& model_violation_prob, const Vector& prior_violation_prob,
                        const Eigen::Ref<const Eigen::Array<bool, Eigen::Dynamic, 1>>& action_violation,
                        double lambda, double delta);

/// Mean of the samples at or below the lower empirical alpha-quantile (sorted index ceil(alpha N) - 1).
double cvar(std::vector<double> samples, double alpha);

struct CemState {
  Matrix mean;
  Matrix stddev;
};

struct CemResult {
  Matrix best;
  double best_score = -std::numeric_limits<double>::infinity();
  CemState state;
  /// Best score seen after each iteration.
  std::vector<double> trace;
  bool degraded = false;
};

/// Scores a batch of candidates; non-finite scores mark a diverged candidate.
using CandidateScorer = std::function<void(const std::vector<Matrix>& candidates, std::vector<double>& scores)>;

/// Generic CEM over (horizon x action_dim) sequences within the box. Returns the best sequence ever
/// evaluated (ties to the earliest); if every candidate diverged, the zero sequence with `degraded` set.
CemResult cem_optimize(const PlanConfig& cfg, const env::ActionBox& box, const CemState& start,
                       const CandidateScorer& score, Rng& rng);

struct PlanResult {
  Matrix actions;
  double cvar = 0.0;
  int model_violation_steps = 0;
  int prior_violation_steps = 0;
  int action_violation_steps = 0;
  std::vector<double> trace;
  bool degraded = false;
};

/// Constrained CVaR CEM-MPC. Rewards and safety predicates come from `environment` evaluated at
/// `reward_params` (the agent's nominal parameters).
class Planner {
 public:
  Planner(PlanConfig cfg, std::shared_ptr<const env::Environment> environment, env::EnvParams reward_params);

  const PlanConfig& config() const { return cfg_; }
  double lambda() const { return lambda_; }

  /// Scores candidates against the composite model (g may be null) and the prior-only family.
  void score_candidates(const std::vector<Matrix>& candidates, const Vector& s0, const dyn::PriorModel& h,
                        const anp::AnpModel* g, const anp::AnpModel::ContextCache* cache, Rng& rng,
                        std::vector<double>& scores, std::vector<std::array<int, 3>>* violations = nullptr) const;

  PlanResult plan(const Vector& s0, const anp::ContextSet& ctx, const dyn::CompositeModel& model, Rng& rng);

  /// First action of the plan; the CEM mean is kept, shifted, as the next warm start.
  Vector act(const Vector& s, const anp::ContextSet& ctx, const dyn::CompositeModel& model, Rng& rng);

  /// Episode boundary: forget the warm start.
  void reset();

  const std::optional<PlanResult>& last() const { return last_; }
  /// One JSON line per plan() call when set.
  void set_diagnostics(std::ostream* out) { diag_ = out; }

 private:
  CemState initial_state() const;

  PlanConfig cfg_;
  std::shared_ptr<const env::Environment> env_;
  env::EnvParams reward_params_;
  double lambda_;
  std::optional<Matrix> warm_mean_;
  std::optional<PlanResult> last_;
  std::ostream* diag_ = nullptr;
};

}  // namespace safeadapt::plan
