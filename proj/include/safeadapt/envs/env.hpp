#pragma once

#include "safeadapt/common.hpp"

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace safeadapt::env {

/// Which disturbance distribution to draw episode parameters from.
enum class ParamSpace { pretrain, adapt };

/// Physical parameters of one episode; coordinates are environment specific (see param_names()).
struct EnvParams {
  Vector values;

  double operator[](Eigen::Index i) const { return values[i]; }
  friend bool operator==(const EnvParams& a, const EnvParams& b) { return a.values == b.values; }
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool state_violation = false;
  bool action_violation = false;
  /// Left the simulated workspace (e.g. cart off the rail); the episode ends without a violation.
  bool terminated = false;
  /// Integration produced a non-finite state.
  bool diverged = false;
};

/// Box of admissible actions (A_safe).
struct ActionBox {
  Vector low;
  Vector high;

  bool contains(const Eigen::Ref<const Vector>& a) const;
  Vector clip(const Eigen::Ref<const Vector>& a) const;
};

/// A non-stationary constrained environment. All members are pure functions of their arguments,
/// so one instance can be shared by concurrent episode runners.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view id() const = 0;
  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index action_dim() const = 0;
  virtual double dt() const = 0;
  virtual const ActionBox& action_box() const = 0;
  virtual std::vector<std::string> state_names() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  /// Episode length used when the caller does not override it.
  virtual int default_horizon() const = 0;
  /// Bound on |r| over reachable states, used to size the constraint penalty.
  virtual double max_abs_reward() const = 0;

  /// T_pre parameters.
  virtual EnvParams nominal_params() const = 0;
  /// Bounds of the adaptation box T_adapt, per coordinate.
  virtual std::pair<Vector, Vector> adapt_bounds() const = 0;
  EnvParams sample_params(ParamSpace space, Rng& rng) const;

  virtual Vector initial_state(Rng& rng) const = 0;

  virtual StepResult step(const Vector& state, const Vector& action, const EnvParams& params) const = 0;

  /// Reward for arriving in `next_state` after applying `action`.
  virtual double reward(const Vector& next_state, const Vector& action, const EnvParams& params) const = 0;
  virtual bool state_unsafe(const Vector& state) const = 0;
  bool action_unsafe(const Vector& action) const { return !action_box().contains(action); }

  // Row-batched helpers used by the planner; rows are independent samples.
  virtual Matrix step_batch(const Matrix& states, const Matrix& actions, const EnvParams& params) const = 0;
  virtual void reward_batch(const Matrix& next_states, const Matrix& actions, const EnvParams& params,
                            Eigen::Ref<Vector> out) const = 0;
  virtual void state_unsafe_batch(const Matrix& states, Eigen::Ref<Eigen::Array<bool, Eigen::Dynamic, 1>> out) const;
};

enum class EnvId { cartpole, planarfeed };

EnvId parse_env_id(std::string_view name);
std::unique_ptr<Environment> make_environment(EnvId id);

}  // namespace safeadapt::env
