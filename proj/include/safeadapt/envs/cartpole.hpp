#pragma once

#include "safeadapt/envs/env.hpp"

namespace safeadapt::env {

/// Cart-pole swing-up. State (x, x_dot, theta, theta_dot); theta = 0 is upright, the pole tip sits at
/// (x - l sin(theta), l cos(theta)) and hangs at theta = pi. Parameters (pole length l, pole mass, cart mass).
class CartPole final : public Environment {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kDt = 0.05;
  /// RK4 substeps per control step.
  static constexpr int kSubsteps = 10;
  static constexpr double kForceLimit = 10.0;
  static constexpr double kRailLimit = 3.0;
  static constexpr double kAngleMinDeg = -10.0;
  static constexpr double kAngleMaxDeg = 225.0;
  static constexpr double kNominal = 0.6;
  static constexpr double kAdaptLow = 0.2;
  static constexpr double kAdaptHigh = 1.0;
  static constexpr int kHorizon = 100;

  CartPole();

  std::string_view id() const override { return "cartpole"; }
  Eigen::Index state_dim() const override { return 4; }
  Eigen::Index action_dim() const override { return 1; }
  double dt() const override { return kDt; }
  const ActionBox& action_box() const override { return box_; }
  std::vector<std::string> state_names() const override { return {"x", "x_dot", "theta", "theta_dot"}; }
  std::vector<std::string> param_names() const override { return {"pole_length", "pole_mass", "cart_mass"}; }
  int default_horizon() const override { return kHorizon; }
  double max_abs_reward() const override { return 1.0; }

  EnvParams nominal_params() const override;
  std::pair<Vector, Vector> adapt_bounds() const override;
  Vector initial_state(Rng& rng) const override;

  StepResult step(const Vector& state, const Vector& action, const EnvParams& params) const override;
  double reward(const Vector& next_state, const Vector& action, const EnvParams& params) const override;
  bool state_unsafe(const Vector& state) const override;

  Matrix step_batch(const Matrix& states, const Matrix& actions, const EnvParams& params) const override;
  void reward_batch(const Matrix& next_states, const Matrix& actions, const EnvParams& params,
                    Eigen::Ref<Vector> out) const override;

 private:
  ActionBox box_;
};

/// exp(-((x - l sin th)^2 + (l - l cos th)^2) / l^2).
double cartpole_reward(double x, double theta, double pole_length);

/// Angle mapped into [-10 deg, 350 deg) so the safe window is a single closed interval.
double wrapped_angle_deg(double theta);
bool cartpole_angle_safe(double theta);

struct CartPoleAccel {
  double x_ddot;
  double theta_ddot;
};

/// Frictionless cart with a point-mass pole on a massless rod of length l.
CartPoleAccel cartpole_accelerations(const Eigen::Ref<const Eigen::Vector4d>& s, double force, double l,
                                     double pole_mass, double cart_mass);

/// One RK4 step of length dt under a constant force.
Eigen::Vector4d cartpole_rk4(const Eigen::Vector4d& s, double force, double l, double pole_mass, double cart_mass,
                             double dt);

/// One control period: kSubsteps RK4 steps under a zero-order-hold force.
Eigen::Vector4d cartpole_advance(const Eigen::Vector4d& s, double force, double l, double pole_mass, double cart_mass);

double cartpole_energy(const Eigen::Vector4d& s, double l, double pole_mass, double cart_mass);

}  // namespace safeadapt::env
