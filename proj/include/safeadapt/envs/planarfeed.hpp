#pragma once

#include "safeadapt/envs/env.hpp"

namespace safeadapt::env {

/// Planar feeding proxy: a double-integrator spoon must reach the mouth of a moving head without touching
/// the rest of the head. State (ee_x, ee_y, ee_vx, ee_vy, head_x, head_y, head_phase); action is a 2-d
/// acceleration. Parameters (forward speed a_f, rotation rate a_theta); both zero at T_pre.
class PlanarFeed final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kAccelLimit = 1.0;
  static constexpr double kHeadRadius = 0.15;
  static constexpr double kMouthRadius = 0.05;
  static constexpr double kHeadStartY = 1.0;
  /// Head translation speed per unit of a_f (m/s).
  static constexpr double kForwardScale = 0.05;
  /// Mouth direction swings by this amplitude (rad) around facing the robot.
  static constexpr double kMouthSwing = 0.5;
  static constexpr double kDeliveryBonus = 1.0;
  static constexpr double kActionPenalty = 0.01;
  static constexpr int kHorizon = 100;

  PlanarFeed();

  std::string_view id() const override { return "planarfeed"; }
  Eigen::Index state_dim() const override { return 7; }
  Eigen::Index action_dim() const override { return 2; }
  double dt() const override { return kDt; }
  const ActionBox& action_box() const override { return box_; }
  std::vector<std::string> state_names() const override {
    return {"ee_x", "ee_y", "ee_vx", "ee_vy", "head_x", "head_y", "head_phase"};
  }
  std::vector<std::string> param_names() const override { return {"forward_speed", "rotation_rate"}; }
  int default_horizon() const override { return kHorizon; }
  /// Distance term over the 2 m workspace plus bonus and action penalty.
  double max_abs_reward() const override { return 4.0; }

  EnvParams nominal_params() const override;
  std::pair<Vector, Vector> adapt_bounds() const override;
  Vector initial_state(Rng& rng) const override;

  StepResult step(const Vector& state, const Vector& action, const EnvParams& params) const override;
  double reward(const Vector& next_state, const Vector& action, const EnvParams& params) const override;
  bool state_unsafe(const Vector& state) const override;

  Matrix step_batch(const Matrix& states, const Matrix& actions, const EnvParams& params) const override;
  void reward_batch(const Matrix& next_states, const Matrix& actions, const EnvParams& params,
                    Eigen::Ref<Vector> out) const override;

  static Eigen::Vector2d mouth_point(const Eigen::Ref<const Vector>& state);
  static bool delivered(const Eigen::Ref<const Vector>& state);

 private:
  ActionBox box_;
};

}  // namespace safeadapt::env
