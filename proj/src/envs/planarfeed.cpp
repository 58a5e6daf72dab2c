#include "safeadapt/envs/planarfeed.hpp"

#include <cmath>
#include <numbers>

namespace safeadapt::env {

namespace {

Eigen::Matrix<double, 7, 1> advance(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& a,
                                    const EnvParams& p, double dt) {
  Eigen::Matrix<double, 7, 1> n;
  // Semi-implicit Euler is exact enough for a double integrator at 10 Hz and keeps the head motion linear.
  n[2] = s[2] + a[0] * dt;
  n[3] = s[3] + a[1] * dt;
  n[0] = s[0] + n[2] * dt;
  n[1] = s[1] + n[3] * dt;
  n[4] = s[4];
  n[5] = s[5] - PlanarFeed::kForwardScale * p[0] * dt;
  n[6] = s[6] + p[1] * dt;
  return n;
}

}  // namespace

PlanarFeed::PlanarFeed()
    : box_{Vector::Constant(2, -kAccelLimit), Vector::Constant(2, kAccelLimit)} {}

EnvParams PlanarFeed::nominal_params() const { return {Vector::Zero(2)}; }

std::pair<Vector, Vector> PlanarFeed::adapt_bounds() const {
  Vector lo(2), hi(2);
  lo << -1.0, -2.0;
  hi << 1.0, 2.0;
  return {lo, hi};
}

Vector PlanarFeed::initial_state(Rng& rng) const {
  std::normal_distribution<double> noise(0.0, 0.01);
  Vector s = Vector::Zero(7);
  s[0] = noise(rng);
  s[1] = noise(rng);
  s[5] = kHeadStartY;
  return s;
}

Eigen::Vector2d PlanarFeed::mouth_point(const Eigen::Ref<const Vector>& s) {
  const double angle = -std::numbers::pi / 2.0 + kMouthSwing * std::sin(s[6]);
  return {s[4] + kHeadRadius * std::cos(angle), s[5] + kHeadRadius * std::sin(angle)};
}

bool PlanarFeed::delivered(const Eigen::Ref<const Vector>& s) {
  return (Eigen::Vector2d(s[0], s[1]) - mouth_point(s)).norm() < kMouthRadius;
}

StepResult PlanarFeed::step(const Vector& state, const Vector& action, const EnvParams& params) const {
  if (state.size() != 7 || action.size() != 2) throw ShapeError("planarfeed step: expected 7-d state and 2-d action");
  StepResult r;
  r.action_violation = action_unsafe(action);
  r.next_state = advance(state, box_.clip(action), params, kDt);
  r.diverged = !r.next_state.allFinite();
  r.terminated = r.diverged;
  r.reward = r.diverged ? 0.0 : reward(r.next_state, action, params);
  r.state_violation = r.diverged || state_unsafe(r.next_state);
  return r;
}

double PlanarFeed::reward(const Vector& next_state, const Vector& action, const EnvParams&) const {
  const Eigen::Vector2d ee(next_state[0], next_state[1]);
  const double dist = (ee - mouth_point(next_state)).norm();
  const double r_dis = -dist;
  const double r_med = dist < kMouthRadius ? kDeliveryBonus : 0.0;
  const double r_act = -kActionPenalty * action.squaredNorm();
  return r_dis + r_med + r_act;
}

bool PlanarFeed::state_unsafe(const Vector& s) const {
  const Eigen::Vector2d ee(s[0], s[1]);
  const bool inside_head = (ee - Eigen::Vector2d(s[4], s[5])).norm() < kHeadRadius;
  return inside_head && !delivered(s);
}

Matrix PlanarFeed::step_batch(const Matrix& states, const Matrix& actions, const EnvParams& params) const {
  Matrix out(states.rows(), 7);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const Vector a = box_.clip(actions.row(i).transpose());
    out.row(i) = advance(states.row(i).transpose(), a, params, kDt).transpose();
  }
  return out;
}

void PlanarFeed::reward_batch(const Matrix& next_states, const Matrix& actions, const EnvParams& params,
                              Eigen::Ref<Vector> out) const {
  for (Eigen::Index i = 0; i < next_states.rows(); ++i)
    out[i] = reward(next_states.row(i).transpose(), actions.row(i).transpose(), params);
}

}  // namespace safeadapt::env
