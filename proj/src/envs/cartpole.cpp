#include "safeadapt/envs/cartpole.hpp"

#include <cmath>
#include <numbers>

namespace safeadapt::env {

namespace {
constexpr double kEpsDeg = 1e-9;
}

double cartpole_reward(double x, double theta, double pole_length) {
  const double l = pole_length;
  const double dx = x - l * std::sin(theta);
  const double dy = l - l * std::cos(theta);
  return std::exp(-(dx * dx + dy * dy) / (l * l));
}

double wrapped_angle_deg(double theta) {
  const double deg = theta * 180.0 / std::numbers::pi;
  double w = std::fmod(deg - CartPole::kAngleMinDeg, 360.0);
  if (w < 0.0) w += 360.0;
  return w + CartPole::kAngleMinDeg;
}

bool cartpole_angle_safe(double theta) {
  if (!std::isfinite(theta)) return false;
  const double w = wrapped_angle_deg(theta);
  // The wrap can land a hair above 350 for -10 deg minus rounding; both ends are closed.
  return w <= CartPole::kAngleMaxDeg + kEpsDeg || w >= 360.0 + CartPole::kAngleMinDeg - kEpsDeg;
}

CartPoleAccel cartpole_accelerations(const Eigen::Ref<const Eigen::Vector4d>& s, double force, double l,
                                     double pole_mass, double cart_mass) {
  const double sin_t = std::sin(s[2]);
  const double cos_t = std::cos(s[2]);
  const double w = s[3];
  const double g = CartPole::kGravity;
  const double x_ddot =
      (force + pole_mass * sin_t * (g * cos_t - l * w * w)) / (cart_mass + pole_mass * sin_t * sin_t);
  const double theta_ddot = (x_ddot * cos_t + g * sin_t) / l;
  return {x_ddot, theta_ddot};
}

Eigen::Vector4d cartpole_rk4(const Eigen::Vector4d& s, double force, double l, double pole_mass, double cart_mass,
                             double dt) {
  auto f = [&](const Eigen::Vector4d& y) {
    const auto acc = cartpole_accelerations(y, force, l, pole_mass, cart_mass);
    return Eigen::Vector4d(y[1], acc.x_ddot, y[3], acc.theta_ddot);
  };
  const Eigen::Vector4d k1 = f(s);
  const Eigen::Vector4d k2 = f(s + 0.5 * dt * k1);
  const Eigen::Vector4d k3 = f(s + 0.5 * dt * k2);
  const Eigen::Vector4d k4 = f(s + dt * k3);
  return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::Vector4d cartpole_advance(const Eigen::Vector4d& s, double force, double l, double pole_mass, double cart_mass) {
  constexpr double h = CartPole::kDt / CartPole::kSubsteps;
  Eigen::Vector4d y = s;
  for (int k = 0; k < CartPole::kSubsteps; ++k) y = cartpole_rk4(y, force, l, pole_mass, cart_mass, h);
  return y;
}

double cartpole_energy(const Eigen::Vector4d& s, double l, double pole_mass, double cart_mass) {
  const double xd = s[1], w = s[3], c = std::cos(s[2]);
  const double kinetic = 0.5 * (cart_mass + pole_mass) * xd * xd - pole_mass * l * c * xd * w +
                         0.5 * pole_mass * l * l * w * w;
  return kinetic + pole_mass * CartPole::kGravity * l * c;
}

CartPole::CartPole() : box_{Vector::Constant(1, -kForceLimit), Vector::Constant(1, kForceLimit)} {}

EnvParams CartPole::nominal_params() const { return {Vector::Constant(3, kNominal)}; }

std::pair<Vector, Vector> CartPole::adapt_bounds() const {
  return {Vector::Constant(3, kAdaptLow), Vector::Constant(3, kAdaptHigh)};
}

Vector CartPole::initial_state(Rng& rng) const {
  std::normal_distribution<double> noise(0.0, 0.01);
  Vector s(4);
  s << noise(rng), noise(rng), std::numbers::pi + noise(rng), noise(rng);
  return s;
}

StepResult CartPole::step(const Vector& state, const Vector& action, const EnvParams& params) const {
  if (state.size() != 4 || action.size() != 1) throw ShapeError("cartpole step: expected 4-d state and 1-d action");
  StepResult r;
  r.action_violation = action_unsafe(action);
  // The actuator saturates; an out-of-box command is still flagged.
  const double force = box_.clip(action)[0];
  const Eigen::Vector4d next = cartpole_advance(state.head<4>(), force, params[0], params[1], params[2]);
  r.next_state = next;
  r.diverged = !next.allFinite();
  if (r.diverged) {
    r.state_violation = true;
    r.terminated = true;
    r.reward = 0.0;
    return r;
  }
  r.reward = reward(r.next_state, action, params);
  r.state_violation = state_unsafe(r.next_state);
  r.terminated = std::abs(next[0]) > kRailLimit;
  return r;
}

double CartPole::reward(const Vector& next_state, const Vector&, const EnvParams& params) const {
  return cartpole_reward(next_state[0], next_state[2], params[0]);
}

bool CartPole::state_unsafe(const Vector& state) const { return !cartpole_angle_safe(state[2]); }

Matrix CartPole::step_batch(const Matrix& states, const Matrix& actions, const EnvParams& params) const {
  Matrix out(states.rows(), 4);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double force = std::clamp(actions(i, 0), -kForceLimit, kForceLimit);
    out.row(i) = cartpole_advance(states.row(i).transpose(), force, params[0], params[1], params[2]).transpose();
  }
  return out;
}

void CartPole::reward_batch(const Matrix& next_states, const Matrix&, const EnvParams& params,
                            Eigen::Ref<Vector> out) const {
  for (Eigen::Index i = 0; i < next_states.rows(); ++i)
    out[i] = cartpole_reward(next_states(i, 0), next_states(i, 2), params[0]);
}

}  // namespace safeadapt::env
