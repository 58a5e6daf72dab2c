#pragma once

#include "safeadapt/anp/anp.hpp"

#include <cmath>

namespace safeadapt::testing {

/// y = A sin(x + phi), A in [0.5, 2], phi in [0, pi], x in [-5, 5].
struct Sinusoid {
  double amplitude;
  double phase;

  static Sinusoid draw(Rng& rng) {
    std::uniform_real_distribution<double> a(0.5, 2.0), p(0.0, 3.141592653589793);
    const double amp = a(rng);
    return {amp, p(rng)};
  }

  Matrix inputs(Eigen::Index n, Rng& rng) const {
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    Matrix x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = u(rng);
    return x;
  }
  Matrix outputs(const Matrix& x) const {
    return (amplitude * (x.array() + phase).sin()).matrix();
  }
  anp::ContextSet context(Eigen::Index n, Rng& rng) const {
    Matrix x = inputs(n, rng);
    return {x, outputs(x)};
  }
};

/// Task with n_C contexts and n_T disjoint targets.
inline anp::Task sinusoid_task(Rng& rng, Eigen::Index n_context, Eigen::Index n_target) {
  const Sinusoid s = Sinusoid::draw(rng);
  anp::Task t;
  t.context = s.context(n_context, rng);
  t.target.x = s.inputs(n_target, rng);
  t.target.y = s.outputs(t.target.x);
  return t;
}

inline anp::AnpModel small_sinusoid_model(std::uint64_t seed, std::size_t hidden = 32) {
  anp::AnpDims dims;
  dims.dx = 1;
  dims.dy = 1;
  dims.hidden = {hidden, hidden};
  Rng init(seed);
  return anp::AnpModel(dims, anp::Normalizer::identity(1, 1), init);
}

}  // namespace safeadapt::testing
