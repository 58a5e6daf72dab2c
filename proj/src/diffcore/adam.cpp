#include "safeadapt/diffcore/adam.hpp"

#include <cmath>

namespace safeadapt::diff {

AdamState AdamState::for_parameters(const ParameterSet& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& t : params.tensors()) {
    s.first_moment.push_back(Tensor::zeros(t.shape()));
    s.second_moment.push_back(Tensor::zeros(t.shape()));
  }
  return s;
}

bool adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.first_moment[i].shape() != params[i].shape())
      throw ShapeError("adam_step: shape mismatch for " + params.name(i));
  }
  for (const auto& g : grads) {
    if (!g.all_finite()) {
      ++state.skipped;
      return false;
    }
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
  return true;
}

}  // namespace safeadapt::diff
