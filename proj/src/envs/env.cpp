#include "safeadapt/envs/env.hpp"

#include "safeadapt/envs/cartpole.hpp"
#include "safeadapt/envs/planarfeed.hpp"

namespace safeadapt::env {

bool ActionBox::contains(const Eigen::Ref<const Vector>& a) const {
  if (a.size() != low.size()) return false;
  return (a.array() >= low.array()).all() && (a.array() <= high.array()).all();
}

Vector ActionBox::clip(const Eigen::Ref<const Vector>& a) const { return a.cwiseMax(low).cwiseMin(high); }

EnvParams Environment::sample_params(ParamSpace space, Rng& rng) const {
  if (space == ParamSpace::pretrain) return nominal_params();
  const auto [lo, hi] = adapt_bounds();
  EnvParams p{Vector(lo.size())};
  for (Eigen::Index i = 0; i < lo.size(); ++i) p.values[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  return p;
}

void Environment::state_unsafe_batch(const Matrix& states, Eigen::Ref<Eigen::Array<bool, Eigen::Dynamic, 1>> out) const {
  for (Eigen::Index i = 0; i < states.rows(); ++i) out[i] = state_unsafe(states.row(i).transpose());
}

EnvId parse_env_id(std::string_view name) {
  if (name == "cartpole") return EnvId::cartpole;
  if (name == "planarfeed") return EnvId::planarfeed;
  throw std::invalid_argument("unknown environment '" + std::string(name) + "' (expected cartpole or planarfeed)");
}

std::unique_ptr<Environment> make_environment(EnvId id) {
  switch (id) {
    case EnvId::cartpole: return std::make_unique<CartPole>();
    case EnvId::planarfeed: return std::make_unique<PlanarFeed>();
  }
  throw std::invalid_argument("unknown environment id");
}

}  // namespace safeadapt::env
