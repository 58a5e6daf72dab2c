#pragma once

#include "safeadapt/anp/anp.hpp"
#include "safeadapt/envs/env.hpp"

#include <filesystem>
#include <memory>

namespace safeadapt::dyn {

using anp::PredictiveGaussian;

enum class PriorVariant { learned_gaussian_mlp, analytic_nominal };

std::string_view to_string(PriorVariant v);
PriorVariant parse_prior_variant(std::string_view name);

/// Context-unaware model h over next states. Predictions are row-batched.
class PriorModel {
 public:
  /// Zero-variance one-step integration of `environment` at `nominal`.
  static PriorModel analytic(std::shared_ptr<const env::Environment> environment, env::EnvParams nominal);
  /// Gaussian MLP over the state increment; inputs standardized and increments scaled by `norm`.
  static PriorModel learned(Eigen::Index state_dim, Eigen::Index action_dim, std::vector<std::size_t> hidden,
                            anp::Normalizer norm, Rng& init_rng);

  PriorVariant variant() const { return variant_; }
  bool deterministic() const { return variant_ == PriorVariant::analytic_nominal; }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }

  /// Throws DomainError on a non-finite state or action.
  PredictiveGaussian predict(const Matrix& states, const Matrix& actions) const;
  /// Mean only; cheaper for the analytic variant and for residual construction.
  Matrix mean(const Matrix& states, const Matrix& actions) const;

  /// Negative log-likelihood of the normalized increments, averaged over rows. Learned variant only.
  diff::Var nll(diff::Tape& tape, const std::vector<diff::Var>& bound, const Matrix& states, const Matrix& actions,
                const Matrix& next_states) const;
  /// One Adam step on a minibatch; returns the loss (learned variant only).
  double train_step(diff::AdamState& adam, const Matrix& states, const Matrix& actions, const Matrix& next_states);

  diff::ParameterSet& parameters() { return params_; }
  const diff::ParameterSet& parameters() const { return params_; }
  const anp::Normalizer& normalizer() const { return norm_; }

  void save(const std::filesystem::path& path) const;
  /// `environment` backs the analytic variant; the learned variant ignores it.
  static PriorModel load(const std::filesystem::path& path, std::shared_ptr<const env::Environment> environment);

 private:
  PriorModel() = default;
  void check_inputs(const Matrix& states, const Matrix& actions) const;

  PriorVariant variant_ = PriorVariant::analytic_nominal;
  Eigen::Index state_dim_ = 0;
  Eigen::Index action_dim_ = 0;
  std::shared_ptr<const env::Environment> env_;
  env::EnvParams nominal_;
  std::vector<std::size_t> hidden_;
  anp::Normalizer norm_;
  diff::ParameterSet params_;
  diff::Mlp net_;
};

/// y = s' - mean_h(s, a); row-batched.
Matrix residual_target(const PriorModel& h, const Matrix& states, const Matrix& actions, const Matrix& next_states);

/// f~ = h + g. A null disturbance means g = 0.
class CompositeModel {
 public:
  CompositeModel(PriorModel prior, std::shared_ptr<const anp::AnpModel> disturbance);

  const PriorModel& prior() const { return prior_; }
  const anp::AnpModel* disturbance() const { return g_.get(); }
  std::shared_ptr<const anp::AnpModel> disturbance_ptr() const { return g_; }

  /// Draws s' = s'_h + s'_g for each row. `z` holds one latent row per input row (ignored when g = 0);
  /// `cache` is the prepared context. Row noise for both parts comes from `rng`.
  Matrix sample_next(const Matrix& states, const Matrix& actions, const anp::AnpModel::ContextCache* cache,
                     const Matrix& z, Rng& rng) const;

  /// mean_h + mean_g at the given latents.
  Matrix mean_next(const Matrix& states, const Matrix& actions, const anp::AnpModel::ContextCache* cache,
                   const Matrix& z) const;

  /// Single-trajectory draw: fresh z from q(z | C), then sample_next.
  Matrix composite_predict(const Matrix& states, const Matrix& actions, const anp::ContextSet& ctx, Rng& rng) const;

  /// prior.json, disturbance.json (if any) and composite.json with the variant tag.
  void save(const std::filesystem::path& dir) const;
  static CompositeModel load(const std::filesystem::path& dir, std::shared_ptr<const env::Environment> environment);

 private:
  PriorModel prior_;
  std::shared_ptr<const anp::AnpModel> g_;
};

/// Latent rows for `n` trajectories drawn from q(z | C) held in `cache`.
Matrix sample_latents(const anp::AnpModel::ContextCache& cache, Eigen::Index n, Rng& rng);

}  // namespace safeadapt::dyn
