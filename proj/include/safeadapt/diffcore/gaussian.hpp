#pragma once

#include "safeadapt/diffcore/tape.hpp"

namespace safeadapt::diff {

/// Log-variance clamp applied to every Gaussian head before exponentiation.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 4.0;

/// Factorized Gaussian, stored by mean and per-dimension standard deviation.
struct LatentGaussian {
  Vector mean;
  Vector stddev;

  static LatentGaussian standard(Eigen::Index dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }
  Eigen::Index dim() const { return mean.size(); }
};

/// KL(p || q), summed over dimensions. Throws DomainError on non-positive std.
double kl_diag_gaussians(const LatentGaussian& p, const LatentGaussian& q);

/// mu + exp(log_sigma) * noise, recorded on the tape.
Var reparam_sample(Var mu, Var log_sigma, Var noise);

/// Tape version of KL(p || q) for Gaussians parameterized by mean and log-variance.
Var kl_diag_logvar(Var mu_p, Var logvar_p, Var mu_q, Var logvar_q);

/// Sum over all elements of log N(y | mu, exp(logvar)).
Var gaussian_log_likelihood(Var y, Var mu, Var logvar);

}  // namespace safeadapt::diff
