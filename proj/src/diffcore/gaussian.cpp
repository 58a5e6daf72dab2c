#include "safeadapt/diffcore/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace safeadapt::diff {

double kl_diag_gaussians(const LatentGaussian& p, const LatentGaussian& q) {
  if (p.dim() != q.dim() || p.stddev.size() != p.dim() || q.stddev.size() != q.dim())
    throw ShapeError("kl_diag_gaussians: latent dimensions differ");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.dim(); ++i) {
    const double sp = p.stddev[i];
    const double sq = q.stddev[i];
    if (!(sp > 0.0) || !(sq > 0.0)) throw DomainError("kl_diag_gaussians: non-positive standard deviation");
    const double ratio = (sp * sp) / (sq * sq);
    const double diff = q.mean[i] - p.mean[i];
    kl += 0.5 * (ratio + diff * diff / (sq * sq) - 1.0 - std::log(ratio));
  }
  // Rounding can leave a tiny negative residue for equal inputs.
  return kl < 0.0 ? 0.0 : kl;
}

Var reparam_sample(Var mu, Var log_sigma, Var noise) {
  if (mu.shape() != log_sigma.shape() || mu.shape() != noise.shape()) {
    throw ShapeError("reparam_sample: shapes " + to_string(mu.shape()) + ", " + to_string(log_sigma.shape()) +
                     ", " + to_string(noise.shape()) + " differ");
  }
  return mu + exp(log_sigma) * noise;
}

Var kl_diag_logvar(Var mu_p, Var logvar_p, Var mu_q, Var logvar_q) {
  // 0.5 * sum( exp(lp - lq) + (mq - mp)^2 exp(-lq) - 1 + lq - lp )
  Var diff = mu_q - mu_p;
  Var inv_var_q = exp(scale(logvar_q, -1.0));
  Var terms = exp(logvar_p - logvar_q) + diff * diff * inv_var_q + (logvar_q - logvar_p);
  const double n = static_cast<double>(mu_p.value().size());
  Var total = sum(terms);
  return scale(sub(total, mu_p.tape->constant(Tensor::scalar(n))), 0.5);
}

Var gaussian_log_likelihood(Var y, Var mu, Var logvar) {
  Var diff = y - mu;
  Var quad = diff * diff * exp(scale(logvar, -1.0));
  const double n = static_cast<double>(y.value().size());
  Var total = sum(quad + logvar);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return scale(total, -0.5) - y.tape->constant(Tensor::scalar(0.5 * n * log2pi));
}

}  // namespace safeadapt::diff
