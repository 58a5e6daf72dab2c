#pragma once

#include "safeadapt/diffcore/adam.hpp"
#include "safeadapt/diffcore/gaussian.hpp"
#include "safeadapt/diffcore/mlp.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace safeadapt::anp {

using diff::LatentGaussian;

/// Observed (input, output) pairs of the current episode. Rows are elements; may be empty.
struct ContextSet {
  Matrix x;
  Matrix y;

  static ContextSet empty(Eigen::Index dx, Eigen::Index dy) { return {Matrix(0, dx), Matrix(0, dy)}; }
  Eigen::Index count() const { return x.rows(); }
  void append(const Eigen::Ref<const RowVector>& xi, const Eigen::Ref<const RowVector>& yi);
};

struct TargetBatch {
  Matrix x;
  std::optional<Matrix> y;
};

/// Per-row predictive Gaussian in output units.
struct PredictiveGaussian {
  Matrix mean;
  Matrix stddev;
};

enum class LatentMode { mean_latent, sampled_latent };

struct AnpDims {
  Eigen::Index dx = 0;
  Eigen::Index dy = 0;
  std::vector<std::size_t> hidden{128, 128};
  Eigen::Index latent = 8;
  Eigen::Index deterministic = 8;
};

/// Standardization of inputs and scaling of outputs, frozen once computed.
struct Normalizer {
  Vector x_mean;
  Vector x_std;
  Vector y_scale;

  static Normalizer identity(Eigen::Index dx, Eigen::Index dy);
  /// Column statistics; near-constant columns get unit scale.
  static Normalizer fit(const Matrix& x, const Matrix& y_for_scale);
  Matrix normalize_x(const Matrix& x) const;
  Matrix normalize_y(const Matrix& y) const;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

/// Attentive neural process: a deterministic path (MLP embedding, one self-attention layer, query
/// cross-attention) and a latent path (MLP embedding, mean aggregation, Gaussian head), both feeding a
/// Gaussian decoder. Prediction methods are const and allocate no shared state.
class AnpModel {
 public:
  AnpModel(AnpDims dims, Normalizer norm, Rng& init_rng);

  const AnpDims& dims() const { return dims_; }
  const Normalizer& normalizer() const { return norm_; }
  diff::ParameterSet& parameters() { return params_; }
  const diff::ParameterSet& parameters() const { return params_; }

  // Inference path.
  LatentGaussian encode_latent(const ContextSet& set) const;
  Matrix encode_deterministic(const ContextSet& ctx, const Matrix& x_query) const;
  /// Decoder on rows of (x_query, z, representation); z may be a single row shared by all queries.
  PredictiveGaussian decode(const Matrix& x_query, const Matrix& z, const Matrix& representation) const;
  /// `noise` (1 x latent) fixes the sampled-latent draw; nullopt uses `rng`.
  PredictiveGaussian predict(const ContextSet& ctx, const Matrix& x_query, LatentMode mode, Rng* rng = nullptr,
                             const std::optional<Matrix>& noise = std::nullopt) const;

  /// Context-side quantities reused across many planner queries.
  struct ContextCache {
    Matrix keys;
    Matrix values;
    LatentGaussian latent;
  };
  ContextCache prepare(const ContextSet& ctx) const;
  /// Batched prediction; `z` has one row per query.
  PredictiveGaussian predict_cached(const ContextCache& cache, const Matrix& x_query, const Matrix& z) const;

  // Training path.
  struct ElboTerms {
    diff::Var loss;  // negated ELBO
    diff::Var log_likelihood;
    diff::Var kl;
  };
  /// Single reparameterized sample from q(z | targets); `noise` is 1 x latent standard normal.
  ElboTerms elbo(diff::Tape& tape, const std::vector<diff::Var>& bound, const ContextSet& ctx,
                 const TargetBatch& tgt, const Matrix& noise) const;

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path) const;
  static AnpModel load(const std::filesystem::path& path);

 private:
  struct TapedLatent {
    diff::Var mean;
    diff::Var logvar;
  };
  TapedLatent taped_latent(diff::Tape& tape, const std::vector<diff::Var>& bound, const Matrix& xn,
                           const Matrix& yn) const;
  diff::Var taped_deterministic(diff::Tape& tape, const std::vector<diff::Var>& bound, const Matrix& ctx_xn,
                                const Matrix& ctx_yn, const Matrix& query_xn) const;
  void check_dims(const Matrix& x, const Matrix* y, const char* what) const;
  Matrix self_attend(const Matrix& e) const;
  PredictiveGaussian decode_normalized(const Matrix& xn, const Matrix& z, const Matrix& r) const;

  AnpDims dims_;
  Normalizer norm_;
  diff::ParameterSet params_;
  diff::Mlp latent_encoder_;
  diff::Mlp latent_head_;
  diff::Mlp value_encoder_;
  diff::Mlp key_encoder_;
  diff::Mlp decoder_;
};

/// One (context, target) training pair.
struct Task {
  ContextSet context;
  TargetBatch target;
};

struct TrainStats {
  double loss = 0.0;
  bool applied = false;
};

/// Averages the negated ELBO over tasks, backpropagates and applies one Adam step. A non-finite loss or
/// gradient skips the step and increments `adam.skipped`.
TrainStats train_step(AnpModel& model, diff::AdamState& adam, const std::vector<Task>& batch, Rng& rng);

}  // namespace safeadapt::anp
