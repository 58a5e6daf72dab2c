#include "safeadapt/dynamics/dynamics.hpp"

#include "safeadapt/diffcore/checkpoint.hpp"

#include <fstream>

namespace safeadapt::dyn {

using diff::Tensor;
using diff::Var;

namespace {

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix gaussian_rows(const PredictiveGaussian& p, Rng& rng) {
  return p.mean + (p.stddev.array() * standard_normal(p.mean.rows(), p.mean.cols(), rng).array()).matrix();
}

}  // namespace

std::string_view to_string(PriorVariant v) {
  return v == PriorVariant::analytic_nominal ? "analytic-nominal" : "learned-gaussian-mlp";
}

PriorVariant parse_prior_variant(std::string_view name) {
  if (name == "analytic-nominal") return PriorVariant::analytic_nominal;
  if (name == "learned-gaussian-mlp") return PriorVariant::learned_gaussian_mlp;
  throw std::invalid_argument("unknown prior variant '" + std::string(name) + "'");
}

PriorModel PriorModel::analytic(std::shared_ptr<const env::Environment> environment, env::EnvParams nominal) {
  if (!environment) throw std::invalid_argument("PriorModel::analytic: null environment");
  PriorModel h;
  h.variant_ = PriorVariant::analytic_nominal;
  h.state_dim_ = environment->state_dim();
  h.action_dim_ = environment->action_dim();
  h.env_ = std::move(environment);
  h.nominal_ = std::move(nominal);
  return h;
}

PriorModel PriorModel::learned(Eigen::Index state_dim, Eigen::Index action_dim, std::vector<std::size_t> hidden,
                               anp::Normalizer norm, Rng& init_rng) {
  if (norm.x_mean.size() != state_dim + action_dim || norm.y_scale.size() != state_dim)
    throw ShapeError("PriorModel::learned: normalizer does not match dimensions");
  PriorModel h;
  h.variant_ = PriorVariant::learned_gaussian_mlp;
  h.state_dim_ = state_dim;
  h.action_dim_ = action_dim;
  h.hidden_ = std::move(hidden);
  h.norm_ = std::move(norm);
  std::vector<std::size_t> sizes{static_cast<std::size_t>(state_dim + action_dim)};
  sizes.insert(sizes.end(), h.hidden_.begin(), h.hidden_.end());
  sizes.push_back(static_cast<std::size_t>(2 * state_dim));
  h.net_ = diff::Mlp(h.params_, "prior", sizes, diff::Activation::relu, init_rng);
  return h;
}

void PriorModel::check_inputs(const Matrix& states, const Matrix& actions) const {
  if (states.cols() != state_dim_ || actions.cols() != action_dim_ || states.rows() != actions.rows())
    throw ShapeError("prior model: expected rows of " + std::to_string(state_dim_) + "-d states and " +
                     std::to_string(action_dim_) + "-d actions");
  if (!states.allFinite() || !actions.allFinite()) throw DomainError("prior model: non-finite state or action");
}

Matrix PriorModel::mean(const Matrix& states, const Matrix& actions) const {
  check_inputs(states, actions);
  if (variant_ == PriorVariant::analytic_nominal) return env_->step_batch(states, actions, nominal_);
  const Matrix out = net_.forward(params_, norm_.normalize_x(hcat(states, actions)));
  return states + (out.leftCols(state_dim_).array().rowwise() * norm_.y_scale.transpose().array()).matrix();
}

PredictiveGaussian PriorModel::predict(const Matrix& states, const Matrix& actions) const {
  check_inputs(states, actions);
  if (variant_ == PriorVariant::analytic_nominal)
    return {env_->step_batch(states, actions, nominal_), Matrix::Zero(states.rows(), state_dim_)};
  const Matrix out = net_.forward(params_, norm_.normalize_x(hcat(states, actions)));
  const auto scale = norm_.y_scale.transpose().array();
  const Matrix lv = out.rightCols(state_dim_).cwiseMax(diff::kLogVarMin).cwiseMin(diff::kLogVarMax);
  PredictiveGaussian p;
  p.mean = states + (out.leftCols(state_dim_).array().rowwise() * scale).matrix();
  p.stddev = ((0.5 * lv.array()).exp().rowwise() * scale).matrix();
  return p;
}

Var PriorModel::nll(diff::Tape& tape, const std::vector<Var>& bound, const Matrix& states, const Matrix& actions,
                    const Matrix& next_states) const {
  if (variant_ != PriorVariant::learned_gaussian_mlp) throw std::logic_error("analytic prior has no parameters");
  check_inputs(states, actions);
  if (next_states.rows() != states.rows() || next_states.cols() != state_dim_)
    throw ShapeError("prior nll: next-state shape mismatch");
  const auto ds = static_cast<std::size_t>(state_dim_);
  Var out = net_.forward(bound, tape.constant(Tensor::from_matrix(norm_.normalize_x(hcat(states, actions)))));
  Var mu = diff::slice(out, 0, ds);
  Var lv = diff::clamp(diff::slice(out, ds, 2 * ds), diff::kLogVarMin, diff::kLogVarMax);
  Var y = tape.constant(Tensor::from_matrix(norm_.normalize_y(next_states - states)));
  return diff::scale(diff::gaussian_log_likelihood(y, mu, lv), -1.0 / static_cast<double>(states.rows()));
}

double PriorModel::train_step(diff::AdamState& adam, const Matrix& states, const Matrix& actions,
                              const Matrix& next_states) {
  diff::Tape tape;
  const auto bound = params_.bind(tape);
  Var loss = nll(tape, bound, states, actions, next_states);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    ++adam.skipped;
    return value;
  }
  const auto grads = tape.backward(loss);
  std::vector<Tensor> g;
  for (Var b : bound) g.push_back(grads.of(b));
  diff::adam_step(params_, g, adam);
  return value;
}

void PriorModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta{{"model", "prior"},
                      {"variant", to_string(variant_)},
                      {"state_dim", state_dim_},
                      {"action_dim", action_dim_}};
  if (variant_ == PriorVariant::analytic_nominal) {
    meta["env"] = env_->id();
    meta["nominal"] = std::vector<double>(nominal_.values.data(), nominal_.values.data() + nominal_.values.size());
  } else {
    meta["hidden"] = hidden_;
    meta["normalizer"] = anp::to_json(norm_);
  }
  diff::save_checkpoint(path, params_, meta);
}

PriorModel PriorModel::load(const std::filesystem::path& path, std::shared_ptr<const env::Environment> environment) {
  const auto ck = diff::load_checkpoint(path);
  const auto& m = ck.metadata;
  if (m.value("model", "") != "prior") throw std::runtime_error(path.string() + " is not a prior-model checkpoint");
  const auto variant = parse_prior_variant(m.at("variant").get<std::string>());
  if (variant == PriorVariant::analytic_nominal) {
    if (!environment || environment->id() != m.at("env").get<std::string>())
      throw std::invalid_argument("analytic prior checkpoint needs the '" + m.at("env").get<std::string>() +
                                  "' environment");
    const auto v = m.at("nominal").get<std::vector<double>>();
    env::EnvParams p{Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()))};
    return analytic(std::move(environment), p);
  }
  Rng unused(0);
  PriorModel h = learned(m.at("state_dim").get<Eigen::Index>(), m.at("action_dim").get<Eigen::Index>(),
                         m.at("hidden").get<std::vector<std::size_t>>(), anp::normalizer_from_json(m.at("normalizer")),
                         unused);
  diff::assign_by_name(h.params_, ck.parameters);
  return h;
}

Matrix residual_target(const PriorModel& h, const Matrix& states, const Matrix& actions, const Matrix& next_states) {
  return next_states - h.mean(states, actions);
}

CompositeModel::CompositeModel(PriorModel prior, std::shared_ptr<const anp::AnpModel> disturbance)
    : prior_(std::move(prior)), g_(std::move(disturbance)) {
  if (g_ && (g_->dims().dx != prior_.state_dim() + prior_.action_dim() || g_->dims().dy != prior_.state_dim()))
    throw ShapeError("CompositeModel: prior and disturbance dimensions disagree");
}

Matrix CompositeModel::sample_next(const Matrix& states, const Matrix& actions,
                                   const anp::AnpModel::ContextCache* cache, const Matrix& z, Rng& rng) const {
  Matrix next = prior_.deterministic() ? prior_.mean(states, actions) : gaussian_rows(prior_.predict(states, actions), rng);
  if (g_) {
    if (!cache) throw std::invalid_argument("sample_next: disturbance model needs a prepared context");
    next += gaussian_rows(g_->predict_cached(*cache, hcat(states, actions), z), rng);
  }
  return next;
}

Matrix CompositeModel::mean_next(const Matrix& states, const Matrix& actions, const anp::AnpModel::ContextCache* cache,
                                 const Matrix& z) const {
  Matrix next = prior_.mean(states, actions);
  if (g_) {
    if (!cache) throw std::invalid_argument("mean_next: disturbance model needs a prepared context");
    next += g_->predict_cached(*cache, hcat(states, actions), z).mean;
  }
  return next;
}

Matrix CompositeModel::composite_predict(const Matrix& states, const Matrix& actions, const anp::ContextSet& ctx,
                                         Rng& rng) const {
  if (!g_) return sample_next(states, actions, nullptr, Matrix(), rng);
  const auto cache = g_->prepare(ctx);
  const Matrix z = sample_latents(cache, 1, rng).replicate(states.rows(), 1);
  return sample_next(states, actions, &cache, z, rng);
}

void CompositeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  prior_.save(dir / "prior.json");
  if (g_) g_->save(dir / "disturbance.json");
  nlohmann::json manifest{{"prior_variant", to_string(prior_.variant())}, {"has_disturbance", g_ != nullptr}};
  std::ofstream(dir / "composite.json") << manifest.dump(2) << '\n';
}

CompositeModel CompositeModel::load(const std::filesystem::path& dir,
                                    std::shared_ptr<const env::Environment> environment) {
  std::ifstream in(dir / "composite.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "composite.json").string());
  const auto manifest = nlohmann::json::parse(in);
  PriorModel h = PriorModel::load(dir / "prior.json", std::move(environment));
  std::shared_ptr<const anp::AnpModel> g;
  if (manifest.at("has_disturbance").get<bool>())
    g = std::make_shared<const anp::AnpModel>(anp::AnpModel::load(dir / "disturbance.json"));
  return CompositeModel(std::move(h), std::move(g));
}

Matrix sample_latents(const anp::AnpModel::ContextCache& cache, Eigen::Index n, Rng& rng) {
  const Eigen::Index d = cache.latent.dim();
  const Matrix eps = standard_normal(n, d, rng);
  return (eps.array().rowwise() * cache.latent.stddev.transpose().array()).rowwise() +
         cache.latent.mean.transpose().array();
}

}  // namespace safeadapt::dyn
