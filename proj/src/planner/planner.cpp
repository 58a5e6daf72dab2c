#include "safeadapt/planner/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace safeadapt::plan {

namespace {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// Rows are candidate-major: row c * per + k is particle k of candidate c.
struct Family {
  std::vector<Matrix> states;
  BoolGrid unsafe;    // steps x rows
  BoolGrid diverged;  // steps x rows
  Matrix rewards;     // steps x rows
};

Family rollout(const std::vector<Matrix>& candidates, Eigen::Index per, const dyn::PriorModel& h,
               const anp::AnpModel* g, const anp::AnpModel::ContextCache* cache, const Vector& s0,
               anp::LatentMode mode, Rng& rng, const env::Environment* env, const env::EnvParams* reward_params,
               bool keep_states) {
  if (!s0.allFinite()) throw DomainError("traj_sampling: non-finite start state");
  if (g && !cache) throw std::invalid_argument("traj_sampling: disturbance model needs a prepared context");
  const auto n_cand = static_cast<Eigen::Index>(candidates.size());
  const Eigen::Index rows = n_cand * per;
  const Eigen::Index steps = candidates.front().rows();
  const Eigen::Index ds = s0.size();
  const Eigen::Index da = candidates.front().cols();

  Matrix z;
  if (g) {
    z = mode == anp::LatentMode::sampled_latent ? dyn::sample_latents(*cache, rows, rng)
                                                : Matrix(cache->latent.mean.transpose().replicate(rows, 1));
  }

  Family f;
  f.unsafe.setConstant(steps, rows, false);
  f.diverged.setConstant(steps, rows, false);
  f.rewards.setZero(steps, rows);
  Matrix s = s0.transpose().replicate(rows, 1);
  BoolArray alive = BoolArray::Constant(rows, true);
  Matrix a(rows, da);
  BoolArray unsafe_now(rows);
  Vector r_now(rows);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index c = 0; c < n_cand; ++c) a.middleRows(c * per, per) = candidates[c].row(t).replicate(per, 1);
    Matrix next;
    if (h.deterministic()) {
      next = h.mean(s, a);
    } else {
      const auto p = h.predict(s, a);
      next = p.mean + (p.stddev.array() * standard_normal(rows, ds, rng).array()).matrix();
    }
    if (g) {
      const auto p = g->predict_cached(*cache, hcat(s, a), z);
      next += p.mean + (p.stddev.array() * standard_normal(rows, ds, rng).array()).matrix();
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (alive[i] && !next.row(i).allFinite()) alive[i] = false;
      // Diverged particles are parked at their last finite state and count as violating from here on.
      if (!alive[i]) next.row(i) = s.row(i);
    }
    if (env) {
      env->state_unsafe_batch(next, unsafe_now);
      env->reward_batch(next, a, *reward_params, r_now);
      for (Eigen::Index i = 0; i < rows; ++i) {
        f.unsafe(t, i) = !alive[i] || unsafe_now[i];
        f.rewards(t, i) = alive[i] ? r_now[i] : 0.0;
      }
    }
    f.diverged.row(t) = (!alive).transpose();
    if (keep_states) f.states.push_back(next);
    s = std::move(next);
  }
  return f;
}

}  // namespace

void PlanConfig::validate(double max_abs_reward) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("plan config: " + msg); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (particles < 1) fail("particles must be >= 1");
  if (population < 1) fail("population must be >= 1");
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) fail("elite_fraction must be in (0, 1]");
  if (iterations < 1) fail("iterations must be >= 1");
  if (!(init_std > 0.0)) fail("init_std must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must be in (0, 1)");
  if (!(delta >= 0.0 && delta < 1.0)) fail("delta must be in [0, 1)");
  if (!(std_floor >= 0.0)) fail("std_floor must be non-negative");
  const double need = max_abs_reward * horizon;
  if (lambda && !(*lambda >= need))
    fail("lambda " + std::to_string(*lambda) + " is below max|r| * horizon = " + std::to_string(need));
}

nlohmann::json to_json(const PlanConfig& c) {
  return {{"horizon", c.horizon},
          {"particles", c.particles},
          {"population", c.population},
          {"elite_fraction", c.elite_fraction},
          {"iterations", c.iterations},
          {"init_std", c.init_std},
          {"alpha", c.alpha},
          {"delta", c.delta},
          {"lambda", c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json()},
          {"prior_constraint", c.prior_constraint},
          {"model_constraint", c.model_constraint},
          {"latent_mode", c.latent_mode == anp::LatentMode::sampled_latent ? "sampled" : "mean"},
          {"std_floor", c.std_floor}};
}

PlanConfig plan_config_from_json(const nlohmann::json& j) {
  PlanConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "horizon") c.horizon = value.get<int>();
    else if (key == "particles") c.particles = value.get<int>();
    else if (key == "population") c.population = value.get<int>();
    else if (key == "elite_fraction") c.elite_fraction = value.get<double>();
    else if (key == "iterations") c.iterations = value.get<int>();
    else if (key == "init_std") c.init_std = value.get<double>();
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "delta") c.delta = value.get<double>();
    else if (key == "lambda") c.lambda = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "prior_constraint") c.prior_constraint = value.get<bool>();
    else if (key == "model_constraint") c.model_constraint = value.get<bool>();
    else if (key == "latent_mode") {
      const auto m = value.get<std::string>();
      if (m == "sampled") c.latent_mode = anp::LatentMode::sampled_latent;
      else if (m == "mean") c.latent_mode = anp::LatentMode::mean_latent;
      else throw std::invalid_argument("plan config: latent_mode must be 'sampled' or 'mean'");
    } else if (key == "std_floor") c.std_floor = value.get<double>();
    else throw std::invalid_argument("plan config: unknown key '" + key + "'");
  }
  return c;
}

ParticleTrajectories traj_sampling(const Matrix& actions, const dyn::PriorModel& h, const anp::AnpModel* g,
                                   const anp::AnpModel::ContextCache* cache, const Vector& s0, int particles,
                                   anp::LatentMode mode, Rng& rng) {
  if (particles < 1) throw std::invalid_argument("traj_sampling: particles must be >= 1");
  if (actions.rows() < 1) throw std::invalid_argument("traj_sampling: empty action sequence");
  Family f = rollout({actions}, particles, h, g, cache, s0, mode, rng, nullptr, nullptr, true);
  return {std::move(f.states), std::move(f.diverged)};
}

double violation_prob(const Eigen::Ref<const BoolArray>& unsafe) {
  if (unsafe.size() == 0) throw std::invalid_argument("violation_prob: no particles");
  return static_cast<double>(unsafe.count()) / static_cast<double>(unsafe.size());
}

Vector augmented_return(const Matrix& rewards, const Vector& model_violation_prob, const Vector& prior_violation_prob,
                        const Eigen::Ref<const BoolArray>& action_violation, double lambda, double delta) {
  const Eigen::Index steps = rewards.rows();
  auto check = [&](Eigen::Index n, const char* what) {
    if (n != 0 && n != steps) throw ShapeError(std::string("augmented_return: ") + what + " length mismatch");
  };
  check(model_violation_prob.size(), "model probability");
  check(prior_violation_prob.size(), "prior probability");
  check(action_violation.size(), "action flag");
  double indicators = 0.0;
  for (Eigen::Index t = 0; t < model_violation_prob.size(); ++t) indicators += model_violation_prob[t] > delta;
  for (Eigen::Index t = 0; t < prior_violation_prob.size(); ++t) indicators += prior_violation_prob[t] > delta;
  indicators += static_cast<double>(action_violation.count());
  return (rewards.colwise().sum().array() - lambda * indicators).matrix().transpose();
}

double cvar(std::vector<double> samples, double alpha) {
  if (samples.empty()) throw std::invalid_argument("cvar: no samples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("cvar: alpha must be in (0, 1)");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  // The small slack keeps exact products such as 0.1 * 20 from rounding up to the next index.
  auto k = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
  k = std::clamp<std::size_t>(k, 1, samples.size()) - 1;
  const double nu = samples[k];
  double total = 0.0;
  std::size_t count = 0;
  for (double v : samples) {
    if (v > nu) break;
    total += v;
    ++count;
  }
  return total / static_cast<double>(count);
}

CemResult cem_optimize(const PlanConfig& cfg, const env::ActionBox& box, const CemState& start,
                       const CandidateScorer& score, Rng& rng) {
  const Eigen::Index steps = start.mean.rows(), da = start.mean.cols();
  if (box.low.size() != da) throw ShapeError("cem: action box does not match the action dimension");
  const auto pop = static_cast<std::size_t>(cfg.population);
  const std::size_t n_elite =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.elite_fraction * static_cast<double>(pop))));
  const RowVector lo = box.low.transpose(), hi = box.high.transpose();
  const RowVector floor = cfg.std_floor * (hi - lo);

  CemResult res;
  res.state = start;
  bool found = false;
  std::vector<Matrix> cands(pop);
  std::vector<double> scores(pop);
  std::vector<std::size_t> order(pop);
  for (int it = 0; it < cfg.iterations; ++it) {
    for (auto& c : cands) {
      c = res.state.mean + (res.state.stddev.array() * standard_normal(steps, da, rng).array()).matrix();
      for (Eigen::Index t = 0; t < steps; ++t) c.row(t) = c.row(t).cwiseMax(lo).cwiseMin(hi);
    }
    std::fill(scores.begin(), scores.end(), -std::numeric_limits<double>::infinity());
    score(cands, scores);
    for (auto& s : scores)
      if (!std::isfinite(s)) s = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pop; ++i) {
      if (std::isfinite(scores[i]) && (!found || scores[i] > res.best_score)) {
        res.best = cands[i];
        res.best_score = scores[i];
        found = true;
      }
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t usable = 0;
    while (usable < pop && std::isfinite(scores[order[usable]])) ++usable;
    const std::size_t k = std::min(n_elite, usable);
    if (k > 0) {
      Matrix mean = Matrix::Zero(steps, da);
      for (std::size_t e = 0; e < k; ++e) mean += cands[order[e]];
      mean /= static_cast<double>(k);
      Matrix var = Matrix::Zero(steps, da);
      for (std::size_t e = 0; e < k; ++e) var += (cands[order[e]] - mean).array().square().matrix();
      Matrix sd = (var / static_cast<double>(k)).cwiseSqrt();
      if (it + 1 < cfg.iterations)
        for (Eigen::Index t = 0; t < steps; ++t) sd.row(t) = sd.row(t).cwiseMax(floor);
      res.state = {std::move(mean), std::move(sd)};
    }
    res.trace.push_back(res.best_score);
  }
  if (!found) {
    res.best = Matrix::Zero(steps, da);
    res.degraded = true;
  }
  return res;
}

Planner::Planner(PlanConfig cfg, std::shared_ptr<const env::Environment> environment, env::EnvParams reward_params)
    : cfg_(std::move(cfg)), env_(std::move(environment)), reward_params_(std::move(reward_params)) {
  if (!env_) throw std::invalid_argument("Planner: null environment");
  cfg_.validate(env_->max_abs_reward());
  lambda_ = cfg_.resolved_lambda(env_->max_abs_reward());
}

void Planner::score_candidates(const std::vector<Matrix>& candidates, const Vector& s0, const dyn::PriorModel& h,
                               const anp::AnpModel* g, const anp::AnpModel::ContextCache* cache, Rng& rng,
                               std::vector<double>& scores, std::vector<std::array<int, 3>>* violations) const {
  const auto n_cand = static_cast<Eigen::Index>(candidates.size());
  const Eigen::Index steps = cfg_.horizon;
  for (const auto& c : candidates)
    if (c.rows() != steps || c.cols() != env_->action_dim()) throw ShapeError("planner: candidate shape mismatch");
  // A deterministic family needs only one particle per candidate.
  const Eigen::Index per_model = (h.deterministic() && !g) ? 1 : cfg_.particles;
  const Family model = rollout(candidates, per_model, h, g, cache, s0, cfg_.latent_mode, rng, env_.get(),
                               &reward_params_, false);
  std::optional<Family> prior_storage;
  const Family* prior = nullptr;
  Eigen::Index per_prior = 0;
  if (cfg_.prior_constraint) {
    per_prior = h.deterministic() ? 1 : cfg_.particles;
    if (!g && per_prior == per_model) {
      // With g = 0 the composite family already is a set of prior rollouts.
      prior = &model;
    } else {
      prior_storage = rollout(candidates, per_prior, h, nullptr, nullptr, s0, cfg_.latent_mode, rng, env_.get(),
                              &reward_params_, false);
      prior = &*prior_storage;
    }
  }

  scores.assign(candidates.size(), -std::numeric_limits<double>::infinity());
  if (violations) violations->assign(candidates.size(), {0, 0, 0});
  Vector pm(cfg_.model_constraint ? steps : 0), pp(cfg_.prior_constraint ? steps : 0);
  BoolArray av(steps);
  std::vector<double> returns(static_cast<std::size_t>(per_model));
  for (Eigen::Index c = 0; c < n_cand; ++c) {
    const auto cols_m = model.unsafe.middleCols(c * per_model, per_model);
    for (Eigen::Index t = 0; t < pm.size(); ++t) pm[t] = violation_prob(cols_m.row(t).transpose());
    if (prior) {
      const auto cols_p = prior->unsafe.middleCols(c * per_prior, per_prior);
      for (Eigen::Index t = 0; t < steps; ++t) pp[t] = violation_prob(cols_p.row(t).transpose());
    }
    for (Eigen::Index t = 0; t < steps; ++t) av[t] = !env_->action_box().contains(candidates[c].row(t).transpose());
    if (violations) {
      auto& v = (*violations)[static_cast<std::size_t>(c)];
      v = {static_cast<int>((pm.array() > cfg_.delta).count()), static_cast<int>((pp.array() > cfg_.delta).count()),
           static_cast<int>(av.count())};
    }
    if (model.diverged.row(steps - 1).segment(c * per_model, per_model).all()) continue;
    const Vector rbar = augmented_return(model.rewards.middleCols(c * per_model, per_model), pm, pp, av, lambda_,
                                         cfg_.delta);
    std::copy(rbar.data(), rbar.data() + rbar.size(), returns.begin());
    scores[static_cast<std::size_t>(c)] = cvar(returns, cfg_.alpha);
  }
}

CemState Planner::initial_state() const {
  const auto& box = env_->action_box();
  const RowVector half = 0.5 * (box.high - box.low).transpose();
  CemState s;
  s.mean = warm_mean_ ? *warm_mean_ : Matrix::Zero(cfg_.horizon, env_->action_dim());
  s.stddev = (cfg_.init_std * half).replicate(cfg_.horizon, 1);
  return s;
}

PlanResult Planner::plan(const Vector& s0, const anp::ContextSet& ctx, const dyn::CompositeModel& model, Rng& rng) {
  const anp::AnpModel* g = model.disturbance();
  std::optional<anp::AnpModel::ContextCache> cache;
  if (g) cache = g->prepare(ctx);
  const auto* cache_ptr = cache ? &*cache : nullptr;
  auto scorer = [&](const std::vector<Matrix>& cands, std::vector<double>& scores) {
    score_candidates(cands, s0, model.prior(), g, cache_ptr, rng, scores);
  };
  CemResult cem = cem_optimize(cfg_, env_->action_box(), initial_state(), scorer, rng);

  PlanResult out;
  out.actions = cem.best;
  out.cvar = cem.best_score;
  out.trace = cem.trace;
  out.degraded = cem.degraded;
  if (!cem.degraded) {
    std::vector<double> s;
    std::vector<std::array<int, 3>> v;
    score_candidates({cem.best}, s0, model.prior(), g, cache_ptr, rng, s, &v);
    out.model_violation_steps = v[0][0];
    out.prior_violation_steps = v[0][1];
    out.action_violation_steps = v[0][2];
  }

  Matrix shifted = Matrix::Zero(cem.state.mean.rows(), cem.state.mean.cols());
  if (shifted.rows() > 1) shifted.topRows(shifted.rows() - 1) = cem.state.mean.bottomRows(shifted.rows() - 1);
  warm_mean_ = std::move(shifted);

  if (diag_) {
    nlohmann::json line{{"cvar", out.degraded ? nlohmann::json() : nlohmann::json(out.cvar)},
                        {"model_violation_steps", out.model_violation_steps},
                        {"prior_violation_steps", out.prior_violation_steps},
                        {"action_violation_steps", out.action_violation_steps},
                        {"trace", out.trace},
                        {"degraded", out.degraded}};
    *diag_ << line.dump() << '\n';
  }
  last_ = out;
  return out;
}

Vector Planner::act(const Vector& s, const anp::ContextSet& ctx, const dyn::CompositeModel& model, Rng& rng) {
  return plan(s, ctx, model, rng).actions.row(0).transpose();
}

void Planner::reset() {
  warm_mean_.reset();
  last_.reset();
}

}  // namespace safeadapt::plan
