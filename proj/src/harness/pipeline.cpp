#include "safeadapt/harness/pipeline.hpp"

#include "safeadapt/csv.hpp"

#include <chrono>
#include <cmath>
#include <iostream>

namespace safeadapt::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

std::shared_ptr<const env::Environment> environment_for(const RunConfig& c) {
  return env::make_environment(env::parse_env_id(c.env));
}

int task_horizon(const RunConfig& c, const env::Environment& e) { return c.horizon > 0 ? c.horizon : e.default_horizon(); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void prepare_dir(const fs::path& out, const RunConfig& c) {
  fs::create_directories(out);
  write_json(out / "config.json", to_json(c));
}

// Stacks (s, a, s') of every transition in `data`.
void stack(const replay::ReplayBuffer& data, Matrix& s, Matrix& a, Matrix& sn) {
  std::size_t n = 0;
  for (const auto& ep : data.episodes()) n += ep.size();
  const auto& t0 = data.at(0).transitions.front();
  s.resize(static_cast<Eigen::Index>(n), t0.state.size());
  a.resize(static_cast<Eigen::Index>(n), t0.action.size());
  sn.resize(static_cast<Eigen::Index>(n), t0.state.size());
  Eigen::Index r = 0;
  for (const auto& ep : data.episodes()) {
    for (const auto& t : ep.transitions) {
      s.row(r) = t.state.transpose();
      a.row(r) = t.action.transpose();
      sn.row(r) = t.next_state.transpose();
      ++r;
    }
  }
}

// Residuals of stored transitions re-expressed against `h`.
void refresh_residuals(replay::EpisodeRecord& ep, const dyn::PriorModel& h) {
  if (ep.transitions.empty()) return;
  const auto n = static_cast<Eigen::Index>(ep.size());
  const auto& t0 = ep.transitions.front();
  Matrix s(n, t0.state.size()), a(n, t0.action.size()), sn(n, t0.state.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = ep.transitions[static_cast<std::size_t>(i)];
    s.row(i) = t.state.transpose();
    a.row(i) = t.action.transpose();
    sn.row(i) = t.next_state.transpose();
  }
  const Matrix y = dyn::residual_target(h, s, a, sn);
  for (Eigen::Index i = 0; i < n; ++i) ep.transitions[static_cast<std::size_t>(i)].residual = y.row(i).transpose();
}

double train_prior_steps(dyn::PriorModel& h, diff::AdamState& adam, const replay::ReplayBuffer& data, int steps,
                         int batch, Rng& rng) {
  if (steps <= 0 || h.deterministic()) return 0.0;
  Matrix s, a, sn;
  stack(data, s, a, sn);
  std::uniform_int_distribution<Eigen::Index> pick(0, s.rows() - 1);
  Matrix bs(batch, s.cols()), ba(batch, a.cols()), bn(batch, s.cols());
  double loss = 0.0;
  for (int k = 0; k < steps; ++k) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      const auto r = pick(rng);
      bs.row(i) = s.row(r);
      ba.row(i) = a.row(r);
      bn.row(i) = sn.row(r);
    }
    loss = h.train_step(adam, bs, ba, bn);
  }
  return loss;
}

plan::Planner make_planner(const RunConfig& c, std::shared_ptr<const env::Environment> e, bool constrained) {
  plan::PlanConfig pc = c.planner;
  if (!constrained) {
    pc.prior_constraint = false;
    pc.model_constraint = false;
  } else {
    pc.prior_constraint = pc.prior_constraint && c.ablation.prior_constraint;
  }
  const auto nominal = e->nominal_params();
  return plan::Planner(pc, std::move(e), nominal);
}

fs::path pretrain_dir(const RunConfig& c) {
  if (c.checkpoints.pretrain.empty()) throw std::invalid_argument("checkpoints.pretrain is not set");
  return c.checkpoints.pretrain;
}

fs::path adapt_dir(const RunConfig& c) {
  if (c.checkpoints.adapt.empty()) throw std::invalid_argument("checkpoints.adapt is not set");
  return c.checkpoints.adapt;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

EpisodeSeeds episode_seeds(const env::Environment& environment, std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t index) {
  const std::uint64_t base = derive_seed(derive_seed(seed, stream), index);
  Rng start(derive_seed(base, 0));
  return {environment.initial_state(start), Rng(derive_seed(base, 1))};
}

EpisodeRun run_episode(const env::Environment& environment, const env::EnvParams& true_params, const Vector& s0,
                       const dyn::CompositeModel& model, plan::Planner* planner, bool use_context, int horizon,
                       Rng& rng, std::int64_t id, const ContextObserver& observe) {
  const auto started = std::chrono::steady_clock::now();
  const Eigen::Index ds = environment.state_dim(), da = environment.action_dim();
  EpisodeRun run;
  run.record.id = id;
  run.metrics.episode = static_cast<int>(id);
  run.metrics.params = true_params;
  anp::ContextSet ctx = anp::ContextSet::empty(ds + da, ds);
  const anp::ContextSet empty = anp::ContextSet::empty(ds + da, ds);
  if (planner) planner->reset();
  const auto& box = environment.action_box();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int violating_steps = 0;

  Vector s = s0;
  for (int t = 0; t < horizon; ++t) {
    Vector a(da);
    if (planner) {
      if (observe) observe(t, use_context ? ctx : empty);
      a = planner->act(s, use_context ? ctx : empty, model, rng);
      if (planner->last() && planner->last()->degraded) ++run.metrics.degraded_steps;
    } else {
      for (Eigen::Index k = 0; k < da; ++k) a[k] = box.low[k] + (box.high[k] - box.low[k]) * unit(rng);
    }
    const env::StepResult r = environment.step(s, a, true_params);
    ++run.metrics.steps;
    if (r.diverged) {
      run.metrics.diverged = true;
      ++run.metrics.state_violations;
      ++violating_steps;
      break;
    }
    run.metrics.ret += r.reward;
    run.metrics.state_violations += r.state_violation;
    run.metrics.action_violations += r.action_violation;
    violating_steps += r.state_violation || r.action_violation;

    replay::Transition tr;
    tr.state = s;
    tr.action = a;
    tr.next_state = r.next_state;
    tr.residual = dyn::residual_target(model.prior(), s.transpose(), a.transpose(), r.next_state.transpose())
                      .row(0)
                      .transpose();
    tr.state_violation = r.state_violation;
    tr.action_violation = r.action_violation;
    RowVector x(ds + da);
    x << s.transpose(), a.transpose();
    ctx.append(x, tr.residual.transpose());
    run.record.transitions.push_back(std::move(tr));
    s = r.next_state;
    if (r.terminated) break;
  }
  run.metrics.violation_rate =
      run.metrics.steps ? static_cast<double>(violating_steps) / static_cast<double>(run.metrics.steps) : 0.0;
  run.metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

MetricsWriter::MetricsWriter(const fs::path& dir, const env::Environment& environment)
    : metrics_(dir / "metrics.csv"), timing_(dir / "timing.csv") {
  if (!metrics_ || !timing_) throw std::runtime_error("cannot write metrics in " + dir.string());
  std::vector<std::string> h{"episode",   "return", "violation_rate", "state_violations", "action_violations",
                             "steps",     "degraded_steps", "diverged"};
  for (const auto& p : environment.param_names()) h.push_back(p);
  metrics_ << join_csv(h) << '\n';
  timing_ << "episode,wall_seconds\n";
}

void MetricsWriter::write(const EpisodeMetrics& m) {
  std::vector<std::string> f{std::to_string(m.episode),          format_double(m.ret),
                             format_double(m.violation_rate),    std::to_string(m.state_violations),
                             std::to_string(m.action_violations), std::to_string(m.steps),
                             std::to_string(m.degraded_steps),   m.diverged ? "1" : "0"};
  for (Eigen::Index i = 0; i < m.params.values.size(); ++i) f.push_back(format_double(m.params.values[i]));
  metrics_ << join_csv(f) << '\n';
  metrics_.flush();
  timing_ << m.episode << ',' << format_double(m.wall_seconds) << '\n';
  timing_.flush();
}

MseTable one_step_mse(const dyn::CompositeModel& model, const replay::ReplayBuffer& data, bool use_context) {
  const auto* g = model.disturbance();
  Vector scale;
  if (g) scale = g->normalizer().y_scale;
  else if (!model.prior().deterministic()) scale = model.prior().normalizer().y_scale;
  else scale = Vector::Ones(model.prior().state_dim());

  double safe_sum = 0.0, unsafe_sum = 0.0;
  MseTable table;
  for (const auto& ep : data.episodes()) {
    const auto n = static_cast<Eigen::Index>(ep.size());
    const auto& t0 = ep.transitions.front();
    const Eigen::Index ds = t0.state.size(), da = t0.action.size();
    Matrix s(n, ds), a(n, da), sn(n, ds);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = ep.transitions[static_cast<std::size_t>(i)];
      s.row(i) = t.state.transpose();
      a.row(i) = t.action.transpose();
      sn.row(i) = t.next_state.transpose();
    }
    Matrix pred = model.prior().mean(s, a);
    if (g) {
      const Matrix x = hcat(s, a);
      const Matrix y = sn - pred;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index k = use_context ? i : 0;
        const anp::ContextSet ctx{x.topRows(k), y.topRows(k)};
        pred.row(i) += g->predict(ctx, x.row(i), anp::LatentMode::mean_latent).mean;
      }
    }
    const Matrix err = ((pred - sn).array().rowwise() / scale.transpose().array()).matrix();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = err.row(i).squaredNorm() / static_cast<double>(ds);
      if (ep.transitions[static_cast<std::size_t>(i)].unsafe()) {
        unsafe_sum += e;
        ++table.unsafe.rows;
      } else {
        safe_sum += e;
        ++table.safe.rows;
      }
    }
  }
  if (table.safe.rows) table.safe.mse = safe_sum / static_cast<double>(table.safe.rows);
  if (table.unsafe.rows) table.unsafe.mse = unsafe_sum / static_cast<double>(table.unsafe.rows);
  return table;
}

std::uint64_t train_disturbance(anp::AnpModel& g, diff::AdamState& adam, const replay::ReplayBuffer& data,
                                const DisturbanceTraining& t, Rng& rng) {
  const std::uint64_t before = adam.skipped;
  if (data.empty()) return 0;
  std::vector<anp::Task> batch(static_cast<std::size_t>(t.tasks_per_batch));
  for (int step = 0; step < t.steps; ++step) {
    for (auto& task : batch)
      task = data.sample_training_task(static_cast<std::size_t>(t.max_context), static_cast<std::size_t>(t.n_target),
                                       t.prioritized, rng)
                 .task;
    anp::train_step(g, adam, batch, rng);
  }
  return adam.skipped - before;
}

anp::AnpDims disturbance_dims(const RunConfig& c, const env::Environment& e) {
  anp::AnpDims d;
  d.dx = e.state_dim() + e.action_dim();
  d.dy = e.state_dim();
  d.hidden = c.model.anp_hidden;
  d.latent = c.model.latent;
  d.deterministic = c.model.deterministic;
  return d;
}

void run_pretrain(const RunConfig& c, const fs::path& out) {
  const auto e = environment_for(c);
  if (c.pretrain.random_episodes < 1) throw std::invalid_argument("pretrain.random_episodes must be >= 1 to fit the input normalization");
  prepare_dir(out, c);
  const int horizon = task_horizon(c, *e);
  const auto nominal = e->nominal_params();
  MetricsWriter metrics(out, *e);
  replay::ReplayBuffer data(static_cast<std::size_t>(c.pretrain.episodes));

  // Before a prior exists, random episodes only need some model for residual bookkeeping.
  std::optional<dyn::CompositeModel> model;
  model.emplace(dyn::PriorModel::analytic(e, nominal), nullptr);
  std::uint64_t divergences = 0;
  auto record = [&](EpisodeRun run) {
    divergences += run.metrics.diverged;
    metrics.write(run.metrics);
    if (!run.record.transitions.empty()) data.add_episode(std::move(run.record));
    if (divergences > static_cast<std::uint64_t>(c.pretrain.max_divergences))
      throw std::runtime_error("pretrain aborted: " + std::to_string(divergences) + " diverged episodes/steps exceed " +
                               std::to_string(c.pretrain.max_divergences));
  };

  const int n_random = std::min(c.pretrain.random_episodes, c.pretrain.episodes);
  for (int ep = 0; ep < n_random; ++ep) {
    auto seeds = episode_seeds(*e, c.seed, kStreamPretrainEpisodes, static_cast<std::uint64_t>(ep));
    record(run_episode(*e, nominal, seeds.s0, *model, nullptr, false, horizon, seeds.rng, ep));
  }
  Matrix s, a, sn;
  stack(data, s, a, sn);
  const anp::Normalizer norm = anp::Normalizer::fit(hcat(s, a), sn - s);

  Rng init(derive_seed(c.seed, kStreamPriorInit));
  dyn::PriorModel h = c.model.prior_variant == dyn::PriorVariant::analytic_nominal
                          ? dyn::PriorModel::analytic(e, nominal)
                          : dyn::PriorModel::learned(e->state_dim(), e->action_dim(), c.model.prior_hidden, norm, init);
  auto adam = diff::AdamState::for_parameters(h.parameters(), {.learning_rate = c.pretrain.learning_rate});
  Rng train_rng(derive_seed(c.seed, kStreamPriorTraining));
  const int total_steps = c.ablation.pretrain ? c.pretrain.train_steps : 0;
  const int refits = 1 + (c.pretrain.episodes - n_random);
  int remaining = total_steps;
  auto refit = [&](int k) {
    const int steps = total_steps / refits + (k < total_steps % refits ? 1 : 0);
    remaining -= steps;
    train_prior_steps(h, adam, data, steps, c.pretrain.batch_size, train_rng);
  };
  refit(0);

  plan::Planner planner = make_planner(c, e, false);
  for (int ep = n_random; ep < c.pretrain.episodes; ++ep) {
    model.emplace(h, nullptr);
    auto seeds = episode_seeds(*e, c.seed, kStreamPretrainEpisodes, static_cast<std::uint64_t>(ep));
    record(run_episode(*e, nominal, seeds.s0, *model, &planner, false, horizon, seeds.rng, ep));
    refit(ep - n_random + 1);
  }
  divergences += adam.skipped;
  if (divergences > static_cast<std::uint64_t>(c.pretrain.max_divergences))
    throw std::runtime_error("pretrain aborted: " + std::to_string(adam.skipped) + " non-finite prior losses");

  replay::ReplayBuffer stored(data.capacity());
  for (auto ep : data.episodes()) {
    refresh_residuals(ep, h);
    stored.add_episode(std::move(ep));
  }
  h.save(out / "prior.json");
  write_json(out / "normalizer.json", anp::to_json(norm));
  stored.save(out / "data");
  std::size_t unsafe_rows = 0;
  for (const auto& ep : stored.episodes()) unsafe_rows += ep.unsafe_count();
  write_json(out / "summary.json", {{"episodes", stored.size()},
                                    {"unsafe_rows", unsafe_rows},
                                    {"prior_steps", total_steps - remaining},
                                    {"skipped_steps", adam.skipped}});
}

void run_adapt(const RunConfig& c, const fs::path& out) {
  const auto e = environment_for(c);
  const fs::path pre = pretrain_dir(c);
  prepare_dir(out, c);
  const int horizon = task_horizon(c, *e);
  const anp::Normalizer norm = anp::normalizer_from_json(read_json(pre / "normalizer.json"));
  dyn::PriorModel h = dyn::PriorModel::load(pre / "prior.json", e);
  if (!c.ablation.pretrain && !h.deterministic()) {
    Rng init(derive_seed(c.seed, kStreamPriorInit));
    h = dyn::PriorModel::learned(e->state_dim(), e->action_dim(), c.model.prior_hidden, h.normalizer(), init);
  }
  Rng g_init(derive_seed(c.seed, kStreamDisturbanceInit));
  auto g = std::make_shared<anp::AnpModel>(disturbance_dims(c, *e), norm, g_init);
  auto adam = diff::AdamState::for_parameters(g->parameters(), {.learning_rate = c.adapt.learning_rate});
  const dyn::CompositeModel model(h, g);
  plan::Planner planner = make_planner(c, e, true);
  std::ofstream diag;
  if (c.planner_diagnostics) {
    diag.open(out / "planner.jsonl");
    planner.set_diagnostics(&diag);
  }

  replay::ReplayBuffer buffer(static_cast<std::size_t>(c.adapt.buffer_capacity));
  MetricsWriter metrics(out, *e);
  Rng param_rng(derive_seed(c.seed, kStreamAdaptParams));
  Rng train_rng(derive_seed(c.seed, kStreamDisturbanceTraining));
  const DisturbanceTraining training{c.adapt.train_steps, c.adapt.tasks_per_batch, c.adapt.max_context,
                                     c.adapt.n_target,    c.ablation.prioritized,  c.adapt.learning_rate};
  for (int ep = 0; ep < c.adapt.episodes; ++ep) {
    const env::EnvParams params = e->sample_params(env::ParamSpace::adapt, param_rng);
    auto seeds = episode_seeds(*e, c.seed, kStreamAdaptEpisodes, static_cast<std::uint64_t>(ep));
    EpisodeRun run = run_episode(*e, params, seeds.s0, model, &planner, c.ablation.context, horizon, seeds.rng, ep);
    metrics.write(run.metrics);
    if (!run.record.transitions.empty()) buffer.add_episode(std::move(run.record));
    train_disturbance(*g, adam, buffer, training, train_rng);
  }
  model.save(out / "model");
  buffer.save(out / "buffer");
  write_json(out / "summary.json", {{"episodes", c.adapt.episodes}, {"skipped_steps", adam.skipped}});
}

void run_eval_grid(const RunConfig& c, const fs::path& out) {
  const auto e = environment_for(c);
  const dyn::CompositeModel model = dyn::CompositeModel::load(adapt_dir(c) / "model", e);
  prepare_dir(out, c);
  const int horizon = task_horizon(c, *e);
  const auto names = e->param_names();
  const auto axes = grid_axes(c, *e);
  std::array<Eigen::Index, 2> axis{};
  for (int k = 0; k < 2; ++k) axis[k] = std::find(names.begin(), names.end(), axes[k]) - names.begin();
  const auto [low, high] = e->adapt_bounds();
  const env::EnvParams nominal = e->nominal_params();
  auto coord = [&](int k, int i) {
    if (c.grid.size == 1) return nominal.values[axis[k]];
    return low[axis[k]] + (high[axis[k]] - low[axis[k]]) * i / (c.grid.size - 1);
  };
  plan::Planner planner = make_planner(c, e, true);
  std::ofstream grid(out / "grid.csv");
  grid << join_csv({"i", "j", axes[0], axes[1], "mean_return", "mean_violation_rate"}) << '\n';
  MetricsWriter metrics(out, *e);
  replay::ReplayBuffer episodes(static_cast<std::size_t>(c.grid.size * c.grid.size * c.grid.episodes_per_cell));
  std::int64_t id = 0;
  for (int i = 0; i < c.grid.size; ++i) {
    for (int j = 0; j < c.grid.size; ++j) {
      env::EnvParams p = nominal;
      p.values[axis[0]] = coord(0, i);
      p.values[axis[1]] = coord(1, j);
      std::vector<double> rets, rates;
      for (int k = 0; k < c.grid.episodes_per_cell; ++k, ++id) {
        auto seeds = episode_seeds(*e, c.seed, kStreamEval, static_cast<std::uint64_t>(id));
        EpisodeRun run = run_episode(*e, p, seeds.s0, model, &planner, c.ablation.context, horizon, seeds.rng, id);
        rets.push_back(run.metrics.ret);
        rates.push_back(run.metrics.violation_rate);
        metrics.write(run.metrics);
        if (!run.record.transitions.empty()) episodes.add_episode(std::move(run.record));
      }
      grid << join_csv({std::to_string(i), std::to_string(j), format_double(p.values[axis[0]]),
                        format_double(p.values[axis[1]]), format_double(mean_of(rets)), format_double(mean_of(rates))})
           << '\n';
    }
  }
  episodes.save(out / "episodes");
}

void run_ablate(const RunConfig& c, const fs::path& out) {
  prepare_dir(out, c);
  struct Variant {
    const char* name;
    void (*apply)(Ablation&);
  };
  const Variant variants[] = {
      {"full", [](Ablation&) {}},
      {"no_prior_constraint", [](Ablation& a) { a.prior_constraint = false; }},
      {"no_context", [](Ablation& a) { a.context = false; }},
      {"uniform_sampling", [](Ablation& a) { a.prioritized = false; }},
      {"no_pretrain", [](Ablation& a) { a.pretrain = false; }},
  };
  std::ofstream summary(out / "summary.csv");
  summary << "variant,mean_return,mean_violation_rate\n";
  for (const auto& v : variants) {
    RunConfig vc = c;
    vc.ablation = Ablation{};
    v.apply(vc.ablation);
    const fs::path dir = out / v.name;
    run_adapt(vc, dir);
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    std::vector<double> rets, rates;
    while (std::getline(in, line)) {
      const auto f = split_csv_line(line);
      rets.push_back(std::stod(f.at(1)));
      rates.push_back(std::stod(f.at(2)));
    }
    summary << v.name << ',' << format_double(mean_of(rets)) << ',' << format_double(mean_of(rates)) << '\n';
  }
}

void run_mse_report(const RunConfig& c, const fs::path& out) {
  const auto e = environment_for(c);
  const dyn::CompositeModel model = dyn::CompositeModel::load(adapt_dir(c) / "model", e);
  const fs::path buffer_dir = c.eval_buffer.empty() ? adapt_dir(c) / "buffer" : fs::path(c.eval_buffer);
  const replay::ReplayBuffer data = replay::ReplayBuffer::load(buffer_dir);
  prepare_dir(out, c);
  const MseTable t = one_step_mse(model, data, c.ablation.context);
  std::ofstream csv(out / "mse.csv");
  csv << "region,rows,mse\n";
  auto row = [&](const char* name, const MseRow& r) {
    csv << name << ',' << r.rows << ',' << (r.mse ? format_double(*r.mse) : "absent") << '\n';
  };
  row("safe", t.safe);
  row("unsafe", t.unsafe);
}

}  // namespace safeadapt::harness
