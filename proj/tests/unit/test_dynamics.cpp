#include <doctest.h>

#include "safeadapt/dynamics/dynamics.hpp"
#include "safeadapt/envs/cartpole.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace safeadapt;
using namespace safeadapt::dyn;

namespace {

std::shared_ptr<const env::Environment> cartpole() { return std::make_shared<env::CartPole>(); }

struct Batch {
  Matrix s, a, s_next;
};

// Random-action cart-pole transitions at the given parameters.
Batch rollouts(const env::Environment& e, const env::EnvParams& p, int episodes, int steps, Rng& rng) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  const auto n = static_cast<Eigen::Index>(episodes * steps);
  Batch b{Matrix(n, 4), Matrix(n, 1), Matrix(n, 4)};
  Eigen::Index row = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector s = e.initial_state(rng);
    for (int t = 0; t < steps; ++t, ++row) {
      const Vector a = Vector::Constant(1, u(rng));
      const auto r = e.step(s, a, p);
      b.s.row(row) = s.transpose();
      b.a.row(row) = a.transpose();
      b.s_next.row(row) = r.next_state.transpose();
      s = r.next_state;
    }
  }
  return b;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

anp::Normalizer fit_normalizer(const Batch& b) { return anp::Normalizer::fit(hcat(b.s, b.a), b.s_next - b.s); }

anp::AnpModel small_anp(std::uint64_t seed, const anp::Normalizer& n) {
  anp::AnpDims d;
  d.dx = 5;
  d.dy = 4;
  d.hidden = {32, 32};
  Rng init(seed);
  return anp::AnpModel(d, n, init);
}

}  // namespace

TEST_CASE("analytic prior") {
  const auto e = cartpole();
  const PriorModel h = PriorModel::analytic(e, e->nominal_params());
  CHECK(h.deterministic());
  Matrix s(1, 4);
  s << 0, 0, std::numbers::pi, 0;
  const auto p = h.predict(s, Matrix::Zero(1, 1));
  CHECK((p.mean - s).cwiseAbs().maxCoeff() <= 1e-12);
  Rng rng(1);
  const Batch b = rollouts(*e, e->nominal_params(), 2, 20, rng);
  CHECK(h.predict(b.s, b.a).stddev == Matrix::Zero(40, 4));
  s(0, 1) = std::nan("");
  CHECK_THROWS_AS(h.predict(s, Matrix::Zero(1, 1)), DomainError);
}

TEST_CASE("residual targets against the analytic prior") {
  const auto e = cartpole();
  const PriorModel h = PriorModel::analytic(e, e->nominal_params());
  Rng rng(2);
  SUBCASE("nominal ground truth gives zero residuals") {
    const Batch b = rollouts(*e, e->nominal_params(), 3, 30, rng);
    CHECK(residual_target(h, b.s, b.a, b.s_next) == Matrix::Zero(90, 4));
  }
  SUBCASE("a longer pole shows up in the angular rate") {
    env::EnvParams perturbed{Vector(3)};
    perturbed.values << 1.0, 0.6, 0.6;
    const Batch b = rollouts(*e, perturbed, 3, 30, rng);
    const Matrix y = residual_target(h, b.s, b.a, b.s_next);
    // Paired simulation oracle: step each stored state under both parameter sets.
    for (Eigen::Index i = 0; i < b.s.rows(); ++i) {
      const Vector si = b.s.row(i).transpose(), ai = b.a.row(i).transpose();
      const Vector expect = e->step(si, ai, perturbed).next_state - e->step(si, ai, e->nominal_params()).next_state;
      CHECK((y.row(i).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(y.col(3).cwiseAbs().maxCoeff() > 1e-2);
  }
  SUBCASE("adding the prior mean back reconstructs the next state") {
    env::EnvParams perturbed{Vector::Constant(3, 0.3)};
    const Batch b = rollouts(*e, perturbed, 2, 50, rng);
    const Matrix back = residual_target(h, b.s, b.a, b.s_next) + h.mean(b.s, b.a);
    const Matrix err = (back - b.s_next).cwiseAbs();
    const Matrix ulp = b.s_next.cwiseAbs().cwiseMax(1.0) * std::numeric_limits<double>::epsilon();
    CHECK((err.array() <= 2.0 * ulp.array()).all());
  }
}

TEST_CASE("g = 0 leaves the prior unchanged") {
  const auto e = cartpole();
  Rng data(3);
  const Batch b = rollouts(*e, e->nominal_params(), 2, 20, data);
  Rng init(4);
  PriorModel h = PriorModel::learned(4, 1, {16, 16}, fit_normalizer(b), init);
  const CompositeModel f(h, nullptr);
  Rng r1(5), r2(5);
  const Matrix composite = f.sample_next(b.s, b.a, nullptr, Matrix(), r1);
  const auto p = h.predict(b.s, b.a);
  const Matrix prior_only = p.mean + (p.stddev.array() * standard_normal(40, 4, r2).array()).matrix();
  CHECK(composite == prior_only);
  CHECK(f.mean_next(b.s, b.a, nullptr, Matrix()) == h.mean(b.s, b.a));

  // Analytic prior and no disturbance: deterministic.
  const CompositeModel exact(PriorModel::analytic(e, e->nominal_params()), nullptr);
  CHECK(exact.composite_predict(b.s, b.a, anp::ContextSet::empty(5, 4), r1) ==
        exact.composite_predict(b.s, b.a, anp::ContextSet::empty(5, 4), r2));
}

TEST_CASE("Monte Carlo mean of the composite equals the sum of component means") {
  const auto e = cartpole();
  Rng data(6);
  const Batch b = rollouts(*e, e->nominal_params(), 2, 20, data);
  const auto norm = fit_normalizer(b);
  Rng init(7);
  const CompositeModel f(PriorModel::learned(4, 1, {16, 16}, norm, init),
                         std::make_shared<anp::AnpModel>(small_anp(8, norm)));
  const anp::ContextSet ctx{hcat(b.s, b.a).topRows(5), (b.s_next - b.s).topRows(5)};
  const auto cache = f.disturbance()->prepare(ctx);
  Rng rng(9);
  const Matrix z = sample_latents(cache, 1, rng);
  const Eigen::Index n = 10000;
  const Matrix s = b.s.row(7).replicate(n, 1), a = b.a.row(7).replicate(n, 1);
  const Matrix draws = f.sample_next(s, a, &cache, z.replicate(n, 1), rng);
  const RowVector mean = draws.colwise().mean();
  const RowVector sd = ((draws.rowwise() - mean).array().square().colwise().sum() / (n - 1)).sqrt();
  const RowVector expect = f.mean_next(b.s.row(7), b.a.row(7), &cache, z);
  for (Eigen::Index k = 0; k < 4; ++k) CHECK(std::abs(mean[k] - expect[k]) <= 3.0 * sd[k] / std::sqrt(double(n)));
}

TEST_CASE("learned prior fits nominal dynamics") {
  const auto e = cartpole();
  Rng data(10);
  const Batch train = rollouts(*e, e->nominal_params(), 30, 100, data);
  const Batch test = rollouts(*e, e->nominal_params(), 5, 100, data);
  const auto norm = fit_normalizer(train);
  Rng init(11);
  PriorModel h = PriorModel::learned(4, 1, {64, 64}, norm, init);
  auto adam = diff::AdamState::for_parameters(h.parameters());
  std::uniform_int_distribution<Eigen::Index> pick(0, train.s.rows() - 1);
  Matrix s(128, 4), a(128, 1), sn(128, 4);
  for (int step = 0; step < 3000; ++step) {
    for (Eigen::Index i = 0; i < 128; ++i) {
      const auto r = pick(data);
      s.row(i) = train.s.row(r);
      a.row(i) = train.a.row(r);
      sn.row(i) = train.s_next.row(r);
    }
    h.train_step(adam, s, a, sn);
  }
  // The analytic oracle has zero error on nominal data.
  const Matrix err = norm.normalize_y(h.mean(test.s, test.a) - test.s_next);
  const double rms = std::sqrt(err.array().square().mean());
  MESSAGE("learned prior normalized RMS error " << rms);
  CHECK(rms < 0.05);
}

TEST_CASE("a memorized residual reproduces the next state") {
  const auto e = cartpole();
  env::EnvParams perturbed{Vector::Constant(3, 0.9)};
  Rng data(12);
  const Batch b = rollouts(*e, perturbed, 1, 12, data);
  const PriorModel h = PriorModel::analytic(e, e->nominal_params());
  const Matrix y = residual_target(h, b.s, b.a, b.s_next);
  const Matrix x = hcat(b.s, b.a);
  anp::Normalizer norm = anp::Normalizer::fit(x, y);
  auto g = std::make_shared<anp::AnpModel>(small_anp(13, norm));
  auto adam = diff::AdamState::for_parameters(g->parameters(), {.learning_rate = 3e-3});
  const anp::Task task{{x, y}, {x, y}};
  Rng rng(14);
  for (int step = 0; step < 1500; ++step) anp::train_step(*g, adam, {task}, rng);
  const CompositeModel f(h, g);
  const auto cache = g->prepare(task.context);
  const Matrix pred = f.mean_next(b.s, b.a, &cache, cache.latent.mean.transpose());
  const double err = (pred - b.s_next).cwiseAbs().maxCoeff();
  const double scale = y.cwiseAbs().maxCoeff();
  MESSAGE("memorized residual error " << err << " vs residual scale " << scale);
  CHECK(err < 0.1 * scale);
}

TEST_CASE("prior and composite checkpoints") {
  const auto e = cartpole();
  Rng data(15);
  const Batch b = rollouts(*e, e->nominal_params(), 1, 30, data);
  const auto norm = fit_normalizer(b);
  Rng init(16);
  const CompositeModel f(PriorModel::learned(4, 1, {8, 8}, norm, init),
                         std::make_shared<anp::AnpModel>(small_anp(17, norm)));
  const auto dir = std::filesystem::temp_directory_path() / "safeadapt_composite";
  std::filesystem::remove_all(dir);
  f.save(dir);
  const CompositeModel back = CompositeModel::load(dir, e);
  CHECK(back.prior().parameters() == f.prior().parameters());
  CHECK(back.disturbance()->parameters() == f.disturbance()->parameters());

  const CompositeModel exact(PriorModel::analytic(e, e->nominal_params()), nullptr);
  exact.save(dir);
  std::filesystem::remove(dir / "disturbance.json");
  const CompositeModel exact_back = CompositeModel::load(dir, e);
  CHECK(exact_back.prior().deterministic());
  CHECK(exact_back.disturbance() == nullptr);
  CHECK(exact_back.prior().mean(b.s, b.a) == exact.prior().mean(b.s, b.a));
  std::filesystem::remove_all(dir);
}
