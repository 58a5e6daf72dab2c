#include "safeadapt/anp/anp.hpp"

#include "safeadapt/diffcore/checkpoint.hpp"

#include <cmath>

namespace safeadapt::anp {

using diff::Tensor;
using diff::Var;

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

std::size_t idx(Eigen::Index i) { return static_cast<std::size_t>(i); }

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b, const Matrix& c) {
  Matrix out(a.rows(), a.cols() + b.cols() + c.cols());
  out << a, b, c;
  return out;
}

Vector json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> std_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void ContextSet::append(const Eigen::Ref<const RowVector>& xi, const Eigen::Ref<const RowVector>& yi) {
  if (xi.size() != x.cols() || yi.size() != y.cols()) throw ShapeError("ContextSet::append: row width mismatch");
  x.conservativeResize(x.rows() + 1, Eigen::NoChange);
  y.conservativeResize(y.rows() + 1, Eigen::NoChange);
  x.row(x.rows() - 1) = xi;
  y.row(y.rows() - 1) = yi;
}

Normalizer Normalizer::identity(Eigen::Index dx, Eigen::Index dy) {
  return {Vector::Zero(dx), Vector::Ones(dx), Vector::Ones(dy)};
}

Normalizer Normalizer::fit(const Matrix& x, const Matrix& y) {
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("Normalizer::fit: need at least two rows");
  Normalizer n;
  n.x_mean = x.colwise().mean().transpose();
  n.x_std = ((x.rowwise() - n.x_mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
  n.y_scale = y.array().square().colwise().mean().sqrt().transpose();
  for (Eigen::Index i = 0; i < n.x_std.size(); ++i)
    if (!(n.x_std[i] > 1e-8)) n.x_std[i] = 1.0;
  for (Eigen::Index i = 0; i < n.y_scale.size(); ++i)
    if (!(n.y_scale[i] > 1e-8)) n.y_scale[i] = 1.0;
  return n;
}

Matrix Normalizer::normalize_x(const Matrix& x) const {
  return ((x.rowwise() - x_mean.transpose()).array().rowwise() / x_std.transpose().array()).matrix();
}

Matrix Normalizer::normalize_y(const Matrix& y) const {
  return (y.array().rowwise() / y_scale.transpose().array()).matrix();
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"x_mean", std_vector(n.x_mean)}, {"x_std", std_vector(n.x_std)}, {"y_scale", std_vector(n.y_scale)}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  return {json_vector(j.at("x_mean")), json_vector(j.at("x_std")), json_vector(j.at("y_scale"))};
}

AnpModel::AnpModel(AnpDims dims, Normalizer norm, Rng& init_rng) : dims_(std::move(dims)), norm_(std::move(norm)) {
  if (dims_.dx <= 0 || dims_.dy <= 0 || dims_.latent <= 0 || dims_.deterministic <= 0 || dims_.hidden.empty())
    throw std::invalid_argument("AnpModel: dimensions must be positive");
  if (norm_.x_mean.size() != dims_.dx || norm_.x_std.size() != dims_.dx || norm_.y_scale.size() != dims_.dy)
    throw ShapeError("AnpModel: normalizer does not match dimensions");
  const auto dx = idx(dims_.dx), dy = idx(dims_.dy), dz = idx(dims_.latent), dr = idx(dims_.deterministic);
  const auto& h = dims_.hidden;
  const auto act = diff::Activation::relu;
  std::vector<std::size_t> embed{dx + dy};
  embed.insert(embed.end(), h.begin(), h.end());
  latent_encoder_ = diff::Mlp(params_, "latent_encoder", embed, act, init_rng);
  latent_head_ = diff::Mlp(params_, "latent_head", {h.back(), h.back(), 2 * dz}, act, init_rng);
  value_encoder_ = diff::Mlp(params_, "value_encoder", layer_sizes(dx + dy, h, dr), act, init_rng);
  key_encoder_ = diff::Mlp(params_, "key_encoder", layer_sizes(dx, h, dr), act, init_rng);
  decoder_ = diff::Mlp(params_, "decoder", layer_sizes(dx + dz + dr, h, 2 * dy), act, init_rng);
}

void AnpModel::check_dims(const Matrix& x, const Matrix* y, const char* what) const {
  if (x.cols() != dims_.dx)
    throw ShapeError(std::string(what) + ": x has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(dims_.dx));
  if (y && (y->cols() != dims_.dy || y->rows() != x.rows()))
    throw ShapeError(std::string(what) + ": y must be " + std::to_string(x.rows()) + "x" + std::to_string(dims_.dy));
}


Matrix AnpModel::self_attend(const Matrix& e) const {
  const double inv = 1.0 / std::sqrt(static_cast<double>(e.cols()));
  return softmax_rows(e * e.transpose() * inv) * e;
}

LatentGaussian AnpModel::encode_latent(const ContextSet& set) const {
  check_dims(set.x, &set.y, "encode_latent");
  if (set.count() == 0) return LatentGaussian::standard(dims_.latent);
  const Matrix s = latent_encoder_.forward(params_, hcat(norm_.normalize_x(set.x), norm_.normalize_y(set.y)));
  const Matrix head = latent_head_.forward(params_, s.colwise().mean());
  const Eigen::Index L = dims_.latent;
  const RowVector lv = head.rightCols(L).row(0).cwiseMax(diff::kLogVarMin).cwiseMin(diff::kLogVarMax);
  return {head.leftCols(L).row(0).transpose(), (0.5 * lv.array()).exp().matrix().transpose()};
}

AnpModel::ContextCache AnpModel::prepare(const ContextSet& ctx) const {
  check_dims(ctx.x, &ctx.y, "prepare");
  ContextCache c;
  c.latent = encode_latent(ctx);
  if (ctx.count() == 0) {
    c.keys = Matrix(0, dims_.deterministic);
    c.values = Matrix(0, dims_.deterministic);
    return c;
  }
  const Matrix xn = norm_.normalize_x(ctx.x);
  c.keys = key_encoder_.forward(params_, xn);
  c.values = self_attend(value_encoder_.forward(params_, hcat(xn, norm_.normalize_y(ctx.y))));
  return c;
}

Matrix AnpModel::encode_deterministic(const ContextSet& ctx, const Matrix& x_query) const {
  check_dims(x_query, nullptr, "encode_deterministic");
  const ContextCache c = prepare(ctx);
  if (ctx.count() == 0) return Matrix::Zero(x_query.rows(), dims_.deterministic);
  const Matrix q = key_encoder_.forward(params_, norm_.normalize_x(x_query));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dims_.deterministic));
  return softmax_rows(q * c.keys.transpose() * inv) * c.values;
}

PredictiveGaussian AnpModel::decode_normalized(const Matrix& xn, const Matrix& z, const Matrix& r) const {
  const Eigen::Index n = xn.rows();
  if (z.cols() != dims_.latent || (z.rows() != 1 && z.rows() != n))
    throw ShapeError("decode: z must be 1 x " + std::to_string(dims_.latent) + " or one row per query");
  if (r.rows() != n || r.cols() != dims_.deterministic) throw ShapeError("decode: representation shape mismatch");
  const Matrix zb = z.rows() == n ? z : Matrix(z.replicate(n, 1));
  const Matrix out = decoder_.forward(params_, hcat(xn, zb, r));
  const Eigen::Index dy = dims_.dy;
  const Matrix lv = out.rightCols(dy).cwiseMax(diff::kLogVarMin).cwiseMin(diff::kLogVarMax);
  PredictiveGaussian p;
  p.mean = (out.leftCols(dy).array().rowwise() * norm_.y_scale.transpose().array()).matrix();
  p.stddev = ((0.5 * lv.array()).exp().rowwise() * norm_.y_scale.transpose().array()).matrix();
  return p;
}

PredictiveGaussian AnpModel::decode(const Matrix& x_query, const Matrix& z, const Matrix& representation) const {
  check_dims(x_query, nullptr, "decode");
  return decode_normalized(norm_.normalize_x(x_query), z, representation);
}

PredictiveGaussian AnpModel::predict(const ContextSet& ctx, const Matrix& x_query, LatentMode mode, Rng* rng,
                                     const std::optional<Matrix>& noise) const {
  check_dims(x_query, nullptr, "predict");
  const ContextCache c = prepare(ctx);
  Matrix z = c.latent.mean.transpose();
  if (mode == LatentMode::sampled_latent) {
    Matrix eps;
    if (noise) {
      if (noise->rows() != 1 || noise->cols() != dims_.latent) throw ShapeError("predict: noise must be 1 x latent");
      eps = *noise;
    } else if (rng) {
      eps = standard_normal(1, dims_.latent, *rng);
    } else {
      throw std::invalid_argument("predict: sampled latent needs noise or an rng");
    }
    z += (eps.array() * c.latent.stddev.transpose().array()).matrix();
  }
  return predict_cached(c, x_query, z);
}

PredictiveGaussian AnpModel::predict_cached(const ContextCache& cache, const Matrix& x_query, const Matrix& z) const {
  check_dims(x_query, nullptr, "predict_cached");
  const Matrix xn = norm_.normalize_x(x_query);
  Matrix r;
  if (cache.keys.rows() == 0) {
    r = Matrix::Zero(xn.rows(), dims_.deterministic);
  } else {
    const Matrix q = key_encoder_.forward(params_, xn);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dims_.deterministic));
    r = softmax_rows(q * cache.keys.transpose() * inv) * cache.values;
  }
  return decode_normalized(xn, z, r);
}

AnpModel::TapedLatent AnpModel::taped_latent(diff::Tape& tape, const std::vector<Var>& bound, const Matrix& xn,
                                             const Matrix& yn) const {
  Var pairs = tape.constant(Tensor::from_matrix(hcat(xn, yn)));
  Var s = diff::mean(latent_encoder_.forward(bound, pairs), diff::Axis::rows);
  Var head = latent_head_.forward(bound, s);
  const auto L = idx(dims_.latent);
  return {diff::slice(head, 0, L), diff::clamp(diff::slice(head, L, 2 * L), diff::kLogVarMin, diff::kLogVarMax)};
}

Var AnpModel::taped_deterministic(diff::Tape& tape, const std::vector<Var>& bound, const Matrix& ctx_xn,
                                  const Matrix& ctx_yn, const Matrix& query_xn) const {
  const double inv = 1.0 / std::sqrt(static_cast<double>(dims_.deterministic));
  Var e = value_encoder_.forward(bound, tape.constant(Tensor::from_matrix(hcat(ctx_xn, ctx_yn))));
  Var v = diff::matmul(diff::softmax(diff::scale(diff::matmul(e, diff::transpose(e)), inv)), e);
  Var k = key_encoder_.forward(bound, tape.constant(Tensor::from_matrix(ctx_xn)));
  Var q = key_encoder_.forward(bound, tape.constant(Tensor::from_matrix(query_xn)));
  return diff::matmul(diff::softmax(diff::scale(diff::matmul(q, diff::transpose(k)), inv)), v);
}

AnpModel::ElboTerms AnpModel::elbo(diff::Tape& tape, const std::vector<Var>& bound, const ContextSet& ctx,
                                   const TargetBatch& tgt, const Matrix& noise) const {
  check_dims(ctx.x, &ctx.y, "elbo context");
  if (!tgt.y) throw std::invalid_argument("elbo: targets need outputs");
  check_dims(tgt.x, &*tgt.y, "elbo target");
  if (tgt.x.rows() == 0) throw std::invalid_argument("elbo: empty target batch");
  if (noise.rows() != 1 || noise.cols() != dims_.latent) throw ShapeError("elbo: noise must be 1 x latent");

  const Matrix tx = norm_.normalize_x(tgt.x);
  const Matrix ty = norm_.normalize_y(*tgt.y);
  const auto n = idx(tgt.x.rows());
  const auto L = idx(dims_.latent);

  const TapedLatent post = taped_latent(tape, bound, tx, ty);
  TapedLatent prior;
  Var r;
  if (ctx.count() == 0) {
    prior = {tape.constant(Tensor::zeros({1, L})), tape.constant(Tensor::zeros({1, L}))};
    r = tape.constant(Tensor::zeros({n, idx(dims_.deterministic)}));
  } else {
    const Matrix cx = norm_.normalize_x(ctx.x);
    const Matrix cy = norm_.normalize_y(ctx.y);
    prior = taped_latent(tape, bound, cx, cy);
    r = taped_deterministic(tape, bound, cx, cy, tx);
  }

  Var eps = tape.constant(Tensor::from_matrix(noise));
  Var z = diff::reparam_sample(post.mean, diff::scale(post.logvar, 0.5), eps);
  Var in = diff::concat({tape.constant(Tensor::from_matrix(tx)), diff::broadcast(z, {n, L}), r});
  Var out = decoder_.forward(bound, in);
  const auto dy = idx(dims_.dy);
  Var mu = diff::slice(out, 0, dy);
  Var lv = diff::clamp(diff::slice(out, dy, 2 * dy), diff::kLogVarMin, diff::kLogVarMax);

  ElboTerms t;
  t.log_likelihood = diff::gaussian_log_likelihood(tape.constant(Tensor::from_matrix(ty)), mu, lv);
  t.kl = diff::kl_diag_logvar(post.mean, post.logvar, prior.mean, prior.logvar);
  t.loss = t.kl - t.log_likelihood;
  return t;
}

nlohmann::json AnpModel::metadata() const {
  return {{"model", "anp"},
          {"dx", dims_.dx},
          {"dy", dims_.dy},
          {"hidden", dims_.hidden},
          {"latent", dims_.latent},
          {"deterministic", dims_.deterministic},
          {"normalizer", to_json(norm_)}};
}

void AnpModel::save(const std::filesystem::path& path) const { diff::save_checkpoint(path, params_, metadata()); }

AnpModel AnpModel::load(const std::filesystem::path& path) {
  const diff::Checkpoint ck = diff::load_checkpoint(path);
  const auto& m = ck.metadata;
  if (m.value("model", "") != "anp") throw std::runtime_error("checkpoint " + path.string() + " is not an ANP model");
  AnpDims dims;
  dims.dx = m.at("dx").get<Eigen::Index>();
  dims.dy = m.at("dy").get<Eigen::Index>();
  dims.hidden = m.at("hidden").get<std::vector<std::size_t>>();
  dims.latent = m.at("latent").get<Eigen::Index>();
  dims.deterministic = m.at("deterministic").get<Eigen::Index>();
  Rng unused(0);
  AnpModel model(dims, normalizer_from_json(m.at("normalizer")), unused);
  diff::assign_by_name(model.params_, ck.parameters);
  return model;
}

TrainStats train_step(AnpModel& model, diff::AdamState& adam, const std::vector<Task>& batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  diff::Tape tape;
  const auto bound = model.parameters().bind(tape);
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Matrix noise = standard_normal(1, model.dims().latent, rng);
    Var l = model.elbo(tape, bound, batch[i].context, batch[i].target, noise).loss;
    total = i == 0 ? l : total + l;
  }
  Var loss = diff::scale(total, 1.0 / static_cast<double>(batch.size()));
  TrainStats st;
  st.loss = loss.value().item();
  if (!std::isfinite(st.loss)) {
    ++adam.skipped;
    return st;
  }
  const auto grads = tape.backward(loss);
  std::vector<Tensor> g;
  g.reserve(bound.size());
  for (Var b : bound) g.push_back(grads.of(b));
  st.applied = diff::adam_step(model.parameters(), g, adam);
  return st;
}

}  // namespace safeadapt::anp
