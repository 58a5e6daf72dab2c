#include "safeadapt/diffcore/mlp.hpp"

namespace safeadapt::diff {

Mlp::Mlp(ParameterSet& params, const std::string& prefix, std::vector<std::size_t> sizes, Activation act, Rng& rng)
    : sizes_(std::move(sizes)), act_(act) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::string tag = prefix + ".l" + std::to_string(l);
    weights_.push_back(params.add(tag + ".w", xavier_uniform(sizes_[l], sizes_[l + 1], rng)));
    biases_.push_back(params.add(tag + ".b", Tensor::zeros({1, sizes_[l + 1]})));
  }
}

Var Mlp::forward(const std::vector<Var>& bound, Var x) const {
  if (x.value().cols() != in_dim())
    throw ShapeError("Mlp: input " + to_string(x.shape()) + " does not have " + std::to_string(in_dim()) + " columns");
  Var h = x;
  const std::size_t rows = x.value().rows();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = matmul(h, bound.at(weights_[l])) + broadcast(bound.at(biases_[l]), {rows, sizes_[l + 1]});
    if (l + 1 < weights_.size()) h = act_ == Activation::relu ? relu(h) : tanh(h);
  }
  return h;
}

Matrix Mlp::forward(const ParameterSet& params, const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != in_dim())
    throw ShapeError("Mlp: input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(in_dim()));
  Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix next = h * params[weights_[l]].as_matrix();
    next.rowwise() += params[biases_[l]].as_matrix().row(0);
    if (l + 1 < weights_.size()) {
      if (act_ == Activation::relu)
        next = next.cwiseMax(0.0);
      else
        next = next.array().tanh().matrix();
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace safeadapt::diff
