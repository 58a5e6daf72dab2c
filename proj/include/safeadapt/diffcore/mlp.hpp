#pragma once

#include "safeadapt/diffcore/params.hpp"

#include <string>
#include <vector>

namespace safeadapt::diff {

enum class Activation { relu, tanh };

/// Fully connected stack registered into a ParameterSet. Hidden layers use `act`; the last layer is linear.
/// Two evaluation paths share the parameters: a taped one for training and a plain Eigen one for inference.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& prefix, std::vector<std::size_t> sizes, Activation act, Rng& rng);

  Var forward(const std::vector<Var>& bound, Var x) const;
  Matrix forward(const ParameterSet& params, const Matrix& x) const;

  std::size_t in_dim() const { return sizes_.front(); }
  std::size_t out_dim() const { return sizes_.back(); }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> weights_;
  std::vector<std::size_t> biases_;
  Activation act_ = Activation::relu;
};

}  // namespace safeadapt::diff
