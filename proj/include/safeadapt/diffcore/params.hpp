#pragma once

#include "safeadapt/diffcore/tape.hpp"

#include <string>
#include <vector>

namespace safeadapt::diff {

/// Named, ordered collection of learnable tensors. Order is insertion order and is stable.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  std::size_t index_of(const std::string& name) const;
  std::size_t scalar_count() const;

  const std::vector<Tensor>& tensors() const { return tensors_; }

  /// Places every parameter on the tape as a requires-grad leaf, in order.
  std::vector<Var> bind(Tape& tape) const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace safeadapt::diff
