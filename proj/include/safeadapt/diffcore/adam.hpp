#pragma once

#include "safeadapt/diffcore/params.hpp"

#include <cstdint>
#include <vector>

namespace safeadapt::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;

  static AdamState for_parameters(const ParameterSet& params, AdamConfig config = {});
};

/// One bias-corrected Adam update. Returns false (and counts a skip) when any gradient is non-finite;
/// parameters and moments are then left untouched.
bool adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace safeadapt::diff
