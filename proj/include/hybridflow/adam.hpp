#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridflow/tensor.hpp"

namespace hybridflow::grad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled: p -= lr * weight_decay * p before the moment update.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

// One bias-corrected Adam update. Moments are allocated on the first call.
// Throws NumericError on a non-finite gradient; parameters are left untouched.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace hybridflow::grad
