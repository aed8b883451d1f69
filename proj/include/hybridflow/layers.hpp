#pragma once

#include <cmath>

#include "hybridflow/random.hpp"
#include "hybridflow/tape.hpp"

namespace hybridflow::grad {

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static Linear uniform_fan_in(std::size_t in, std::size_t out, Rng& rng) {
    Linear l{Tensor({out, in}), Tensor({out})};
    const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& w : l.weight.values()) w = u(rng);
    for (double& b : l.bias.values()) b = u(rng);
    return l;
  }
  static Linear zeros(std::size_t in, std::size_t out) { return Linear{Tensor({out, in}), Tensor({out})}; }

  Var apply(Tape& tape, Var x) const { return linear(x, tape.parameter(weight), tape.parameter(bias)); }
  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

}  // namespace hybridflow::grad
