#pragma once

#include <functional>

#include "hybridflow/tape.hpp"

namespace hybridflow::grad {

// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
// f must be deterministic and return a scalar. Points sitting on a relu kink
// are not differentiable and should not be passed.
double grad_check(const std::function<Var(Var)>& f, const Tensor& point, double epsilon = 1e-5);

}  // namespace hybridflow::grad
