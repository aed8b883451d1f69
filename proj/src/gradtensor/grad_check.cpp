#include "hybridflow/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hybridflow/errors.hpp"

namespace hybridflow::grad {

namespace {

double evaluate(const std::function<Var(Var)>& f, const Tensor& point) {
  Tape tape;
  return f(tape.constant(point)).value().item();
}

}  // namespace

double grad_check(const std::function<Var(Var)>& f, const Tensor& point, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var loss = f(x);
    analytic = tape.backward(loss).of(x);
  }
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + epsilon;
    const double up = evaluate(f, probe);
    probe[i] = point[i] - epsilon;
    const double down = evaluate(f, probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace hybridflow::grad
