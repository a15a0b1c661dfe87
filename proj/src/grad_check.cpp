#include "slat/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "slat/error.hpp"

namespace slat {

namespace {

double evaluate(const GraphBuilder& build, const Tensor& point) {
  Tape tape;
  const NodeId x = tape.leaf(point, true);
  return tape.value(build(tape, x)).item();
}

}  // namespace

double grad_check(const GraphBuilder& build, const Tensor& point, double h) {
  if (!(h > 0.0)) throw Error("grad_check: h must be positive");
  Tape tape;
  const NodeId x = tape.leaf(point, true);
  const NodeId out = build(tape, x);
  const Gradients grads = tape.backward(out);
  const Tensor analytic = grads.has(x) ? grads.at(x) : Tensor(point.shape());

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = evaluate(build, probe);
    probe[i] = point[i] - h;
    const double down = evaluate(build, probe);
    probe[i] = point[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace slat
