#pragma once

#include <functional>

#include "slat/tape.hpp"

namespace slat {

/// Builds a scalar-valued graph on `tape` from the leaf `x`.
using GraphBuilder = std::function<NodeId(Tape& tape, NodeId x)>;

/// Max over coordinates of |analytic - central difference| / max(1, |central
/// difference|), with step h.
double grad_check(const GraphBuilder& build, const Tensor& point, double h = 1e-5);

}  // namespace slat
