#pragma once

#include <algorithm>
#include <cmath>

#include "seer/ops.hpp"

namespace seer {

// Central-difference verification of reverse-mode gradients, evaluated in
// 64-bit. f must be a scalar-valued function of x alone (anything else it
// closes over is held fixed). Returns the max over coordinates of
// |analytic - central difference| / max(1, |analytic|).
template <typename F>
double grad_check(F&& f, const BasicTensor<double>& x, double eps) {
  if (eps < 1e-4 || eps > 1e-2)
    throw ContractError("grad_check: eps must lie in [1e-4, 1e-2]");

  BasicTensor<double> probe = x.detach();
  probe.set_tracked();
  Tape<double> tape;
  {
    TapeScope<double> scope(&tape);
    BasicTensor<double> loss = f(probe);
    if (loss.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
    tape.backward(loss);
  }
  const std::vector<double> analytic = probe.grad();

  TapeScope<double> no_tape(nullptr);
  BasicTensor<double> xe = x.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < xe.numel(); ++i) {
    const double saved = xe.values()[i];
    xe.values()[i] = saved + eps;
    const double fp = f(xe).item();
    xe.values()[i] = saved - eps;
    const double fm = f(xe).item();
    xe.values()[i] = saved;
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace seer
