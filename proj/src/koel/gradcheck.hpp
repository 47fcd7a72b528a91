#pragma once

// Finite-difference gradient checking against the autograd engine.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "koel/tensor.hpp"

namespace koel {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;           // "name[flat_index]" of the worst coordinate
    double analytic = 0.0;       // analytic gradient at the worst coordinate
    double numeric = 0.0;        // central difference at the worst coordinate
    int checked = 0;             // total coordinates probed
    bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Probes up to max_coords coordinates per parameter (all of them when the
// tensor is small, otherwise a deterministic sample drawn from `seed`) with
// central differences.  The relative error for a coordinate is
//   |a - n| / max(|a|, |n|, 1)
// so gradients near zero are compared on an absolute scale.
// loss_fn must run a fresh forward pass and return a scalar tensor.
template <class S>
GradCheckResult grad_check(const std::function<TensorT<S>()> &loss_fn,
                           const std::vector<std::pair<std::string, TensorT<S>>> &params,
                           double eps = 1e-3, int max_coords = 64, uint64_t seed = 17);

} // namespace koel
