#pragma once

#include <functional>

#include "hali/autodiff.hpp"
#include "hali/refmath.hpp"

namespace hali::gradcheck {

struct FdReport {
    double max_err = 0.0;      // worst per-element gradient error after the absolute floor
    double max_abs_diff = 0.0; // worst |analytic - fd| before the floor
    double forward_err = 0.0;  // float32 forward vs double reference, relative
    int64_t checked = 0;
};

// Central-difference check of reverse-mode gradients against the
// double-precision reference forward. float_fn builds the float32 graph and
// returns its output (any shape); ref_fn must compute the same function
// through hali::ref on the same (possibly perturbed) inputs, consuming any
// randomness in the same order. The harness projects the output onto fixed
// random weights, differentiates the float graph once, and compares every
// input element against (ref(x+h) - ref(x-h)) / (actual difference).
// Elements where |analytic - fd| <= abs_floor count as exact; the rest are
// scored relative to max(|analytic|, |fd|).
FdReport check(const std::function<Tensor(const std::vector<Tensor>&)>& float_fn,
               const std::function<ref::DTensor(const std::vector<Tensor>&)>& ref_fn,
               std::vector<Tensor> inputs, double step = 1e-3, double abs_floor = 1e-5,
               uint64_t weight_seed = 1234);

} // namespace hali::gradcheck
