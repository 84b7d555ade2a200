#pragma once

// Shared helpers for the test suites: central finite differences against a
// re-run forward pass, and a gradcheck-style error measure.

#include <cmath>
#include <functional>

#include "sdmamba/tensor.hpp"

namespace test_util {

// Error relative to max(|a|, |b|, 1). Losses here are O(1), so float32
// forward noise puts an ~1e-4 absolute floor on what a central difference at
// step 1e-3 can resolve; normalizing by at least 1 keeps the relative bound
// meaningful for measurable gradients without failing on that noise floor.
inline double rel_err(double a, double b, double floor = 1.0) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite difference of a scalar-valued forward pass with respect to
// one entry of `param`. The forward is re-run from scratch for each probe.
inline double central_diff(const std::function<double()>& forward, sdmamba::Tensor param,
                           size_t index, double step = 1e-3) {
    float saved = param.mutable_data()[index];
    param.mutable_data()[index] = static_cast<float>(saved + step);
    double up = forward();
    param.mutable_data()[index] = static_cast<float>(saved - step);
    double down = forward();
    param.mutable_data()[index] = saved;
    return (up - down) / (2.0 * step);
}

} // namespace test_util
