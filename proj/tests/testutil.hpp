#pragma once
// Shared helpers for the test suites: finite-difference differentiation and
// relative-error comparison. These stay independent of the library's own
// backward pass so they can serve as its oracle.

#include <algorithm>
#include <cmath>
#include <functional>

namespace testutil {

// Central finite difference of f with respect to the coordinate *x.
inline double central_diff(const std::function<double()>& f, double* x, double h = 1e-5) {
    const double x0 = *x;
    *x = x0 + h;
    const double fp = f();
    *x = x0 - h;
    const double fm = f();
    *x = x0;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

}  // namespace testutil
