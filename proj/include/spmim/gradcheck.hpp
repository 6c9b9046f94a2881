#pragma once

#include <functional>

#include "spmim/tensor.hpp"

namespace spmim {

// Central-difference estimate of df/dx, one coordinate at a time:
// (f(x + h e_i) - f(x - h e_i)) / 2h. Throws NumericalError if f returns a
// non-finite value.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h = 1e-5);

// |a - b| / max(|a|, |b|, floor), the comparison used by gradient checks.
double relative_error(double a, double b, double floor = 1e-6);

}  // namespace spmim
