#pragma once

#include <functional>

#include "fedlips/tensor.hpp"

namespace fedlips::numerics {

using ScalarFunction = std::function<double(const Tensor&)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per
// coordinate. Test oracle; O(2 * x.size()) evaluations of f.
Tensor finite_diff_grad(const ScalarFunction& f, const Tensor& x, double eps = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
// whose true gradient is ~0 from dividing rounding noise by ~0.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6);

}  // namespace fedlips::numerics
