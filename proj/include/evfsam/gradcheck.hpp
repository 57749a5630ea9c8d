#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "evfsam/tensor.hpp"

namespace evfsam {

struct GradCheckOptions {
  Scalar eps = 1e-5;  // central-difference step
  // Cap on probed coordinates per input (0 = all). Probed coordinates are
  // drawn deterministically from `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // Coordinates whose gradient is far below the input's largest one are
  // compared against relative_floor * max|analytic| instead of their own size.
  Scalar relative_floor = 1e-3;
  // Gradients below this are compared in absolute terms; central differences
  // carry roundoff of roughly |f| * 1e-11 at eps = 1e-5.
  Scalar absolute_floor = 1e-5;
};

// Max over probed coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// with floor = max(relative_floor * max|analytic over the input|, absolute_floor)
// where `analytic` comes from the tape and `numeric` from central differences.
// `f` must be scalar-valued and deterministic. Inputs are perturbed in place
// and restored.
Scalar grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                  const GradCheckOptions& options = {});

Scalar grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Scalar eps = 1e-5);

}  // namespace evfsam
