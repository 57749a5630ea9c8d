#include "evfsam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"
#include "evfsam/rng.hpp"

namespace evfsam {

Scalar grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                  const GradCheckOptions& options) {
  std::vector<bool> had_grad;
  for (auto& x : inputs) {
    had_grad.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
    tape.backward(y);
  }

  auto eval = [&f]() {
    NoGradScope no_grad;
    return f().item();
  };

  Rng rng(options.seed);
  Scalar worst = 0;
  for (auto& x : inputs) {
    std::vector<Scalar> analytic(x.grad().begin(), x.grad().end());
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_input);
    }
    Scalar scale = 0;
    for (Scalar a : analytic) scale = std::max(scale, std::abs(a));
    const Scalar floor = std::max(options.relative_floor * scale, options.absolute_floor);
    auto d = x.data();
    for (std::size_t i : coords) {
      const Scalar saved = d[i];
      d[i] = saved + options.eps;
      const Scalar plus = eval();
      d[i] = saved - options.eps;
      const Scalar minus = eval();
      d[i] = saved;
      const Scalar numeric = (plus - minus) / (2 * options.eps);
      const Scalar denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].zero_grad();
    if (!had_grad[k]) inputs[k].set_requires_grad(false);
  }
  return worst;
}

Scalar grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Scalar eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check([&f, x]() { return f(x); }, {x}, options);
}

}  // namespace evfsam
