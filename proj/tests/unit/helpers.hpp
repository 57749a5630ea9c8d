#pragma once

#include <cmath>
#include <vector>

#include "evfsam/rng.hpp"
#include "evfsam/tensor.hpp"

namespace testing {

inline evfsam::Tensor random_tensor(evfsam::Shape shape, std::uint64_t seed, double scale = 1.0,
                                    bool requires_grad = false) {
  evfsam::Rng rng(seed);
  evfsam::Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

inline evfsam::Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) {
  return evfsam::Tensor({r, c}, std::vector<evfsam::Scalar>(v.begin(), v.end()));
}

}  // namespace testing
