#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evfsam/tensor.hpp"

namespace evfsam {

// Finite-difference checks of every differentiable block on freshly
// initialized random configurations.
struct BlockGradReport {
  std::string block;
  std::size_t configs = 0;
  Scalar max_rel_error = 0;
};

// attention, multiway, projector, prompt, decoder, bce, dice
const std::vector<std::string>& gradcheck_block_names();

// `scope` is "all" or one block name; throws ConfigError otherwise.
std::vector<BlockGradReport> run_gradcheck(const std::string& scope, std::size_t n_configs = 20,
                                           std::uint64_t seed = 0);

}  // namespace evfsam
