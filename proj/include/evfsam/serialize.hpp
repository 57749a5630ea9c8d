#pragma once

#include <cstdint>
#include <iosfwd>

#include "evfsam/tensor.hpp"

namespace evfsam {

// Flat binary tensor record:
//   rank                : u64 little-endian
//   dims[rank]          : u64 little-endian each
//   values[prod(dims)]  : IEEE-754 binary64 little-endian, row-major
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

// Size in bytes of the record write_tensor produces for `shape`.
std::size_t serialized_size(const Shape& shape);

void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);

}  // namespace evfsam
