#include "evfsam/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "evfsam/errors.hpp"

namespace evfsam {

namespace {
constexpr std::uint64_t kMaxRank = 16;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError("unexpected end of tensor stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.rank());
  for (auto d : t.shape()) write_u64(os, d);
  for (Scalar v : t.data()) write_u64(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  if (!os) throw FormatError("failed to write tensor");
}

Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = read_u64(is);
  if (rank > kMaxRank) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_u64(is);
    if (d == 0) throw FormatError("zero dimension in tensor header");
  }
  std::vector<Scalar> values(numel_of(shape));
  for (auto& v : values) v = static_cast<Scalar>(std::bit_cast<double>(read_u64(is)));
  return Tensor(std::move(shape), std::move(values));
}

std::size_t serialized_size(const Shape& shape) { return 8 * (1 + shape.size() + numel_of(shape)); }

}  // namespace evfsam
