#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evfsam/tensor.hpp"

namespace evfsam {

// H x W x 3 interleaved RGB, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Scalar> rgb;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, Scalar{0}) {}
  Scalar& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  Scalar at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Binary H x W mask, row-major, one byte (0/1) per pixel.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width);

// Mask as a [H, W] tensor of 0/1 values.
Tensor mask_to_tensor(const Mask& mask);
// Pixels with logit > threshold are set.
Mask binarize(const Tensor& logits, Scalar threshold = 0);

}  // namespace evfsam
