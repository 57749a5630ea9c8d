#include "evfsam/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evfsam/errors.hpp"

namespace evfsam {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bot = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<Scalar>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width) {
  if (mask.height == height && mask.width == width) return mask;
  Mask out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * width));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

Tensor mask_to_tensor(const Mask& mask) {
  Tensor t({mask.height, mask.width});
  for (std::size_t i = 0; i < mask.bits.size(); ++i) t[i] = mask.bits[i] ? Scalar{1} : Scalar{0};
  return t;
}

Mask binarize(const Tensor& logits, Scalar threshold) {
  if (logits.rank() != 2) throw ShapeError("binarize: expected [H, W] logits, got " + to_string(logits.shape()));
  Mask m(logits.dim(0), logits.dim(1));
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = logits[i] > threshold ? 1 : 0;
  return m;
}

}  // namespace evfsam
