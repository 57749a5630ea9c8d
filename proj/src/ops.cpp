#include "evfsam/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evfsam/autodiff.hpp"
#include "evfsam/errors.hpp"

namespace evfsam {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmat(std::span<const Scalar> d, std::size_t offset, std::size_t r, std::size_t c) {
  return CMapMat(d.data() + offset, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat mmat(std::span<Scalar> d, std::size_t offset, std::size_t r, std::size_t c) {
  return MapMat(d.data() + offset, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

// Applies a pointwise function with derivative expressed via (x, y).
template <typename F, typename DF>
Tensor pointwise(const char* op, const Tensor& x, F f, DF df) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  if (detail::should_record({&x})) {
    detail::record(op, {x}, out, [x, out, df]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      auto xs = x.data();
      auto ys = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xs[i], ys[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3)))
    throw ShapeError("matmul: unsupported ranks " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t nb = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb || (batched && b.dim(0) != nb))
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor out(batched ? Shape{nb, m, n} : Shape{m, n});
  for (std::size_t i = 0; i < nb; ++i)
    mmat(out.data(), i * m * n, m, n).noalias() =
        cmat(a.data(), i * m * k, m, k) * cmat(b.data(), i * k * n, k, n);
  if (detail::should_record({&a, &b})) {
    detail::record("matmul", {a, b}, out, [a, b, out, nb, m, k, n]() mutable {
      auto gc = std::span<const Scalar>(out.grad());
      for (std::size_t i = 0; i < nb; ++i) {
        if (a.requires_grad())
          mmat(a.ensure_grad(), i * m * k, m, k).noalias() +=
              cmat(gc, i * m * n, m, n) * cmat(b.data(), i * k * n, k, n).transpose();
        if (b.requires_grad())
          mmat(b.ensure_grad(), i * k * n, k, n).noalias() +=
              cmat(a.data(), i * m * k, m, k).transpose() * cmat(gc, i * m * n, m, n);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3)
    throw ShapeError("transpose: expected rank 2 or 3, got " + to_string(x.shape()));
  const std::size_t nb = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  auto idx = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t i = 0; i < r; ++i) (*idx)[o++] = b * r * c + i * c + j;
  return gather(x, idx, x.rank() == 3 ? Shape{nb, c, r} : Shape{c, r});
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  if (detail::should_record({&a, &b})) {
    detail::record("add", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, Scalar{-1})); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  if (detail::should_record({&a, &b})) {
    detail::record("mul", {a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        auto ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, Scalar factor) {
  return pointwise(
      "scale", x, [factor](Scalar v) { return v * factor; },
      [factor](Scalar, Scalar) { return factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.dim(x.rank() - 1) != bias.dim(0))
    throw ShapeError("add_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  const std::size_t n = bias.dim(0);
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  auto bd = bias.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] + bd[i % n];
  if (detail::should_record({&x, &bias})) {
    detail::record("add_bias", {x, bias}, out, [x, bias, out, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
      }
    });
  }
  return out;
}

Tensor add_mask(const Tensor& x, const Tensor& mask) {
  if (mask.rank() != 2 || x.rank() < 2 || x.dim(x.rank() - 2) != mask.dim(0) ||
      x.dim(x.rank() - 1) != mask.dim(1))
    throw ShapeError("add_mask: " + to_string(x.shape()) + " + " + to_string(mask.shape()));
  const std::size_t n = mask.numel();
  Tensor out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  auto md = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] + md[i % n];
  if (detail::should_record({&x})) {
    detail::record("add_mask", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  return pointwise(
      "relu", x, [](Scalar v) { return v > 0 ? v : Scalar{0}; },
      [](Scalar v, Scalar) { return v > 0 ? Scalar{1} : Scalar{0}; });
}

Tensor gelu(const Tensor& x) {
  constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar k = Scalar(0.044715);
  return pointwise(
      "gelu", x,
      [](Scalar v) { return Scalar(0.5) * v * (1 + std::tanh(c * (v + k * v * v * v))); },
      [](Scalar v, Scalar) {
        const Scalar t = std::tanh(c * (v + k * v * v * v));
        return Scalar(0.5) * (1 + t) + Scalar(0.5) * v * (1 - t * t) * c * (1 + 3 * k * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise(
      "sigmoid", x,
      [](Scalar v) {
        if (v >= 0) return 1 / (1 + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (1 + e);
      },
      [](Scalar, Scalar y) { return y * (1 - y); });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + to_string(x.shape()));
  const auto& s = x.shape();
  const std::size_t n = s[axis];
  const std::size_t inner =
      std::accumulate(s.begin() + static_cast<long>(axis) + 1, s.end(), std::size_t{1}, std::multiplies<>());
  const std::size_t outer = x.numel() / (n * inner);
  Tensor out(s);
  auto xd = x.data();
  auto yd = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      Scalar z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Scalar e = std::exp(xd[base + j * inner] - mx);
        yd[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) yd[base + j * inner] /= z;
    }
  if (detail::should_record({&x})) {
    detail::record("softmax", {x}, out, [x, out, n, inner, outer]() mutable {
      auto gy = out.grad();
      auto yd = out.data();
      auto gx = x.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          Scalar dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * yd[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = base + j * inner;
            gx[p] += yd[p] * (gy[p] - dot);
          }
        }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.shape() != gamma.shape() ||
      gamma.dim(0) != x.dim(x.rank() - 1))
    throw ShapeError("layer_norm: x " + to_string(x.shape()) + ", gamma " + to_string(gamma.shape()) +
                     ", beta " + to_string(beta.shape()));
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<Scalar>>(x.numel());
  auto rstd = std::make_shared<std::vector<Scalar>>(rows);
  auto xd = x.data();
  auto yd = out.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* xr = xd.data() + r * d;
    Scalar mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Scalar>(d);
    const Scalar rs = 1 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      yd[r * d + j] = h * gd[j] + bd[j];
    }
  }
  if (detail::should_record({&x, &gamma, &beta})) {
    detail::record("layer_norm", {x, gamma, beta}, out,
                   [x, gamma, beta, out, xhat, rstd, d, rows]() mutable {
                     auto gy = out.grad();
                     auto gd = gamma.data();
                     if (gamma.requires_grad() || beta.requires_grad()) {
                       auto gg = gamma.requires_grad() ? gamma.ensure_grad() : std::span<Scalar>{};
                       auto gb = beta.requires_grad() ? beta.ensure_grad() : std::span<Scalar>{};
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) {
                           if (!gg.empty()) gg[j] += gy[r * d + j] * (*xhat)[r * d + j];
                           if (!gb.empty()) gb[j] += gy[r * d + j];
                         }
                     }
                     if (!x.requires_grad()) return;
                     auto gx = x.ensure_grad();
                     const Scalar inv_d = Scalar{1} / static_cast<Scalar>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       Scalar m1 = 0, m2 = 0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const Scalar dh = gy[r * d + j] * gd[j];
                         m1 += dh;
                         m2 += dh * (*xhat)[r * d + j];
                       }
                       m1 *= inv_d;
                       m2 *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const Scalar dh = gy[r * d + j] * gd[j];
                         gx[r * d + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
                       }
                     }
                   });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  auto xd = x.data();
  Scalar s = 0;
  for (Scalar v : xd) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::should_record({&x})) {
    detail::record("sum", {x}, out, [x, out]() mutable {
      const Scalar g = out.grad()[0];
      for (auto& v : x.ensure_grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar{1} / static_cast<Scalar>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows: expected rank 2, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor ones({1, n});
  std::fill(ones.data().begin(), ones.data().end(), Scalar{1} / static_cast<Scalar>(n));
  return reshape(matmul(ones, x), {d});
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  Tensor out(std::move(shape), std::vector<Scalar>(x.data().begin(), x.data().end()));
  if (detail::should_record({&x})) {
    detail::record("reshape", {x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape) {
  if (numel_of(shape) != indices->size())
    throw ShapeError("gather: " + std::to_string(indices->size()) + " indices for shape " + to_string(shape));
  Tensor out(std::move(shape));
  auto xd = x.data();
  auto yd = out.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < yd.size(); ++i) {
    const std::size_t j = (*indices)[i];
    if (j >= n) throw ShapeError("gather: index " + std::to_string(j) + " out of range for " + to_string(x.shape()));
    yd[i] = xd[j];
  }
  if (detail::should_record({&x})) {
    detail::record("gather", {x}, out, [x, out, indices]() mutable {
      auto g = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*indices)[i]] += g[i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin >= end || end > x.dim(0))
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     to_string(x.shape()));
  const std::size_t d = x.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>((end - begin) * d);
  std::iota(idx->begin(), idx->end(), begin * d);
  return gather(x, idx, {end - begin, d});
}

Tensor row(const Tensor& x, std::size_t i) {
  if (x.rank() != 2 || i >= x.dim(0))
    throw ShapeError("row: index " + std::to_string(i) + " of " + to_string(x.shape()));
  const std::size_t d = x.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>(d);
  std::iota(idx->begin(), idx->end(), i * d);
  return gather(x, idx, {d});
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw ShapeError("concat_rows: " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    rows += p.dim(0);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  auto yd = out.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), yd.begin() + static_cast<long>(off));
    off += p.numel();
  }
  if (detail::should_record(parts)) {
    detail::record("concat_rows", parts, out, [parts, out]() mutable {
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_vectors(const std::vector<Tensor>& parts) {
  for (const auto& p : parts)
    if (p.rank() != 1) throw ShapeError("concat_vectors: expected rank-1 input, got " + to_string(p.shape()));
  std::size_t total = 0;
  for (const auto& p : parts) total += p.numel();
  Tensor out({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<long>(off));
    off += p.numel();
  }
  if (detail::should_record(parts)) {
    detail::record("concat_vectors", parts, out, [parts, out]() mutable {
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace evfsam
