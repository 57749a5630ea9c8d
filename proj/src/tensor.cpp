#include "evfsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "evfsam/errors.hpp"

namespace evfsam {

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  check_dims(shape);
  impl_->data.assign(numel_of(shape), Scalar{0});
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  check_dims(shape);
  if (numel_of(shape) != values.size())
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<Scalar>{value}, requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1;
  return t;
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<Scalar> Tensor::data() { return impl().data; }
std::span<const Scalar> Tensor::data() const { return impl().data; }

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& i = impl();
  i.requires_grad = flag;
  if (flag && i.grad.size() != i.data.size()) i.grad.assign(i.data.size(), Scalar{0});
}

void Tensor::mark_intermediate() {
  auto& i = impl();
  i.requires_grad = true;
  i.grad.clear();
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<Scalar> Tensor::grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return impl().grad;
}

std::span<const Scalar> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return impl().grad;
}

std::span<Scalar> Tensor::ensure_grad() const {
  auto& i = impl();
  if (i.grad.size() != i.data.size()) i.grad.assign(i.data.size(), Scalar{0});
  return i.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), Scalar{0});
}

Tensor Tensor::clone() const {
  const auto& i = impl();
  return Tensor(i.shape, i.data, false);
}

bool Tensor::all_finite() const {
  const auto d = data();
  return std::all_of(d.begin(), d.end(), [](Scalar v) { return std::isfinite(v); });
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Scalar)) == 0;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Scalar m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace evfsam
