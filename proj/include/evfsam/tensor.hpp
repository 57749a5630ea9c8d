#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evfsam {

#ifdef EVFSAM_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major tensor with shared (handle) semantics, like a torch tensor:
// copying a Tensor copies the handle, clone() copies the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<Scalar> data();
  std::span<const Scalar> data() const;
  Scalar item() const;
  Scalar& operator[](std::size_t i) { return data()[i]; }
  Scalar operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  // Flags an op output as a non-leaf: requires grad, buffer allocated lazily.
  void mark_intermediate();

  // Gradient slot. Leaves created with requires_grad=true always carry a
  // (zeroed) buffer; intermediates get one lazily during backward.
  bool has_grad() const;
  std::span<Scalar> grad();
  std::span<const Scalar> grad() const;
  // Shallow const: the handle is const, the shared buffer is not.
  std::span<Scalar> ensure_grad() const;
  void zero_grad();

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };
  Impl& impl() const;
  std::shared_ptr<Impl> impl_;
};

// Bitwise comparison of shape and values.
bool identical(const Tensor& a, const Tensor& b);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace evfsam
