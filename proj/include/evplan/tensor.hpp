#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evplan {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::uint64_t id = 0;
};
}  // namespace detail

/// Dense row-major tensor handle. Copies share storage, which is what the
/// tape needs to route gradients back to parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  /// Product of all leading dimensions (1 for a scalar).
  std::size_t rows() const;
  /// Size of the last dimension (1 for a scalar).
  std::size_t cols() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates a zero gradient if absent and returns it.
  std::span<double> ensure_grad();
  void zero_grad();
  void clear_grad();

  std::uint64_t id() const;
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  /// Deep copy of the values; the copy has no gradient and no tape history.
  Tensor detach() const;
  /// Overwrites values in place (shapes must match).
  void assign(std::span<const double> values);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

}  // namespace evplan
