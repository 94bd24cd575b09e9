#include "evplan/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "evplan/error.hpp"

namespace evplan {

namespace {
std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
  }
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<detail::TensorImpl>()) {
  check_shape(shape);
  impl_->values.assign(numel(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
  impl_->id = next_tensor_id();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  check_shape(shape);
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
  impl_->id = next_tensor_id();
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->values.size(); }

std::size_t Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.size() <= 1) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

std::size_t Tensor::cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }

std::span<double> Tensor::values() { return impl_->values; }
std::span<const double> Tensor::values() const { return impl_->values; }

double Tensor::item() const {
  if (impl_->values.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(impl_->shape));
  }
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<double> Tensor::grad() { return impl_->grad; }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

std::uint64_t Tensor::id() const { return impl_->id; }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values, false); }

void Tensor::assign(std::span<const double> values) {
  if (values.size() != impl_->values.size()) {
    throw DimensionError("assign: expected " + std::to_string(impl_->values.size()) + " values, got " +
                         std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), impl_->values.begin());
}

}  // namespace evplan
