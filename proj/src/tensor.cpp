#include "densecount/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "densecount/errors.hpp"

namespace densecount {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) {
    if (extent < 0) throw ContractViolation("negative extent in shape " + shape_to_string(shape));
    n *= extent;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : storage_(std::make_shared<Storage>()) {
  const auto n = shape_numel(shape);
  storage_->shape = std::move(shape);
  storage_->data.assign(static_cast<std::size_t>(n), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : storage_(std::make_shared<Storage>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::size_t>(n) != data.size()) {
    throw ContractViolation("shape " + shape_to_string(shape) + " holds " + std::to_string(n) +
                            " elements but data has " + std::to_string(data.size()));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  return storage_->shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ContractViolation("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_to_string(s));
  }
  return s[axis];
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  return storage_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  return storage_->data;
}

template <typename T>
T& Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
  const auto& s = storage_->shape;
  return storage_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + y) * s[3] + x)];
}

template <typename T>
const T& Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
  const auto& s = storage_->shape;
  return storage_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + y) * s[3] + x)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractViolation("item() on tensor of shape " + shape_to_string(shape()));
  }
  return storage_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  storage_->requires_grad = value;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), T(0));
  return storage_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!storage_) throw ContractViolation("use of undefined tensor");
  return storage_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (storage_ && !storage_->grad.empty()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
  }
}

template <typename T>
void Tensor<T>::clear_grad() {
  if (storage_) storage_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(shape(), std::vector<T>(storage_->data));
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace densecount
