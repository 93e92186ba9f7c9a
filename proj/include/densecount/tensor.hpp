#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace densecount {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array with an optional gradient slot.
//
// Tensor is a handle: copies share storage, which is what lets the tape
// write gradients into parameters owned by a network. Use clone() for a deep
// copy. Activations are laid out NCHW, convolution weights as
// [out, in, kh, kw].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return static_cast<bool>(storage_); }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<T> data();
  std::span<const T> data() const;
  T* ptr() { return data().data(); }
  const T* ptr() const { return data().data(); }

  T& operator[](std::size_t i) { return storage_->data[i]; }
  const T& operator[](std::size_t i) const { return storage_->data[i]; }

  // 4-D NCHW accessor.
  T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x);
  const T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const;

  T item() const;

  bool requires_grad() const noexcept { return storage_ && storage_->requires_grad; }
  void set_requires_grad(bool value);

  bool has_grad() const noexcept { return storage_ && !storage_->grad.empty(); }
  // Allocates a zero gradient on first use.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  // True if both handles refer to the same storage.
  bool same(const Tensor& other) const noexcept { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace densecount
