#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "densecount/errors.hpp"
#include "densecount/tensor.hpp"

namespace densecount {

// Ordered record of differentiable operations executed under it.
//
// Each entry owns a closure that reads its output gradient and accumulates
// into the gradients of its inputs. Closures capture tensor handles, so the
// saved intermediates live exactly as long as the tape. One tape per
// training step; a tape is replayed at most once.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string op, BackwardFn fn) {
    if (consumed_) throw ContractViolation("recording onto a tape that was already replayed");
    entries_.push_back({std::move(op), std::move(fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool consumed() const noexcept { return consumed_; }
  const std::string& op_name(std::size_t i) const { return entries_.at(i).op; }

  void clear() {
    entries_.clear();
    consumed_ = false;
  }

  // Vector-Jacobian product: seeds output's gradient and replays the tape.
  void backward_from(Tensor<T>& output, std::span<const T> seed) {
    if (seed.size() != output.numel()) {
      throw ContractViolation("seed of " + std::to_string(seed.size()) +
                              " elements for output of shape " + shape_to_string(output.shape()));
    }
    if (consumed_) throw ContractViolation("tape replayed twice");
    auto g = output.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
    consumed_ = true;
  }

 private:
  struct Entry {
    std::string op;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Populates grad for every requires_grad tensor reachable from a scalar loss.
template <typename T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
  if (!loss.is_scalar()) {
    throw ContractViolation("backward needs a scalar loss, got shape " +
                            shape_to_string(loss.shape()));
  }
  const T one = T(1);
  tape.backward_from(loss, std::span<const T>(&one, 1));
}

namespace detail {

template <typename T>
bool needs_grad(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

}  // namespace densecount
