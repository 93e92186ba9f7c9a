#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "densecount/architecture.hpp"
#include "densecount/tape.hpp"
#include "densecount/tensor.hpp"

namespace densecount {

template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

// Addresses one LayerSpec: column >= 0 selects a front column, -1 the backbone.
struct LayerRef {
  int column = -1;
  std::size_t index = 0;
};

// A runnable network instantiated from an ArchitectureSpec.
//
// Parameters are stored per spec layer in declaration order (columns first,
// then backbone); within a layer, conv groups appear in execution order and
// each group lists its weight before its bias. Bottleneck rows own one group
// per conv of every repeated block: expand (omitted when t = 1), depthwise,
// project.
template <typename T>
class Network {
 public:
  Network() = default;
  // Builds zero-valued parameters; call kaiming_init or load weights afterwards.
  explicit Network(ArchitectureSpec spec);

  const ArchitectureSpec& spec() const noexcept { return spec_; }

  Tensor<T> forward(const Tensor<T>& input, Tape<T>* tape = nullptr) const;
  // Output of the merged multi-column front (the opening concat), or the
  // input itself when the spec has no columns.
  Tensor<T> forward_front(const Tensor<T>& input, Tape<T>* tape = nullptr) const;

  std::vector<Tensor<T>> parameters() const;
  std::int64_t param_count() const;

  std::span<ConvParams<T>> layer_params(LayerRef ref);
  std::span<const ConvParams<T>> layer_params(LayerRef ref) const;

  void set_requires_grad(bool value);
  void zero_grad();
  Network clone() const;

 private:
  Tensor<T> run_layer(const LayerSpec& layer, std::span<const ConvParams<T>> params,
                      Tensor<T> x, Tape<T>* tape) const;

  ArchitectureSpec spec_;
  std::vector<std::vector<std::vector<ConvParams<T>>>> column_params_;
  std::vector<std::vector<ConvParams<T>>> backbone_params_;
};

extern template class Network<float>;
extern template class Network<double>;

Network<float> build_ccnn(bool pruned);
Network<float> build_bl_mobilenetv2();

// Conv weights ~ N(0, 2 / fan_in) with fan_in = in_channels * kH * kW; biases 0.
template <typename T>
void kaiming_init(Network<T>& network, std::uint64_t seed);

template <typename T>
std::int64_t param_count(const Network<T>& network) {
  return network.param_count();
}

}  // namespace densecount
