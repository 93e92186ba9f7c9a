#include "densecount/network.hpp"

#include <cmath>
#include <random>

#include "densecount/errors.hpp"
#include "densecount/ops.hpp"

namespace densecount {
namespace {

template <typename T>
ConvParams<T> make_conv(std::int64_t out, std::int64_t in, std::int64_t kernel) {
  return {Tensor<T>(Shape{out, in, kernel, kernel}), Tensor<T>(Shape{out})};
}

template <typename T>
std::vector<ConvParams<T>> make_layer_params(const LayerSpec& l) {
  std::vector<ConvParams<T>> params;
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kPointwise:
      params.push_back(make_conv<T>(l.out_channels, l.in_channels, l.kernel));
      break;
    case LayerKind::kDepthwise:
      params.push_back(make_conv<T>(l.in_channels, 1, l.kernel));
      break;
    case LayerKind::kBottleneck:
      for (int r = 0; r < l.repeat; ++r) {
        const std::int64_t in = r == 0 ? l.in_channels : l.out_channels;
        const std::int64_t hidden = in * l.expansion;
        if (l.expansion != 1) params.push_back(make_conv<T>(hidden, in, 1));
        params.push_back(make_conv<T>(hidden, 1, l.kernel));
        params.push_back(make_conv<T>(l.out_channels, hidden, 1));
      }
      break;
    default:
      break;
  }
  return params;
}

}  // namespace

template <typename T>
Network<T>::Network(ArchitectureSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  for (const auto& column : spec_.columns) {
    std::vector<std::vector<ConvParams<T>>> layers;
    for (const auto& l : column) layers.push_back(make_layer_params<T>(l));
    column_params_.push_back(std::move(layers));
  }
  for (const auto& l : spec_.backbone) backbone_params_.push_back(make_layer_params<T>(l));
}

template <typename T>
Tensor<T> Network<T>::run_layer(const LayerSpec& l, std::span<const ConvParams<T>> params,
                                Tensor<T> x, Tape<T>* tape) const {
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kPointwise: {
      x = conv2d(x, params[0].weight, params[0].bias, {l.stride, l.padding, l.padding}, tape);
      return l.activation == ActivationKind::kNone ? x : activation(x, l.activation, tape);
    }
    case LayerKind::kDepthwise: {
      x = depthwise_conv2d(x, params[0].weight, params[0].bias, {l.stride, l.padding, l.padding},
                           tape);
      return l.activation == ActivationKind::kNone ? x : activation(x, l.activation, tape);
    }
    case LayerKind::kMaxPool:
      return maxpool2d(x, tape);
    case LayerKind::kUpsample:
      return bilinear_upsample(x, l.factor, tape);
    case LayerKind::kActivation:
      return activation(x, l.activation, tape);
    case LayerKind::kConcat:
      return x;
    case LayerKind::kBottleneck: {
      std::size_t next = 0;
      for (int r = 0; r < l.repeat; ++r) {
        const int stride = r == 0 ? l.stride : 1;
        const int in = r == 0 ? l.in_channels : l.out_channels;
        Tensor<T> h = x;
        if (l.expansion != 1) {
          const auto& e = params[next++];
          h = activation(conv2d(h, e.weight, e.bias, {1, 0, 0}, tape), l.activation, tape);
        }
        const auto& d = params[next++];
        h = activation(depthwise_conv2d(h, d.weight, d.bias, {stride, l.padding, l.padding}, tape),
                       l.activation, tape);
        const auto& p = params[next++];
        h = conv2d(h, p.weight, p.bias, {1, 0, 0}, tape);
        if (stride == 1 && in == l.out_channels) h = add(h, x, tape);
        x = h;
      }
      return x;
    }
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::forward_front(const Tensor<T>& input, Tape<T>* tape) const {
  if (input.ndim() != 4 || input.dim(1) != spec_.in_channels) {
    throw ContractViolation("network '" + spec_.name + "' expects [N," +
                            std::to_string(spec_.in_channels) + ",H,W] input, got " +
                            shape_to_string(input.shape()));
  }
  if (spec_.columns.empty()) return input;
  std::vector<Tensor<T>> outputs;
  for (std::size_t c = 0; c < spec_.columns.size(); ++c) {
    Tensor<T> x = input;
    for (std::size_t i = 0; i < spec_.columns[c].size(); ++i) {
      x = run_layer(spec_.columns[c][i], column_params_[c][i], x, tape);
    }
    outputs.push_back(std::move(x));
  }
  return concat_channels(outputs, tape);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, Tape<T>* tape) const {
  Tensor<T> x = forward_front(input, tape);
  for (std::size_t i = 0; i < spec_.backbone.size(); ++i) {
    x = run_layer(spec_.backbone[i], backbone_params_[i], x, tape);
  }
  if (spec_.head.abs) x = activation(x, ActivationKind::kAbs, tape);
  if (spec_.head.upsample > 1) x = bilinear_upsample(x, spec_.head.upsample, tape);
  return x;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::parameters() const {
  std::vector<Tensor<T>> out;
  auto append = [&out](const std::vector<ConvParams<T>>& layer) {
    for (const auto& p : layer) {
      out.push_back(p.weight);
      out.push_back(p.bias);
    }
  };
  for (const auto& column : column_params_) {
    for (const auto& layer : column) append(layer);
  }
  for (const auto& layer : backbone_params_) append(layer);
  return out;
}

template <typename T>
std::int64_t Network<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += static_cast<std::int64_t>(p.numel());
  return total;
}

template <typename T>
std::span<ConvParams<T>> Network<T>::layer_params(LayerRef ref) {
  if (ref.column >= 0) return column_params_.at(static_cast<std::size_t>(ref.column)).at(ref.index);
  return backbone_params_.at(ref.index);
}

template <typename T>
std::span<const ConvParams<T>> Network<T>::layer_params(LayerRef ref) const {
  if (ref.column >= 0) return column_params_.at(static_cast<std::size_t>(ref.column)).at(ref.index);
  return backbone_params_.at(ref.index);
}

template <typename T>
void Network<T>::set_requires_grad(bool value) {
  for (auto& p : parameters()) p.set_requires_grad(value);
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

template <typename T>
Network<T> Network<T>::clone() const {
  Network<T> copy(spec_);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].data();
    std::copy(s.begin(), s.end(), dst[i].data().begin());
    dst[i].set_requires_grad(src[i].requires_grad());
  }
  return copy;
}

template class Network<float>;
template class Network<double>;

Network<float> build_ccnn(bool pruned) { return Network<float>(ccnn_spec(pruned)); }

Network<float> build_bl_mobilenetv2() { return Network<float>(bl_mobilenetv2_spec()); }

template <typename T>
void kaiming_init(Network<T>& network, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto params = network.parameters();
  for (std::size_t i = 0; i < params.size(); i += 2) {
    auto& weight = params[i];
    const double fan_in = static_cast<double>(weight.dim(1) * weight.dim(2) * weight.dim(3));
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (T& w : weight.data()) w = static_cast<T>(normal(rng));
    for (T& b : params[i + 1].data()) b = T(0);
  }
}

template void kaiming_init(Network<float>&, std::uint64_t);
template void kaiming_init(Network<double>&, std::uint64_t);

}  // namespace densecount
