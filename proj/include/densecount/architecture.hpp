#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "densecount/ops.hpp"

namespace densecount {

enum class LayerKind {
  kConv2d,
  kDepthwise,
  kPointwise,
  kMaxPool,
  kUpsample,
  kActivation,
  kBottleneck,
  kConcat,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// One row of an architecture table.
//
// Conv kinds carry their post-activation in `activation`; a kActivation layer
// applies `activation` on its own. Bottleneck rows are expanded `repeat`
// times at build time: the first block uses `stride` and in_channels, the
// rest use stride 1 and out_channels -> out_channels.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv2d;
  int kernel = 1;
  int padding = 0;
  int stride = 1;
  int in_channels = 0;
  int out_channels = 0;
  int expansion = 1;
  int repeat = 1;
  int factor = 1;
  ActivationKind activation = ActivationKind::kNone;
  // Layer number in the published table; -1 when the row is unnumbered.
  int label = -1;

  bool operator==(const LayerSpec&) const = default;
};

LayerSpec conv_layer(int kernel, int padding, int in_channels, int out_channels,
                     ActivationKind activation, int stride = 1, int label = -1);
LayerSpec pointwise_layer(int in_channels, int out_channels, ActivationKind activation,
                          int label = -1);
LayerSpec maxpool_layer(int channels, int label = -1);
LayerSpec upsample_layer(int channels, int factor);
LayerSpec concat_layer(int out_channels, int label = -1);
LayerSpec bottleneck_layer(int expansion, int in_channels, int out_channels, int repeat, int stride);

struct OutputHead {
  bool abs = true;
  int upsample = 1;

  bool operator==(const OutputHead&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  int in_channels = 3;
  // Optional multi-column front. Each column runs on the input; the first
  // backbone layer must then be a kConcat that merges them in column order.
  std::vector<std::vector<LayerSpec>> columns;
  std::vector<LayerSpec> backbone;
  OutputHead head;

  bool operator==(const ArchitectureSpec&) const = default;
};

// Throws ContractViolation when a layer's in-channels disagree with its
// producer or a concat does not sum its branches.
void validate(const ArchitectureSpec& spec);

struct FeatureShape {
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  bool operator==(const FeatureShape&) const = default;
};

// Shape of the network output for an input of the given size, computed
// from the spec alone.
FeatureShape infer_output_shape(const ArchitectureSpec& spec, std::int64_t height,
                                std::int64_t width);

// Parameter count derived in closed form from the spec (weights + biases).
std::int64_t count_parameters(const ArchitectureSpec& spec);

// Built-in presets.
ArchitectureSpec ccnn_spec(bool pruned, int output_upsample = 1);
ArchitectureSpec bl_mobilenetv2_spec();
// "ccnn", "ccnn-pruned" or "bl-mobilenetv2".
ArchitectureSpec preset_spec(std::string_view name);

std::string to_json_string(const ArchitectureSpec& spec, int indent = -1);
ArchitectureSpec architecture_from_json_string(std::string_view text);

}  // namespace densecount
