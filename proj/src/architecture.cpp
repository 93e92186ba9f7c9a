#include "densecount/architecture.hpp"

#include <string>

#include "densecount/errors.hpp"
#include "json.hpp"

namespace densecount {

using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDepthwise: return "depthwise";
    case LayerKind::kPointwise: return "pointwise";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kBottleneck: return "bottleneck";
    case LayerKind::kConcat: return "concat";
  }
  return "conv2d";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::kConv2d, LayerKind::kDepthwise, LayerKind::kPointwise,
                    LayerKind::kMaxPool, LayerKind::kUpsample, LayerKind::kActivation,
                    LayerKind::kBottleneck, LayerKind::kConcat}) {
    if (to_string(kind) == name) return kind;
  }
  throw ArgumentError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec conv_layer(int kernel, int padding, int in_channels, int out_channels,
                     ActivationKind activation, int stride, int label) {
  LayerSpec l;
  l.kind = LayerKind::kConv2d;
  l.kernel = kernel;
  l.padding = padding;
  l.stride = stride;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.activation = activation;
  l.label = label;
  return l;
}

LayerSpec pointwise_layer(int in_channels, int out_channels, ActivationKind activation, int label) {
  LayerSpec l = conv_layer(1, 0, in_channels, out_channels, activation, 1, label);
  l.kind = LayerKind::kPointwise;
  return l;
}

LayerSpec maxpool_layer(int channels, int label) {
  LayerSpec l;
  l.kind = LayerKind::kMaxPool;
  l.kernel = 2;
  l.stride = 2;
  l.in_channels = channels;
  l.out_channels = channels;
  l.label = label;
  return l;
}

LayerSpec upsample_layer(int channels, int factor) {
  LayerSpec l;
  l.kind = LayerKind::kUpsample;
  l.in_channels = channels;
  l.out_channels = channels;
  l.factor = factor;
  return l;
}

LayerSpec concat_layer(int out_channels, int label) {
  LayerSpec l;
  l.kind = LayerKind::kConcat;
  l.in_channels = out_channels;
  l.out_channels = out_channels;
  l.label = label;
  return l;
}

LayerSpec bottleneck_layer(int expansion, int in_channels, int out_channels, int repeat, int stride) {
  LayerSpec l;
  l.kind = LayerKind::kBottleneck;
  l.kernel = 3;
  l.padding = 1;
  l.stride = stride;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.expansion = expansion;
  l.repeat = repeat;
  l.activation = ActivationKind::kRelu6;
  return l;
}

namespace {

std::string describe(const LayerSpec& l, std::size_t index) {
  std::string s = std::string(to_string(l.kind)) + " #" + std::to_string(index);
  if (l.label >= 0) s += " (layer " + std::to_string(l.label) + ")";
  return s;
}

std::int64_t conv_out(std::int64_t size, int kernel, int padding, int stride, const std::string& where) {
  if (size + 2 * padding < kernel) {
    throw ContractViolation(where + ": spatial size " + std::to_string(size) +
                            " too small for kernel " + std::to_string(kernel));
  }
  return (size + 2 * padding - kernel) / stride + 1;
}

FeatureShape apply_layer(const LayerSpec& l, FeatureShape in, const std::string& where) {
  FeatureShape out = in;
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kPointwise:
    case LayerKind::kDepthwise:
      out.height = conv_out(in.height, l.kernel, l.padding, l.stride, where);
      out.width = conv_out(in.width, l.kernel, l.padding, l.stride, where);
      out.channels = l.out_channels;
      break;
    case LayerKind::kMaxPool:
      if (in.height < 2 || in.width < 2) throw ContractViolation(where + ": maxpool on <2 extent");
      out.height = in.height / 2;
      out.width = in.width / 2;
      break;
    case LayerKind::kUpsample:
      out.height = in.height * l.factor;
      out.width = in.width * l.factor;
      break;
    case LayerKind::kBottleneck:
      for (int r = 0; r < l.repeat; ++r) {
        const int stride = r == 0 ? l.stride : 1;
        out.height = conv_out(out.height, l.kernel, l.padding, stride, where);
        out.width = conv_out(out.width, l.kernel, l.padding, stride, where);
      }
      out.channels = l.out_channels;
      break;
    case LayerKind::kActivation:
    case LayerKind::kConcat:
      break;
  }
  return out;
}

void check_layer(const LayerSpec& l, int producer_channels, const std::string& where) {
  if (l.in_channels != producer_channels) {
    throw ContractViolation(where + " expects " + std::to_string(l.in_channels) +
                            " input channels but its producer emits " +
                            std::to_string(producer_channels));
  }
  if (l.out_channels <= 0) throw ContractViolation(where + " has no output channels");
  if (l.stride <= 0) throw ContractViolation(where + " has non-positive stride");
  const bool shape_preserving = l.kind == LayerKind::kMaxPool || l.kind == LayerKind::kUpsample ||
                                l.kind == LayerKind::kActivation ||
                                l.kind == LayerKind::kDepthwise;
  if (shape_preserving && l.in_channels != l.out_channels) {
    throw ContractViolation(where + " cannot change the channel count");
  }
  if (l.kind == LayerKind::kUpsample && l.factor < 1) {
    throw ContractViolation(where + " has upsample factor < 1");
  }
  if (l.kind == LayerKind::kBottleneck && (l.expansion < 1 || l.repeat < 1)) {
    throw ContractViolation(where + " needs expansion >= 1 and repeat >= 1");
  }
}

template <typename Visit>
void walk(const ArchitectureSpec& spec, Visit&& visit) {
  int channels = spec.in_channels;
  int column_sum = 0;
  for (std::size_t c = 0; c < spec.columns.size(); ++c) {
    int col_channels = spec.in_channels;
    for (std::size_t i = 0; i < spec.columns[c].size(); ++i) {
      const auto& l = spec.columns[c][i];
      const std::string where = "column " + std::to_string(c) + " " + describe(l, i);
      check_layer(l, col_channels, where);
      visit(l, static_cast<int>(c), where);
      col_channels = l.out_channels;
    }
    column_sum += col_channels;
  }
  for (std::size_t i = 0; i < spec.backbone.size(); ++i) {
    const auto& l = spec.backbone[i];
    const std::string where = "backbone " + describe(l, i);
    if (l.kind == LayerKind::kConcat) {
      if (i != 0 || spec.columns.empty()) {
        throw ContractViolation(where + ": concat must open the backbone of a multi-column spec");
      }
      if (l.out_channels != column_sum) {
        throw ContractViolation(where + " declares " + std::to_string(l.out_channels) +
                                " channels but its columns sum to " + std::to_string(column_sum));
      }
      channels = column_sum;
    }
    check_layer(l, channels, where);
    visit(l, -1, where);
    channels = l.out_channels;
  }
  if (!spec.columns.empty() &&
      (spec.backbone.empty() || spec.backbone.front().kind != LayerKind::kConcat)) {
    throw ContractViolation("multi-column spec '" + spec.name + "' lacks an opening concat");
  }
}

std::int64_t layer_parameters(const LayerSpec& l) {
  const std::int64_t k2 = static_cast<std::int64_t>(l.kernel) * l.kernel;
  switch (l.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kPointwise:
      return k2 * l.in_channels * l.out_channels + l.out_channels;
    case LayerKind::kDepthwise:
      return k2 * l.in_channels + l.in_channels;
    case LayerKind::kBottleneck: {
      std::int64_t total = 0;
      for (int r = 0; r < l.repeat; ++r) {
        const std::int64_t in = r == 0 ? l.in_channels : l.out_channels;
        const std::int64_t hidden = in * l.expansion;
        if (l.expansion != 1) total += in * hidden + hidden;
        total += k2 * hidden + hidden;
        total += hidden * l.out_channels + l.out_channels;
      }
      return total;
    }
    default:
      return 0;
  }
}

json layer_to_json(const LayerSpec& l) {
  return json{{"kind", to_string(l.kind)},
              {"kernel", l.kernel},
              {"padding", l.padding},
              {"stride", l.stride},
              {"in", l.in_channels},
              {"out", l.out_channels},
              {"expansion", l.expansion},
              {"repeat", l.repeat},
              {"factor", l.factor},
              {"activation", to_string(l.activation)},
              {"label", l.label}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.kernel = j.value("kernel", 1);
  l.padding = j.value("padding", 0);
  l.stride = j.value("stride", 1);
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  l.expansion = j.value("expansion", 1);
  l.repeat = j.value("repeat", 1);
  l.factor = j.value("factor", 1);
  l.activation = activation_from_string(j.value("activation", std::string("none")));
  l.label = j.value("label", -1);
  return l;
}

}  // namespace

void validate(const ArchitectureSpec& spec) {
  walk(spec, [](const LayerSpec&, int, const std::string&) {});
}

FeatureShape infer_output_shape(const ArchitectureSpec& spec, std::int64_t height, std::int64_t width) {
  validate(spec);
  const FeatureShape input{spec.in_channels, height, width};
  FeatureShape merged{0, -1, -1};
  for (std::size_t c = 0; c < spec.columns.size(); ++c) {
    FeatureShape s = input;
    for (std::size_t i = 0; i < spec.columns[c].size(); ++i) {
      s = apply_layer(spec.columns[c][i], s, "column " + std::to_string(c));
    }
    if (merged.height >= 0 && (s.height != merged.height || s.width != merged.width)) {
      throw ContractViolation("columns disagree on spatial size");
    }
    merged = {merged.channels + s.channels, s.height, s.width};
  }
  FeatureShape s = spec.columns.empty() ? input : merged;
  for (std::size_t i = 0; i < spec.backbone.size(); ++i) {
    s = apply_layer(spec.backbone[i], s, describe(spec.backbone[i], i));
  }
  s.height *= spec.head.upsample;
  s.width *= spec.head.upsample;
  return s;
}

std::int64_t count_parameters(const ArchitectureSpec& spec) {
  std::int64_t total = 0;
  walk(spec, [&](const LayerSpec& l, int, const std::string&) { total += layer_parameters(l); });
  return total;
}

ArchitectureSpec ccnn_spec(bool pruned, int output_upsample) {
  const int c1 = pruned ? 38 : 40;
  const int c4 = pruned ? 38 : 40;
  const int c7 = pruned ? 2 : 10;
  const auto relu = ActivationKind::kRelu;

  ArchitectureSpec spec;
  spec.name = pruned ? "ccnn-pruned" : "ccnn";
  spec.in_channels = 3;
  spec.columns = {
      {conv_layer(9, 4, 3, 10, relu, 1, 0), maxpool_layer(10)},
      {conv_layer(7, 3, 3, 14, relu, 1, 0), maxpool_layer(14)},
      {conv_layer(5, 2, 3, 16, relu, 1, 0), maxpool_layer(16)},
  };
  spec.backbone = {
      concat_layer(40),
      conv_layer(3, 1, 40, c1, relu, 1, 1),
      conv_layer(3, 1, c1, 60, relu, 1, 2),
      maxpool_layer(60, 3),
      conv_layer(3, 1, 60, c4, relu, 1, 4),
      maxpool_layer(c4, 5),
      conv_layer(3, 1, c4, 20, relu, 1, 6),
      conv_layer(3, 1, 20, c7, relu, 1, 7),
      conv_layer(1, 0, c7, 1, ActivationKind::kNone, 1, 8),
  };
  spec.head = OutputHead{true, output_upsample};
  return spec;
}

ArchitectureSpec bl_mobilenetv2_spec() {
  const auto relu6 = ActivationKind::kRelu6;
  const auto relu = ActivationKind::kRelu;
  ArchitectureSpec spec;
  spec.name = "bl-mobilenetv2";
  spec.in_channels = 3;
  spec.backbone = {
      conv_layer(3, 1, 3, 32, relu6, 2),
      bottleneck_layer(1, 32, 16, 1, 1),
      bottleneck_layer(6, 16, 24, 2, 2),
      bottleneck_layer(6, 24, 32, 3, 2),
      bottleneck_layer(6, 32, 64, 4, 2),
      bottleneck_layer(6, 64, 96, 3, 1),
      bottleneck_layer(6, 96, 160, 3, 1),
      bottleneck_layer(6, 160, 320, 1, 1),
      pointwise_layer(320, 1280, relu6),
      upsample_layer(1280, 2),
      conv_layer(3, 1, 1280, 640, relu),
      conv_layer(3, 1, 640, 320, relu),
      conv_layer(3, 1, 320, 160, relu),
      conv_layer(1, 0, 160, 1, ActivationKind::kNone),
  };
  spec.head = OutputHead{true, 1};
  return spec;
}

ArchitectureSpec preset_spec(std::string_view name) {
  if (name == "ccnn") return ccnn_spec(false);
  if (name == "ccnn-pruned") return ccnn_spec(true);
  if (name == "bl-mobilenetv2") return bl_mobilenetv2_spec();
  throw ArgumentError("unknown architecture '" + std::string(name) +
                      "' (expected ccnn, ccnn-pruned or bl-mobilenetv2)");
}

std::string to_json_string(const ArchitectureSpec& spec, int indent) {
  json columns = json::array();
  for (const auto& col : spec.columns) {
    json layers = json::array();
    for (const auto& l : col) layers.push_back(layer_to_json(l));
    columns.push_back(std::move(layers));
  }
  json backbone = json::array();
  for (const auto& l : spec.backbone) backbone.push_back(layer_to_json(l));
  json j{{"name", spec.name},
         {"in_channels", spec.in_channels},
         {"columns", std::move(columns)},
         {"backbone", std::move(backbone)},
         {"head", {{"abs", spec.head.abs}, {"upsample", spec.head.upsample}}}};
  return j.dump(indent);
}

ArchitectureSpec architecture_from_json_string(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("architecture JSON: ") + e.what());
  }
  try {
    ArchitectureSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.in_channels = j.value("in_channels", 3);
    for (const auto& col : j.value("columns", json::array())) {
      std::vector<LayerSpec> layers;
      for (const auto& l : col) layers.push_back(layer_from_json(l));
      spec.columns.push_back(std::move(layers));
    }
    for (const auto& l : j.at("backbone")) spec.backbone.push_back(layer_from_json(l));
    if (j.contains("head")) {
      spec.head.abs = j["head"].value("abs", true);
      spec.head.upsample = j["head"].value("upsample", 1);
    }
    validate(spec);
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("architecture JSON: ") + e.what());
  }
}

}  // namespace densecount
