#include "densecount/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "densecount/errors.hpp"
#include "json.hpp"

namespace densecount {

PruningPlan reference_plan() { return {{1, 0.05, 1}, {4, 0.05, 1}, {7, 0.80, 2}}; }

int channels_to_remove(double fraction, int channels) {
  return static_cast<int>(std::floor(fraction * channels + 1e-9));
}

template <typename T>
std::vector<int> rank_channels(const Tensor<T>& weight, int norm) {
  if (weight.ndim() != 4) throw ContractViolation("rank_channels expects a [Co,Ci,kH,kW] weight");
  if (norm != 1 && norm != 2) throw ArgumentError("channel norm must be 1 or 2");
  const auto co = static_cast<std::size_t>(weight.dim(0));
  const std::size_t per = weight.numel() / std::max<std::size_t>(co, 1);
  std::vector<double> norms(co, 0.0);
  const auto w = weight.data();
  for (std::size_t c = 0; c < co; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double v = static_cast<double>(w[c * per + i]);
      acc += norm == 1 ? std::abs(v) : v * v;
    }
    norms[c] = norm == 1 ? acc : std::sqrt(acc);
  }
  std::vector<int> order(co);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norms[a] < norms[b]; });
  return order;
}

namespace {

bool is_conv(const LayerSpec& l) { return l.kind == LayerKind::kConv2d || l.kind == LayerKind::kPointwise; }

bool channel_preserving(const LayerSpec& l) {
  return l.kind == LayerKind::kMaxPool || l.kind == LayerKind::kActivation || l.kind == LayerKind::kUpsample;
}

std::string pruned_name(const std::string& name) {
  const std::string suffix = "-pruned";
  if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return name;
  }
  return name + suffix;
}

struct Target {
  std::size_t layer = 0;
  std::size_t consumer = 0;
  int remove = 0;
};

Target locate(const ArchitectureSpec& spec, int layer, double fraction, int norm) {
  const std::string where = "layer " + std::to_string(layer);
  if (norm != 1 && norm != 2) throw PlanError(where + ": norm must be 1 or 2, got " + std::to_string(norm));
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw PlanError(where + ": fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  for (const auto& column : spec.columns) {
    for (const auto& l : column) {
      if (l.label == layer) {
        throw UnsupportedLayerError(where + " feeds the column concat; columns are not prunable");
      }
    }
  }
  const auto& backbone = spec.backbone;
  std::size_t i = 0;
  while (i < backbone.size() && backbone[i].label != layer) ++i;
  if (i == backbone.size()) throw PlanError(where + " does not exist in '" + spec.name + "'");
  if (!is_conv(backbone[i])) {
    throw PlanError(where + " is a " + std::string(to_string(backbone[i].kind)) + ", not a conv");
  }
  std::size_t j = i + 1;
  while (j < backbone.size() && channel_preserving(backbone[j])) ++j;
  if (j == backbone.size()) {
    throw UnsupportedLayerError(where + " feeds the output head; its channel count is fixed");
  }
  if (!is_conv(backbone[j])) {
    throw UnsupportedLayerError(where + " feeds a " + std::string(to_string(backbone[j].kind)) +
                                "; only conv -> conv adjacency is rewired");
  }
  const int co = backbone[i].out_channels;
  const int remove = channels_to_remove(fraction, co);
  if (remove >= co) {
    throw PlanError(where + ": removing " + std::to_string(remove) + " of " + std::to_string(co) +
                    " channels leaves none");
  }
  return {i, j, remove};
}

template <typename T>
void copy_into(const Tensor<T>& src, Tensor<T>& dst) {
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

template <typename T>
Network<T> prune_layer(const Network<T>& network, int layer, double fraction, int norm) {
  const auto& spec = network.spec();
  const Target target = locate(spec, layer, fraction, norm);

  const auto& producer = network.layer_params({-1, target.layer})[0];
  auto order = rank_channels(producer.weight, norm);
  std::vector<int> keep(order.begin() + target.remove, order.end());
  std::sort(keep.begin(), keep.end());
  const int kept = static_cast<int>(keep.size());

  ArchitectureSpec pruned = spec;
  pruned.name = pruned_name(spec.name);
  pruned.backbone[target.layer].out_channels = kept;
  for (std::size_t k = target.layer + 1; k < target.consumer; ++k) {
    pruned.backbone[k].in_channels = kept;
    pruned.backbone[k].out_channels = kept;
  }
  pruned.backbone[target.consumer].in_channels = kept;

  Network<T> out(pruned);
  for (std::size_t c = 0; c < spec.columns.size(); ++c) {
    for (std::size_t i = 0; i < spec.columns[c].size(); ++i) {
      const LayerRef ref{static_cast<int>(c), i};
      auto src = network.layer_params(ref);
      auto dst = out.layer_params(ref);
      for (std::size_t p = 0; p < src.size(); ++p) {
        copy_into(src[p].weight, dst[p].weight);
        copy_into(src[p].bias, dst[p].bias);
      }
    }
  }
  for (std::size_t i = 0; i < spec.backbone.size(); ++i) {
    const LayerRef ref{-1, i};
    auto src = network.layer_params(ref);
    auto dst = out.layer_params(ref);
    if (i == target.layer) {
      const auto per = static_cast<std::size_t>(src[0].weight.numel() / src[0].weight.dim(0));
      for (std::size_t n = 0; n < keep.size(); ++n) {
        const auto from = src[0].weight.data().subspan(static_cast<std::size_t>(keep[n]) * per, per);
        std::copy(from.begin(), from.end(), dst[0].weight.data().begin() + n * per);
        dst[0].bias[n] = src[0].bias[static_cast<std::size_t>(keep[n])];
      }
    } else if (i == target.consumer) {
      const auto& w = src[0].weight;
      const auto co = static_cast<std::size_t>(w.dim(0)), ci = static_cast<std::size_t>(w.dim(1));
      const auto taps = static_cast<std::size_t>(w.dim(2) * w.dim(3));
      for (std::size_t o = 0; o < co; ++o) {
        for (std::size_t n = 0; n < keep.size(); ++n) {
          const auto from = w.data().subspan((o * ci + static_cast<std::size_t>(keep[n])) * taps, taps);
          std::copy(from.begin(), from.end(), dst[0].weight.data().begin() + (o * keep.size() + n) * taps);
        }
      }
      copy_into(src[0].bias, dst[0].bias);
    } else {
      for (std::size_t p = 0; p < src.size(); ++p) {
        copy_into(src[p].weight, dst[p].weight);
        copy_into(src[p].bias, dst[p].bias);
      }
    }
  }
  return out;
}

template <typename T>
Network<T> apply_plan(const Network<T>& network, const PruningPlan& plan) {
  PruningPlan ordered = plan;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.layer < b.layer; });
  std::vector<std::string> failures;
  bool all_unsupported = true;
  Network<T> current = network.clone();
  for (const auto& d : ordered) {
    try {
      current = prune_layer(current, d.layer, d.fraction, d.norm);
    } catch (const UnsupportedLayerError& e) {
      failures.push_back(e.what());
    } catch (const PlanError& e) {
      failures.push_back(e.what());
      all_unsupported = false;
    }
  }
  if (!failures.empty()) {
    std::string what = std::to_string(failures.size()) + " pruning directive(s) failed";
    for (const auto& f : failures) what += "; " + f;
    if (all_unsupported) throw UnsupportedLayerError(what, failures);
    throw PlanError(what, failures);
  }
  return current;
}

PruningPlan plan_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_array()) throw PlanError("plan must be a JSON array");
    PruningPlan plan;
    for (const auto& d : j) {
      plan.push_back({d.at("layer").get<int>(), d.at("fraction").get<double>(), d.at("norm").get<int>()});
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw PlanError(std::string("plan JSON: ") + e.what());
  }
}

std::string plan_to_json(const PruningPlan& plan) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& d : plan) j.push_back({{"layer", d.layer}, {"fraction", d.fraction}, {"norm", d.norm}});
  return j.dump(2);
}

PruningPlan read_plan_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read plan file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return plan_from_json(buffer.str());
}

void write_plan_file(const PruningPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write plan file " + path.string());
  out << plan_to_json(plan) << '\n';
}

template std::vector<int> rank_channels(const Tensor<float>&, int);
template std::vector<int> rank_channels(const Tensor<double>&, int);
template Network<float> prune_layer(const Network<float>&, int, double, int);
template Network<double> prune_layer(const Network<double>&, int, double, int);
template Network<float> apply_plan(const Network<float>&, const PruningPlan&);
template Network<double> apply_plan(const Network<double>&, const PruningPlan&);

}  // namespace densecount
