#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "densecount/network.hpp"

namespace densecount {

// Removes the `fraction` of output channels of backbone layer `layer` (CCNN layer
// numbering, the LayerSpec label) that rank lowest under the given weight norm.
struct PruneDirective {
  int layer = 0;
  double fraction = 0.0;
  int norm = 1;

  bool operator==(const PruneDirective&) const = default;
};

using PruningPlan = std::vector<PruneDirective>;

// Layers 1 and 4 lose 5% by L1 norm, layer 7 loses 80% by L2 norm.
PruningPlan reference_plan();

// Output channel indices in ascending order of ||weight[c]||_norm, computed
// over weights only. Ties keep the lower index first.
template <typename T>
std::vector<int> rank_channels(const Tensor<T>& weight, int norm);

// floor(fraction * channels), tolerant of binary rounding (0.05 * 40 -> 2).
int channels_to_remove(double fraction, int channels);

// Rebuilds the network without the lowest-ranked channels of `layer` and the
// matching input slices of its consumer conv. Pooling layers in between are
// renumbered; surviving channels keep their order. The spec name gains a
// "-pruned" suffix.
template <typename T>
Network<T> prune_layer(const Network<T>& network, int layer, double fraction, int norm);

// Applies the directives in ascending layer order. Every directive is checked
// first and all failures are reported together in one PlanError.
template <typename T>
Network<T> apply_plan(const Network<T>& network, const PruningPlan& plan);

// Plan file: JSON array of {"layer": int, "fraction": float, "norm": 1|2}.
PruningPlan plan_from_json(const std::string& text);
std::string plan_to_json(const PruningPlan& plan);
PruningPlan read_plan_file(const std::filesystem::path& path);
void write_plan_file(const PruningPlan& plan, const std::filesystem::path& path);

}  // namespace densecount
