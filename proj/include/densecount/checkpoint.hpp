#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "densecount/architecture.hpp"
#include "densecount/network.hpp"

namespace densecount {

struct TrainingMetadata {
  int epoch = 0;
  std::optional<double> best_val_mae;

  bool operator==(const TrainingMetadata&) const = default;
};

// Architecture plus a flat f32 weight payload in Network::parameters() order.
struct Checkpoint {
  ArchitectureSpec spec;
  std::vector<float> weights;
  TrainingMetadata metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint make_checkpoint(const Network<float>& network, TrainingMetadata metadata = {});
Network<float> network_from_checkpoint(const Checkpoint& checkpoint);

// File layout: "DCNT", u32 LE version, u32 LE header length, UTF-8 JSON
// header {architecture, metadata, payload_count}, then payload_count
// little-endian f32 values. Errors are FormatError with a distinct code.
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const Network<float>& network, const std::filesystem::path& path,
                     TrainingMetadata metadata = {});
Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace densecount
