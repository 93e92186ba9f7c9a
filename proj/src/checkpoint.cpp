#include "densecount/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "densecount/errors.hpp"
#include "json.hpp"

namespace densecount {
namespace {

constexpr char kMagic[4] = {'D', 'C', 'N', 'T'};

}  // namespace

Checkpoint make_checkpoint(const Network<float>& network, TrainingMetadata metadata) {
  Checkpoint ckpt;
  ckpt.spec = network.spec();
  ckpt.metadata = metadata;
  ckpt.weights.reserve(static_cast<std::size_t>(network.param_count()));
  for (const auto& p : network.parameters()) {
    auto d = p.data();
    ckpt.weights.insert(ckpt.weights.end(), d.begin(), d.end());
  }
  return ckpt;
}

Network<float> network_from_checkpoint(const Checkpoint& checkpoint) {
  Network<float> net(checkpoint.spec);
  if (static_cast<std::int64_t>(checkpoint.weights.size()) != net.param_count()) {
    throw FormatError(FormatErrorCode::kSpecMismatch,
                      "architecture needs " + std::to_string(net.param_count()) +
                          " weights, checkpoint has " + std::to_string(checkpoint.weights.size()));
  }
  std::size_t offset = 0;
  for (auto& p : net.parameters()) {
    auto d = p.data();
    std::copy_n(checkpoint.weights.begin() + static_cast<std::ptrdiff_t>(offset), d.size(), d.begin());
    offset += d.size();
  }
  return net;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  nlohmann::json header;
  header["architecture"] = nlohmann::json::parse(to_json_string(checkpoint.spec));
  header["metadata"]["epoch"] = checkpoint.metadata.epoch;
  if (checkpoint.metadata.best_val_mae) {
    header["metadata"]["best_val_mae"] = *checkpoint.metadata.best_val_mae;
  } else {
    header["metadata"]["best_val_mae"] = nullptr;
  }
  header["payload_count"] = checkpoint.weights.size();
  const std::string text = header.dump();

  std::string bytes(kMagic, 4);
  detail::put_u32(bytes, kCheckpointVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes += text;
  detail::put_f32(bytes, checkpoint.weights);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::kIo, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::kIo, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError(FormatErrorCode::kBadMagic, path.string() + " is not a checkpoint");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrorCode::kTruncatedHeader, path.string());
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorCode::kUnsupportedVersion,
                      "version " + std::to_string(version) + " in " + path.string());
  }
  const std::size_t header_len = detail::get_u32(p + 8);
  if (bytes.size() < 12 + header_len) {
    throw FormatError(FormatErrorCode::kTruncatedHeader,
                      "header needs " + std::to_string(header_len) + " bytes in " + path.string());
  }

  Checkpoint ckpt;
  std::size_t payload_count = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(12, header_len));
    ckpt.spec = architecture_from_json_string(header.at("architecture").dump());
    const auto& meta = header.at("metadata");
    ckpt.metadata.epoch = meta.value("epoch", 0);
    if (meta.contains("best_val_mae") && !meta["best_val_mae"].is_null()) {
      ckpt.metadata.best_val_mae = meta["best_val_mae"].get<double>();
    }
    payload_count = header.at("payload_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorCode::kBadHeader, e.what());
  } catch (const DataError& e) {
    throw FormatError(FormatErrorCode::kBadHeader, e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(FormatErrorCode::kBadHeader, e.what());
  }

  const auto expected = static_cast<std::size_t>(count_parameters(ckpt.spec));
  if (payload_count != expected) {
    throw FormatError(FormatErrorCode::kSpecMismatch,
                      "header declares " + std::to_string(payload_count) +
                          " weights but the architecture needs " + std::to_string(expected));
  }
  const std::size_t payload_bytes = bytes.size() - 12 - header_len;
  if (payload_bytes != 4 * payload_count) {
    throw FormatError(FormatErrorCode::kPayloadLength,
                      "expected " + std::to_string(4 * payload_count) + " payload bytes, found " +
                          std::to_string(payload_bytes));
  }
  ckpt.weights = detail::get_f32(p + 12 + header_len, payload_count);
  return ckpt;
}

void save_checkpoint(const Network<float>& network, const std::filesystem::path& path,
                     TrainingMetadata metadata) {
  write_checkpoint(make_checkpoint(network, metadata), path);
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  return network_from_checkpoint(read_checkpoint(path));
}

}  // namespace densecount
