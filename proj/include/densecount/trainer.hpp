#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "densecount/checkpoint.hpp"
#include "densecount/dataset.hpp"
#include "densecount/losses.hpp"
#include "densecount/network.hpp"

namespace densecount {

enum class LossKind { kBayes, kEuclidean };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

// Where BayesLossConfig::sigma is measured. kMap uses it as given on the
// density-map grid; kImage treats it as image pixels and divides it by the
// output stride before the loss sees it.
enum class SigmaFrame { kMap, kImage };

std::string_view to_string(SigmaFrame frame);
SigmaFrame sigma_frame_from_string(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  LossKind loss = LossKind::kBayes;
  BayesLossConfig bayes;
  SigmaFrame bayes_sigma_frame = SigmaFrame::kMap;
  // Gaussian std (image pixels) of the ground-truth maps for the Euclidean loss.
  double gt_sigma = 15.0;
  int crop_size = 512;
  double flip_probability = 0.5;
  int epochs = 200;
  int validation_start = 100;
  int validation_interval = 5;
  std::uint64_t seed = 0;
  // Where best.dcnt and train_log.csv go; empty keeps everything in memory.
  std::string checkpoint_dir;
  // Network preset trained by the CLI.
  std::string architecture = "ccnn";
  // Validation images drawn from the training list by the CLI.
  int validation_size = 100;
};

// Throws ArgumentError naming the first invalid field.
void validate(const TrainConfig& config);

// JSON object with the TrainConfig field names; "bayes" is an object with
// "sigma", "d_ratio", "background". Missing fields keep their defaults,
// unknown fields are rejected.
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& config);

template <typename T>
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

// One bias-corrected Adam step; weight decay is added to the gradient
// (g + lambda * w) before the moment updates. Moments are allocated on the
// first call. Throws ContractViolation when shapes disagree.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr, double weight_decay);

// Same, reading each parameter's own grad slot (absent grads count as zero).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double weight_decay);

// Crops a crop x crop window at (x0, y0) after zero-padding the image on the
// right and bottom up to the crop size; annotations are translated and those
// falling outside the window are dropped.
Sample crop_sample(const Sample& sample, int x0, int y0, int crop);

// Mirrors columns (pixel x -> W - 1 - x) and annotations (x -> W - 1 - x,
// clamped at 0).
Sample flip_sample(const Sample& sample);

// Random crop followed by a flip with probability flip_probability.
Sample augment(const Sample& sample, int crop, double flip_probability, std::mt19937_64& rng);

// Sum of the density map for the image zero-padded to a multiple of 8.
double infer_count(const Network<float>& model, const Image& image);

// Epoch numbers (1-based) at which train() validates.
std::vector<int> validation_epochs(const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_mae;
  std::optional<double> val_mse;

  bool operator==(const EpochLog&) const = default;
};

// CSV with header epoch,mean_loss,val_mae,val_mse; validation columns are
// empty on epochs without validation. Numbers use round-trip precision.
std::string format_log_row(const EpochLog& row);
inline constexpr const char* kTrainLogHeader = "epoch,mean_loss,val_mae,val_mse";

struct TrainResult {
  // Lowest validation MAE; the final weights when no validation ran.
  Checkpoint best;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
};

// Called after every optimizer step with (epoch, step within epoch, loss).
using StepObserver = std::function<void(int, std::size_t, double)>;

// Batch-size-1 Adam training. The model is updated in place. Throws
// EmptyDatasetError for an empty training set and NumericError, naming the
// image and step, when a loss is not finite.
TrainResult train(Network<float>& model, const SampleSource& train_set, const SampleSource* validation_set,
                  const TrainConfig& config, const StepObserver& observer = {});

}  // namespace densecount
