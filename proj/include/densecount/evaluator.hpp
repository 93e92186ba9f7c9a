#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "densecount/dataset.hpp"
#include "densecount/groundtruth.hpp"
#include "densecount/network.hpp"

namespace densecount {

// Reference MAE and MSE of the pruned Bayes-loss CCNN on UCF-QNRF, carried in
// reports for comparison only.
inline constexpr double kReferenceMae = 154.07;
inline constexpr double kReferenceMse = 241.77;

// errors[k] = N_k - N^_k (sign ignored). MAE = mean |e|, MSE = sqrt(mean e^2).
// Terms are summed in sorted order so the result does not depend on the
// order of the errors. Throws EmptyDatasetError for K = 0.
double mae(std::span<const double> errors);
double mse(std::span<const double> errors);

struct ImageResult {
  std::string image;
  double gt_count = 0.0;
  double est_count = 0.0;
  double abs_err = 0.0;
};

struct EvalReport {
  std::vector<ImageResult> rows;
  // "<id>: <reason>" for items that could not be evaluated.
  std::vector<std::string> failures;
  double mae = 0.0;
  double mse = 0.0;

  std::size_t count() const { return rows.size(); }
  bool partial() const { return !failures.empty(); }
};

// Aggregates rows into a report; throws EmptyDatasetError when rows is empty.
EvalReport make_report(std::vector<ImageResult> rows, std::vector<std::string> failures = {});

// Counts every image with infer_count. Unreadable items are recorded in
// failures and skipped; if nothing could be evaluated, EmptyDatasetError.
EvalReport evaluate(const Network<float>& model, const SampleSource& dataset);

// image,gt_count,est_count,abs_err rows, a blank line, then a summary block
// of key,value lines: images, failed, mae, mse, reference_mae, reference_mse.
std::string report_to_csv(const EvalReport& report);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

// [1, 1, H, W] network output as a map at the given resolution ratio.
DensityMap tensor_to_density(const Tensor<float>& output, double scale);

// Raw map: "DMAP", u32 LE height, u32 LE width, f32 LE row-major values.
void write_density_raw(const DensityMap& map, const std::filesystem::path& path);
DensityMap read_density_raw(const std::filesystem::path& path);

// 8-bit grayscale: floor(v / max * 255) for v > 0, 0 otherwise; all zeros when
// the map has no positive value.
std::vector<std::uint8_t> density_to_gray(const DensityMap& map);
void write_density_pgm(const DensityMap& map, const std::filesystem::path& path);

// Writes <base>.dmap and <base>.pgm.
void export_density(const DensityMap& map, const std::filesystem::path& base);

}  // namespace densecount
