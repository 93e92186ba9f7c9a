#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "densecount/tensor.hpp"

namespace densecount {

// Continuous pixel coordinates; pixel (i, j) covers [i, i+1) x [j, j+1).
struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

// Head annotations of one image. Construction rejects points outside
// [0, width) x [0, height) with DataError.
class AnnotationSet {
 public:
  AnnotationSet() = default;
  AnnotationSet(std::string image_id, int width, int height, std::vector<Point> points);

  const std::string& image_id() const noexcept { return image_id_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const std::vector<Point>& points() const noexcept { return points_; }
  std::size_t count() const noexcept { return points_.size(); }

 private:
  std::string image_id_;
  int width_ = 0;
  int height_ = 0;
  std::vector<Point> points_;
};

// Row-major grid whose sum estimates a person count. `scale` is the map
// resolution divided by the image resolution.
struct DensityMap {
  int height = 0;
  int width = 0;
  double scale = 1.0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
};

// Stamps one isotropic Gaussian (std = sigma * scale, truncated at 4 std per
// axis) per annotation at z * scale, evaluated at cell centers. Each stamp is
// renormalized to unit mass after truncation and border clipping, so the map
// sums to the annotation count. Map size is ceil(width * scale) x
// ceil(height * scale).
DensityMap generate_density_map(const AnnotationSet& annotations, double sigma, double scale);

// Divides coordinates (and the image extent, rounding up) by `stride`.
AnnotationSet scale_annotations(const AnnotationSet& annotations, int stride);

// Canonical JSON: {"image": str, "width": int, "height": int, "points": [[x, y], ...]}.
AnnotationSet read_annotation_file(const std::filesystem::path& path);
void write_annotation_file(const AnnotationSet& annotations, const std::filesystem::path& path);
AnnotationSet annotations_from_json(const std::string& text);
std::string annotations_to_json(const AnnotationSet& annotations);

template <typename T>
Tensor<T> density_to_tensor(const DensityMap& map) {
  std::vector<T> values(map.values.begin(), map.values.end());
  return Tensor<T>(Shape{1, 1, map.height, map.width}, std::move(values));
}

}  // namespace densecount
