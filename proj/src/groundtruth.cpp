#include "densecount/groundtruth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "densecount/errors.hpp"
#include "json.hpp"

namespace densecount {

AnnotationSet::AnnotationSet(std::string image_id, int width, int height, std::vector<Point> points)
    : image_id_(std::move(image_id)), width_(width), height_(height), points_(std::move(points)) {
  if (width_ <= 0 || height_ <= 0) {
    throw DataError("image '" + image_id_ + "' has non-positive size " + std::to_string(width_) +
                    "x" + std::to_string(height_));
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (!(p.x >= 0.0 && p.x < width_ && p.y >= 0.0 && p.y < height_)) {
      std::ostringstream os;
      os << "annotation " << i << " (" << p.x << ", " << p.y << ") of '" << image_id_
         << "' lies outside the " << width_ << "x" << height_ << " image";
      throw DataError(os.str());
    }
  }
}

double DensityMap::sum() const {
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

namespace {

int scaled_extent(int extent, double scale) {
  return std::max(1, static_cast<int>(std::ceil(extent * scale - 1e-9)));
}

// Truncated, clipped 1-D Gaussian weights for cells [first, first + size).
struct Taps {
  int first = 0;
  std::vector<double> weights;
  double total = 0.0;
};

Taps gaussian_taps(double center, double stddev, int cells) {
  const double radius = 4.0 * stddev;
  Taps taps;
  const int lo = std::max(0, static_cast<int>(std::ceil(center - 0.5 - radius)));
  const int hi = std::min(cells - 1, static_cast<int>(std::floor(center - 0.5 + radius)));
  taps.first = lo;
  for (int i = lo; i <= hi; ++i) {
    const double d = (i + 0.5) - center;
    const double w = std::exp(-d * d / (2.0 * stddev * stddev));
    taps.weights.push_back(w);
    taps.total += w;
  }
  return taps;
}

}  // namespace

DensityMap generate_density_map(const AnnotationSet& annotations, double sigma, double scale) {
  if (!(sigma > 0.0)) throw ArgumentError("sigma must be positive");
  if (!(scale > 0.0 && scale <= 1.0)) throw ArgumentError("scale must lie in (0, 1]");
  DensityMap map;
  map.scale = scale;
  map.width = scaled_extent(annotations.width(), scale);
  map.height = scaled_extent(annotations.height(), scale);
  map.values.assign(static_cast<std::size_t>(map.width) * map.height, 0.0);
  const double stddev = sigma * scale;

  for (const auto& p : annotations.points()) {
    const double cx = p.x * scale;
    const double cy = p.y * scale;
    const Taps tx = gaussian_taps(cx, stddev, map.width);
    const Taps ty = gaussian_taps(cy, stddev, map.height);
    const double mass = tx.total * ty.total;
    if (!(mass > 0.0)) {
      // Kernel narrower than a cell and between centers: the whole unit lands
      // in the containing cell.
      const int ix = std::clamp(static_cast<int>(std::floor(cx)), 0, map.width - 1);
      const int iy = std::clamp(static_cast<int>(std::floor(cy)), 0, map.height - 1);
      map.values[static_cast<std::size_t>(iy) * map.width + ix] += 1.0;
      continue;
    }
    for (std::size_t j = 0; j < ty.weights.size(); ++j) {
      double* row = map.values.data() + static_cast<std::size_t>(ty.first + static_cast<int>(j)) * map.width;
      const double wy = ty.weights[j] / mass;
      for (std::size_t i = 0; i < tx.weights.size(); ++i) {
        row[tx.first + static_cast<int>(i)] += wy * tx.weights[i];
      }
    }
  }
  return map;
}

AnnotationSet scale_annotations(const AnnotationSet& annotations, int stride) {
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  if (stride == 1) return annotations;
  std::vector<Point> points;
  points.reserve(annotations.count());
  for (const auto& p : annotations.points()) points.push_back({p.x / stride, p.y / stride});
  return AnnotationSet(annotations.image_id(), (annotations.width() + stride - 1) / stride,
                       (annotations.height() + stride - 1) / stride, std::move(points));
}

AnnotationSet annotations_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<Point> points;
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 2) throw DataError("each point must be [x, y]");
      points.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return AnnotationSet(j.at("image").get<std::string>(), j.at("width").get<int>(),
                         j.at("height").get<int>(), std::move(points));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("annotation JSON: ") + e.what());
  }
}

std::string annotations_to_json(const AnnotationSet& annotations) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : annotations.points()) points.push_back({p.x, p.y});
  nlohmann::json j{{"image", annotations.image_id()},
                   {"width", annotations.width()},
                   {"height", annotations.height()},
                   {"points", std::move(points)}};
  return j.dump();
}

AnnotationSet read_annotation_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read annotation file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return annotations_from_json(buffer.str());
}

void write_annotation_file(const AnnotationSet& annotations, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  out << annotations_to_json(annotations) << '\n';
}

}  // namespace densecount
