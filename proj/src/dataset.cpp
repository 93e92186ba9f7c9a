#include "densecount/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "densecount/errors.hpp"

namespace densecount {

DirectorySource::DirectorySource(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path image_dir = root / "images";
  const fs::path ann_dir = root / "annotations";
  if (!fs::is_directory(image_dir)) throw DataError("missing directory " + image_dir.string());
  if (!fs::is_directory(ann_dir)) throw DataError("missing directory " + ann_dir.string());

  std::map<std::string, fs::path> images;
  std::map<std::string, fs::path> annotations;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string stem = e.path().stem().string();
    if (!images.emplace(stem, e.path()).second) {
      unmatched_.push_back(stem + ": several images share this stem");
    }
  }
  for (const auto& e : fs::directory_iterator(ann_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") annotations.emplace(e.path().stem().string(), e.path());
  }
  for (const auto& [id, image] : images) {
    const auto it = annotations.find(id);
    if (it == annotations.end()) {
      unmatched_.push_back(id + ": no annotation file");
      continue;
    }
    entries_.push_back({id, image, it->second});
  }
  for (const auto& [id, path] : annotations) {
    if (!images.count(id)) unmatched_.push_back(id + ": no image file");
  }
}

Sample DirectorySource::load(std::size_t index) const {
  const auto& e = entries_.at(index);
  Sample s{read_image(e.image), read_annotation_file(e.annotation)};
  if (s.image.width != s.annotations.width() || s.image.height != s.annotations.height()) {
    throw DataError(e.id + ": image is " + std::to_string(s.image.width) + "x" +
                    std::to_string(s.image.height) + " but its annotation says " +
                    std::to_string(s.annotations.width()) + "x" + std::to_string(s.annotations.height()));
  }
  return s;
}

Split split_validation(std::size_t size, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the split does not depend on the
  // standard library's shuffle.
  for (std::size_t i = size; i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  count = std::min(count, size);
  Split split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(count), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

Sample synthetic_crowd(const SyntheticCrowdOptions& o, std::uint64_t seed, const std::string& id) {
  if (o.width <= 2 * o.margin || o.height <= 2 * o.margin) throw ArgumentError("synthetic image too small");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> people(o.min_people, o.max_people);
  std::uniform_real_distribution<double> ux(o.margin, o.width - o.margin);
  std::uniform_real_distribution<double> uy(o.margin, o.height - o.margin);
  std::normal_distribution<double> noise(0.0, o.noise);

  const int n = people(rng);
  std::vector<Point> points;
  for (int i = 0; i < n; ++i) points.push_back({ux(rng), uy(rng)});

  Image image(o.width, o.height);
  std::vector<double> heat(static_cast<std::size_t>(o.width) * o.height, 0.0);
  const int radius = static_cast<int>(std::ceil(3.0 * o.blob_sigma));
  for (const auto& p : points) {
    const int cx = static_cast<int>(p.x), cy = static_cast<int>(p.y);
    for (int y = std::max(0, cy - radius); y <= std::min(o.height - 1, cy + radius); ++y) {
      for (int x = std::max(0, cx - radius); x <= std::min(o.width - 1, cx + radius); ++x) {
        const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
        heat[static_cast<std::size_t>(y) * o.width + x] +=
            std::exp(-(dx * dx + dy * dy) / (2.0 * o.blob_sigma * o.blob_sigma));
      }
    }
  }
  const double tint[3] = {0.9, 0.8, 0.7};
  for (int y = 0; y < o.height; ++y) {
    for (int x = 0; x < o.width; ++x) {
      const double h = std::min(1.0, heat[static_cast<std::size_t>(y) * o.width + x]);
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = static_cast<float>(std::clamp(0.1 + tint[c] * h + noise(rng), 0.0, 1.0));
      }
    }
  }
  return {std::move(image), AnnotationSet(id, o.width, o.height, std::move(points))};
}

}  // namespace densecount
