#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "densecount/groundtruth.hpp"
#include "densecount/tape.hpp"
#include "densecount/tensor.hpp"

namespace densecount {

// Bayesian point-supervision loss settings. All lengths are in density-map
// cells: annotations must already be divided by the network's output stride.
struct BayesLossConfig {
  double sigma = 8.0;
  // Background margin as a fraction of the density-map diagonal.
  double d_ratio = 0.15;
  bool background = true;
};

struct MapShape {
  int height = 0;
  int width = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
};

// Pixel m of a map sits at cell center ((m % width) + 0.5, (m / width) + 0.5).
Point pixel_center(MapShape shape, std::size_t m);

// d = d_ratio * sqrt(H^2 + W^2).
double effective_margin(const BayesLossConfig& config, MapShape shape);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// N x M Gaussian likelihoods exp(-|x_m - z_n|^2 / (2 sigma^2)) / (2 pi sigma^2).
// Throws EmptyAnnotationError when there are no points.
Matrix annotation_likelihoods(std::span<const Point> points, MapShape shape, double sigma);

// Per-pixel dummy background point z0 = z + d (x - z) / |x - z| for the
// nearest annotation z (lowest index on ties). When x coincides with z the
// direction is taken as (0, 0), i.e. z0 = z.
std::vector<Point> background_points(std::span<const Point> points, MapShape shape, double margin);

// Likelihood of each pixel under its own background point (length M).
std::vector<double> background_likelihoods(std::span<const Point> points, MapShape shape,
                                           double sigma, double margin);

// (N + 1) x M posteriors p(y_n | x_m); row N is the background and stays zero
// when background is disabled.
struct PosteriorMatrix {
  std::size_t annotations = 0;
  std::size_t pixels = 0;
  bool background = false;
  // Columns whose likelihoods all underflowed and were assigned by the
  // fallback rule (to background when enabled, else uniformly).
  std::size_t fallback_columns = 0;
  std::vector<double> values;

  double operator()(std::size_t n, std::size_t m) const { return values[n * pixels + m]; }
};

// Column-normalizes raw likelihoods; `background` is empty or has M entries.
PosteriorMatrix posterior(const Matrix& likelihoods, std::span<const double> background = {});

// Same posteriors computed from log-likelihoods, immune to underflow; this is
// the route the loss uses.
PosteriorMatrix posterior_for_points(std::span<const Point> points, MapShape shape,
                                     const BayesLossConfig& config);

// E[c_n] = sum_m p(y_n | x_m) D(x_m); the last entry holds E[c_0].
std::vector<double> expected_counts(const PosteriorMatrix& posterior, std::span<const double> density);

// L = sum_n |1 - E[c_n]| + |E[c_0]| on a [1, 1, H, W] density estimate, with
// the background term dropped when disabled. An empty annotation set gives
// L = |sum(D)|. Posteriors are evaluated in f64 regardless of T.
template <typename T>
Tensor<T> bayes_loss(std::span<const Point> points, const Tensor<T>& density,
                     const BayesLossConfig& config, Tape<T>* tape = nullptr);

// L = 0.5 * sum (estimate - target)^2.
template <typename T>
Tensor<T> euclidean_loss(const Tensor<T>& estimate, const Tensor<T>& target, Tape<T>* tape = nullptr);

}  // namespace densecount
