#include "densecount/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "densecount/errors.hpp"

namespace densecount {

Point pixel_center(MapShape shape, std::size_t m) {
  const auto w = static_cast<std::size_t>(shape.width);
  return {static_cast<double>(m % w) + 0.5, static_cast<double>(m / w) + 0.5};
}

double effective_margin(const BayesLossConfig& config, MapShape shape) {
  return config.d_ratio * std::hypot(static_cast<double>(shape.height), static_cast<double>(shape.width));
}

namespace {

double squared_distance(Point a, Point b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

std::size_t nearest(std::span<const Point> points, Point x, double* sq_dist) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < points.size(); ++n) {
    const double d = squared_distance(points[n], x);
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  *sq_dist = best_d;
  return best;
}

Point background_point(Point z, Point x, double margin) {
  const double r = std::sqrt(squared_distance(z, x));
  if (r == 0.0) return z;
  return {z.x + margin * (x.x - z.x) / r, z.y + margin * (x.y - z.y) / r};
}

double gaussian(double sq_dist, double sigma) {
  return std::exp(-sq_dist / (2.0 * sigma * sigma)) / (2.0 * std::numbers::pi * sigma * sigma);
}

void require_points(std::span<const Point> points) {
  if (points.empty()) throw EmptyAnnotationError();
}

void require_config(const BayesLossConfig& config) {
  if (!(config.sigma > 0.0)) throw ArgumentError("Bayes loss sigma must be positive");
  if (config.background && !(config.d_ratio > 0.0)) {
    throw ArgumentError("background margin ratio must be positive");
  }
}

// Posterior column for pixel x via a max-shifted softmax over
// log-likelihoods. `out` has N + 1 slots; the last is the background.
void posterior_column(std::span<const Point> points, Point x, double sigma, double margin,
                      bool background, double* out) {
  const std::size_t n_points = points.size();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double top = -std::numeric_limits<double>::infinity();
  double nearest_sq = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < n_points; ++n) {
    const double d = squared_distance(points[n], x);
    out[n] = -d * inv;
    top = std::max(top, out[n]);
    nearest_sq = std::min(nearest_sq, d);
  }
  if (background) {
    // |x - z0| = |r - d| for z0 on the ray from the nearest z through x;
    // the coincident case degenerates to z0 = z, i.e. distance 0.
    const double r = std::sqrt(nearest_sq);
    const double gap = r == 0.0 ? 0.0 : r - margin;
    out[n_points] = -gap * gap * inv;
    top = std::max(top, out[n_points]);
  }
  const std::size_t active = background ? n_points + 1 : n_points;
  double total = 0.0;
  for (std::size_t n = 0; n < active; ++n) {
    out[n] = std::exp(out[n] - top);
    total += out[n];
  }
  for (std::size_t n = 0; n < active; ++n) out[n] /= total;
  if (!background) out[n_points] = 0.0;
}

template <typename T>
MapShape density_shape(const Tensor<T>& density) {
  const auto& s = density.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) {
    throw ContractViolation("density estimate must be [1,1,H,W], got " + shape_to_string(s));
  }
  return {static_cast<int>(s[2]), static_cast<int>(s[3])};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Matrix annotation_likelihoods(std::span<const Point> points, MapShape shape, double sigma) {
  require_points(points);
  Matrix lik{points.size(), shape.pixels(), std::vector<double>(points.size() * shape.pixels())};
  for (std::size_t n = 0; n < points.size(); ++n) {
    for (std::size_t m = 0; m < lik.cols; ++m) {
      lik.values[n * lik.cols + m] = gaussian(squared_distance(pixel_center(shape, m), points[n]), sigma);
    }
  }
  return lik;
}

std::vector<Point> background_points(std::span<const Point> points, MapShape shape, double margin) {
  require_points(points);
  if (!(margin > 0.0)) throw ArgumentError("background margin must be positive");
  std::vector<Point> out(shape.pixels());
  for (std::size_t m = 0; m < out.size(); ++m) {
    const Point x = pixel_center(shape, m);
    double sq = 0.0;
    out[m] = background_point(points[nearest(points, x, &sq)], x, margin);
  }
  return out;
}

std::vector<double> background_likelihoods(std::span<const Point> points, MapShape shape,
                                           double sigma, double margin) {
  const auto z0 = background_points(points, shape, margin);
  std::vector<double> out(z0.size());
  for (std::size_t m = 0; m < out.size(); ++m) {
    out[m] = gaussian(squared_distance(pixel_center(shape, m), z0[m]), sigma);
  }
  return out;
}

PosteriorMatrix posterior(const Matrix& likelihoods, std::span<const double> background) {
  if (!background.empty() && background.size() != likelihoods.cols) {
    throw ContractViolation("background likelihoods have " + std::to_string(background.size()) +
                            " pixels, expected " + std::to_string(likelihoods.cols));
  }
  const std::size_t n_rows = likelihoods.rows;
  const std::size_t m_cols = likelihoods.cols;
  PosteriorMatrix post;
  post.annotations = n_rows;
  post.pixels = m_cols;
  post.background = !background.empty();
  post.values.assign((n_rows + 1) * m_cols, 0.0);
  for (std::size_t m = 0; m < m_cols; ++m) {
    double total = post.background ? background[m] : 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) total += likelihoods(n, m);
    if (!(total > 0.0)) {
      ++post.fallback_columns;
      if (post.background) {
        post.values[n_rows * m_cols + m] = 1.0;
      } else {
        for (std::size_t n = 0; n < n_rows; ++n) post.values[n * m_cols + m] = 1.0 / static_cast<double>(n_rows);
      }
      continue;
    }
    for (std::size_t n = 0; n < n_rows; ++n) post.values[n * m_cols + m] = likelihoods(n, m) / total;
    if (post.background) post.values[n_rows * m_cols + m] = background[m] / total;
  }
  return post;
}

PosteriorMatrix posterior_for_points(std::span<const Point> points, MapShape shape,
                                     const BayesLossConfig& config) {
  require_points(points);
  require_config(config);
  const double margin = effective_margin(config, shape);
  const std::size_t n_points = points.size();
  PosteriorMatrix post;
  post.annotations = n_points;
  post.pixels = shape.pixels();
  post.background = config.background;
  post.values.assign((n_points + 1) * post.pixels, 0.0);
  std::vector<double> column(n_points + 1);
  for (std::size_t m = 0; m < post.pixels; ++m) {
    posterior_column(points, pixel_center(shape, m), config.sigma, margin, config.background,
                     column.data());
    for (std::size_t n = 0; n <= n_points; ++n) post.values[n * post.pixels + m] = column[n];
  }
  return post;
}

std::vector<double> expected_counts(const PosteriorMatrix& post, std::span<const double> density) {
  if (density.size() != post.pixels) {
    throw ContractViolation("density has " + std::to_string(density.size()) + " pixels, posterior " +
                            std::to_string(post.pixels));
  }
  std::vector<double> counts(post.annotations + 1, 0.0);
  for (std::size_t n = 0; n <= post.annotations; ++n) {
    const double* row = post.values.data() + n * post.pixels;
    double acc = 0.0;
    for (std::size_t m = 0; m < post.pixels; ++m) acc += row[m] * density[m];
    counts[n] = acc;
  }
  return counts;
}

template <typename T>
Tensor<T> bayes_loss(std::span<const Point> points, const Tensor<T>& density,
                     const BayesLossConfig& config, Tape<T>* tape) {
  require_config(config);
  const MapShape shape = density_shape(density);
  const auto d = density.data();
  const std::size_t n_points = points.size();

  if (n_points == 0) {
    double total = 0.0;
    for (T v : d) total += static_cast<double>(v);
    Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(std::abs(total)));
    if (detail::needs_grad(tape, {&density})) {
      loss.set_requires_grad(true);
      tape->record("bayes_loss", [density = Tensor<T>(density), loss, total]() mutable {
        if (!loss.has_grad()) return;
        const T g = static_cast<T>(sign(total)) * loss.grad()[0];
        for (T& v : density.grad()) v += g;
      });
    }
    return loss;
  }

  const double margin = config.background ? effective_margin(config, shape) : 0.0;
  std::vector<double> counts(n_points + 1, 0.0);
  std::vector<double> column(n_points + 1);
  for (std::size_t m = 0; m < shape.pixels(); ++m) {
    posterior_column(points, pixel_center(shape, m), config.sigma, margin, config.background,
                     column.data());
    const double dm = static_cast<double>(d[m]);
    for (std::size_t n = 0; n <= n_points; ++n) counts[n] += column[n] * dm;
  }
  double value = 0.0;
  for (std::size_t n = 0; n < n_points; ++n) value += std::abs(1.0 - counts[n]);
  if (config.background) value += std::abs(counts[n_points]);

  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(value));
  if (detail::needs_grad(tape, {&density})) {
    loss.set_requires_grad(true);
    std::vector<Point> pts(points.begin(), points.end());
    // dL/dE[c_n] = sign(E[c_n] - 1) for annotations, sign(E[c_0]) for background.
    std::vector<double> slopes(n_points + 1, 0.0);
    for (std::size_t n = 0; n < n_points; ++n) slopes[n] = sign(counts[n] - 1.0);
    if (config.background) slopes[n_points] = sign(counts[n_points]);
    tape->record("bayes_loss", [density = Tensor<T>(density), loss, pts = std::move(pts),
                                slopes = std::move(slopes), config, margin, shape]() mutable {
      if (!loss.has_grad()) return;
      const double upstream = static_cast<double>(loss.grad()[0]);
      auto grad = density.grad();
      std::vector<double> column(pts.size() + 1);
      for (std::size_t m = 0; m < shape.pixels(); ++m) {
        posterior_column(pts, pixel_center(shape, m), config.sigma, margin, config.background,
                         column.data());
        double g = 0.0;
        for (std::size_t n = 0; n < column.size(); ++n) g += slopes[n] * column[n];
        grad[m] += static_cast<T>(upstream * g);
      }
    });
  }
  return loss;
}

template <typename T>
Tensor<T> euclidean_loss(const Tensor<T>& estimate, const Tensor<T>& target, Tape<T>* tape) {
  if (estimate.shape() != target.shape()) {
    throw ContractViolation("euclidean loss shapes differ: " + shape_to_string(estimate.shape()) +
                            " vs " + shape_to_string(target.shape()));
  }
  auto e = estimate.data();
  auto t = target.data();
  T acc = T(0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    const T diff = e[i] - t[i];
    acc += diff * diff;
  }
  Tensor<T> loss = Tensor<T>::scalar(acc / T(2));
  if (detail::needs_grad(tape, {&estimate, &target})) {
    loss.set_requires_grad(true);
    tape->record("euclidean_loss", [estimate = Tensor<T>(estimate), target = Tensor<T>(target),
                                    loss]() mutable {
      if (!loss.has_grad()) return;
      const T g = loss.grad()[0];
      auto e = estimate.data();
      auto t = target.data();
      if (estimate.requires_grad()) {
        auto ge = estimate.grad();
        for (std::size_t i = 0; i < e.size(); ++i) ge[i] += g * (e[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.grad();
        for (std::size_t i = 0; i < e.size(); ++i) gt[i] += g * (t[i] - e[i]);
      }
    });
  }
  return loss;
}

template Tensor<float> bayes_loss(std::span<const Point>, const Tensor<float>&,
                                  const BayesLossConfig&, Tape<float>*);
template Tensor<double> bayes_loss(std::span<const Point>, const Tensor<double>&,
                                   const BayesLossConfig&, Tape<double>*);
template Tensor<float> euclidean_loss(const Tensor<float>&, const Tensor<float>&, Tape<float>*);
template Tensor<double> euclidean_loss(const Tensor<double>&, const Tensor<double>&, Tape<double>*);

}  // namespace densecount
