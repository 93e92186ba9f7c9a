#include "densecount/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "densecount/errors.hpp"
#include "densecount/parallel.hpp"
#include "gemm.hpp"

namespace densecount {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kNone: return "none";
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kRelu6: return "relu6";
    case ActivationKind::kAbs: return "abs";
  }
  return "none";
}

ActivationKind activation_from_string(std::string_view name) {
  if (name == "none") return ActivationKind::kNone;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "relu6") return ActivationKind::kRelu6;
  if (name == "abs") return ActivationKind::kAbs;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements per tile.
constexpr std::int64_t kTileElements = std::int64_t{1} << 20;

struct ConvGeometry {
  std::int64_t batch = 0, in_c = 0, in_h = 0, in_w = 0;
  std::int64_t out_c = 0, k_h = 0, k_w = 0, out_h = 0, out_w = 0;
  std::int64_t stride = 1, pad_h = 0, pad_w = 0;

  std::int64_t patch() const { return in_c * k_h * k_w; }
  std::int64_t in_plane() const { return in_h * in_w; }
  std::int64_t out_plane() const { return out_h * out_w; }
  bool pointwise() const { return k_h == 1 && k_w == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
  std::int64_t rows_per_tile() const {
    return std::max<std::int64_t>(1, kTileElements / std::max<std::int64_t>(1, patch() * out_w));
  }
};

void require_rank4(const Shape& shape, const char* what) {
  if (shape.size() != 4) {
    throw ContractViolation(std::string(what) + " must be 4-D, got " + shape_to_string(shape));
  }
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvOptions options, bool depthwise) {
  if (options.stride <= 0) {
    throw ArgumentError("stride must be positive, got " + std::to_string(options.stride));
  }
  if (options.pad_h < 0 || options.pad_w < 0) {
    throw ArgumentError("padding must be non-negative");
  }
  require_rank4(input.shape(), "conv input");
  require_rank4(weight.shape(), "conv weight");
  ConvGeometry g;
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_c = weight.dim(0);
  g.k_h = weight.dim(2);
  g.k_w = weight.dim(3);
  g.stride = options.stride;
  g.pad_h = options.pad_h;
  g.pad_w = options.pad_w;
  if (depthwise) {
    if (weight.dim(0) != g.in_c || weight.dim(1) != 1) {
      throw ContractViolation("depthwise weight " + shape_to_string(weight.shape()) +
                              " does not match input channels " + std::to_string(g.in_c) +
                              " (expected [" + std::to_string(g.in_c) + "x1xkHxkW])");
    }
    g.in_c = 1;  // patch size per output channel
  } else if (weight.dim(1) != g.in_c) {
    throw ContractViolation("conv input channels " + std::to_string(g.in_c) +
                            " != weight in-channels " + std::to_string(weight.dim(1)) +
                            " (input " + shape_to_string(input.shape()) + ", weight " +
                            shape_to_string(weight.shape()) + ")");
  }
  if (bias.defined() && static_cast<std::int64_t>(bias.numel()) != g.out_c) {
    throw ContractViolation("bias has " + std::to_string(bias.numel()) + " elements, expected " +
                            std::to_string(g.out_c) + " output channels");
  }
  if (input.dim(2) + 2 * g.pad_h < g.k_h || input.dim(3) + 2 * g.pad_w < g.k_w) {
    throw ContractViolation("padded input " + std::to_string(input.dim(2) + 2 * g.pad_h) + "x" +
                            std::to_string(input.dim(3) + 2 * g.pad_w) + " smaller than kernel " +
                            std::to_string(g.k_h) + "x" + std::to_string(g.k_w));
  }
  g.out_h = (input.dim(2) + 2 * g.pad_h - g.k_h) / g.stride + 1;
  g.out_w = (input.dim(3) + 2 * g.pad_w - g.k_w) / g.stride + 1;
  return g;
}

// Unfolds output rows [y0, y1) of one image into a patch() x (rows * out_w) matrix.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, std::int64_t y0, std::int64_t y1, T* col) {
  const std::int64_t cols = (y1 - y0) * g.out_w;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    const T* plane = in + c * g.in_plane();
    for (std::int64_t dy = 0; dy < g.k_h; ++dy) {
      for (std::int64_t dx = 0; dx < g.k_w; ++dx) {
        T* dst = col + ((c * g.k_h + dy) * g.k_w + dx) * cols;
        for (std::int64_t y = y0; y < y1; ++y) {
          const std::int64_t iy = y * g.stride + dy - g.pad_h;
          T* row = dst + (y - y0) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.in_w;
          for (std::int64_t x = 0; x < g.out_w; ++x) {
            const std::int64_t ix = x * g.stride + dx - g.pad_w;
            row[x] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::int64_t y0, std::int64_t y1, T* in) {
  const std::int64_t cols = (y1 - y0) * g.out_w;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    T* plane = in + c * g.in_plane();
    for (std::int64_t dy = 0; dy < g.k_h; ++dy) {
      for (std::int64_t dx = 0; dx < g.k_w; ++dx) {
        const T* src = col + ((c * g.k_h + dy) * g.k_w + dx) * cols;
        for (std::int64_t y = y0; y < y1; ++y) {
          const std::int64_t iy = y * g.stride + dy - g.pad_h;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* row = src + (y - y0) * g.out_w;
          T* dst = plane + iy * g.in_w;
          for (std::int64_t x = 0; x < g.out_w; ++x) {
            const std::int64_t ix = x * g.stride + dx - g.pad_w;
            if (ix >= 0 && ix < g.in_w) dst[ix] += row[x];
          }
        }
      }
    }
  }
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvOptions options, Tape<T>* tape) {
  const ConvGeometry g = conv_geometry(input, weight, bias, options, false);
  Tensor<T> out(Shape{g.batch, g.out_c, g.out_h, g.out_w});
  const std::int64_t rows = g.rows_per_tile();
  const std::int64_t tiles = (g.out_h + rows - 1) / rows;

  for (std::int64_t n = 0; n < g.batch; ++n) {
    const T* in_n = input.ptr() + n * g.in_c * g.in_plane();
    T* out_n = out.ptr() + n * g.out_c * g.out_plane();
    if (g.pointwise()) {
      detail::sequential_gemm(weight.ptr(), g.patch(), in_n, g.in_plane(), out_n, g.out_plane(), g.out_c,
                              g.patch(), g.out_plane());
    } else {
      parallel_for(static_cast<std::size_t>(tiles), [&](std::size_t t) {
        const std::int64_t y0 = static_cast<std::int64_t>(t) * rows;
        const std::int64_t y1 = std::min(g.out_h, y0 + rows);
        const std::int64_t cols = (y1 - y0) * g.out_w;
        std::vector<T> col(static_cast<std::size_t>(g.patch() * cols));
        im2col(in_n, g, y0, y1, col.data());
        detail::sequential_gemm(weight.ptr(), g.patch(), col.data(), cols, out_n + y0 * g.out_w,
                                g.out_plane(), g.out_c, g.patch(), cols);
      });
    }
    if (bias.defined()) {
      for (std::int64_t c = 0; c < g.out_c; ++c) {
        T* plane = out_n + c * g.out_plane();
        const T b = bias[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < g.out_plane(); ++i) plane[i] += b;
      }
    }
  }

  if (detail::needs_grad(tape, {&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("conv2d", [input = Tensor<T>(input), weight = Tensor<T>(weight), bias = Tensor<T>(bias), out,
                           g]() mutable {
      if (!out.has_grad()) return;
      const T* gout = out.grad().data();
      if (wants_grad(bias)) {
        auto gb = bias.grad();
        for (std::int64_t n = 0; n < g.batch; ++n) {
          for (std::int64_t c = 0; c < g.out_c; ++c) {
            const T* plane = gout + (n * g.out_c + c) * g.out_plane();
            T acc = T(0);
            for (std::int64_t i = 0; i < g.out_plane(); ++i) acc += plane[i];
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      }
      const bool want_w = weight.requires_grad();
      const bool want_x = input.requires_grad();
      if (!want_w && !want_x) return;
      Eigen::Map<const RowMat<T>> w(weight.ptr(), g.out_c, g.patch());
      T* gw = want_w ? weight.grad().data() : nullptr;
      T* gx = want_x ? input.grad().data() : nullptr;
      const std::int64_t rows = g.rows_per_tile();
      std::vector<T> col;
      std::vector<T> dcol;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* in_n = input.ptr() + n * g.in_c * g.in_plane();
        const T* gout_n = gout + n * g.out_c * g.out_plane();
        if (g.pointwise()) {
          Eigen::Map<const RowMat<T>> dy(gout_n, g.out_c, g.out_plane());
          if (want_w) {
            Eigen::Map<RowMat<T>> dw(gw, g.out_c, g.patch());
            dw.noalias() += dy * Eigen::Map<const RowMat<T>>(in_n, g.in_c, g.in_plane()).transpose();
          }
          if (want_x) {
            Eigen::Map<RowMat<T>> dx(gx + n * g.in_c * g.in_plane(), g.in_c, g.in_plane());
            dx.noalias() += w.transpose() * dy;
          }
          continue;
        }
        for (std::int64_t y0 = 0; y0 < g.out_h; y0 += rows) {
          const std::int64_t y1 = std::min(g.out_h, y0 + rows);
          const std::int64_t cols = (y1 - y0) * g.out_w;
          ConstStridedMap<T> dy(gout_n + y0 * g.out_w, g.out_c, cols,
                                Eigen::OuterStride<>(g.out_plane()));
          if (want_w) {
            col.resize(static_cast<std::size_t>(g.patch() * cols));
            im2col(in_n, g, y0, y1, col.data());
            Eigen::Map<RowMat<T>> dw(gw, g.out_c, g.patch());
            dw.noalias() += dy * Eigen::Map<const RowMat<T>>(col.data(), g.patch(), cols).transpose();
          }
          if (want_x) {
            dcol.resize(static_cast<std::size_t>(g.patch() * cols));
            Eigen::Map<RowMat<T>>(dcol.data(), g.patch(), cols).noalias() = w.transpose() * dy;
            col2im_add(dcol.data(), g, y0, y1, gx + n * g.in_c * g.in_plane());
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvOptions options, Tape<T>* tape) {
  const ConvGeometry g = conv_geometry(input, weight, bias, options, true);
  const std::int64_t channels = g.out_c;
  Tensor<T> out(Shape{g.batch, channels, g.out_h, g.out_w});

  auto kernel_loop = [g](std::int64_t y, std::int64_t x, auto&& visit) {
    for (std::int64_t dy = 0; dy < g.k_h; ++dy) {
      const std::int64_t iy = y * g.stride + dy - g.pad_h;
      if (iy < 0 || iy >= g.in_h) continue;
      for (std::int64_t dx = 0; dx < g.k_w; ++dx) {
        const std::int64_t ix = x * g.stride + dx - g.pad_w;
        if (ix < 0 || ix >= g.in_w) continue;
        visit(iy * g.in_w + ix, dy * g.k_w + dx);
      }
    }
  };

  const T* in = input.ptr();
  const T* w = weight.ptr();
  T* o = out.ptr();
  const std::int64_t ksize = g.k_h * g.k_w;
  parallel_for(static_cast<std::size_t>(g.batch * channels), [&](std::size_t job) {
    const auto nc = static_cast<std::int64_t>(job);
    const std::int64_t c = nc % channels;
    const T* plane = in + nc * g.in_plane();
    const T* kern = w + c * ksize;
    const T b = bias.defined() ? bias[static_cast<std::size_t>(c)] : T(0);
    T* dst = o + nc * g.out_plane();
    for (std::int64_t y = 0; y < g.out_h; ++y) {
      for (std::int64_t x = 0; x < g.out_w; ++x) {
        T acc = b;
        kernel_loop(y, x, [&](std::int64_t src, std::int64_t k) { acc += plane[src] * kern[k]; });
        dst[y * g.out_w + x] = acc;
      }
    }
  });

  if (detail::needs_grad(tape, {&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("depthwise_conv2d", [input = Tensor<T>(input), weight = Tensor<T>(weight),
                                     bias = Tensor<T>(bias), out, g, kernel_loop]() mutable {
      if (!out.has_grad()) return;
      const std::int64_t channels = g.out_c;
      const std::int64_t ksize = g.k_h * g.k_w;
      const T* gout = out.grad().data();
      const T* in = input.ptr();
      const T* w = weight.ptr();
      T* gx = input.requires_grad() ? input.grad().data() : nullptr;
      T* gw = weight.requires_grad() ? weight.grad().data() : nullptr;
      T* gb = wants_grad(bias) ? bias.grad().data() : nullptr;
      for (std::int64_t nc = 0; nc < g.batch * channels; ++nc) {
        const std::int64_t c = nc % channels;
        const T* plane = in + nc * g.in_plane();
        const T* kern = w + c * ksize;
        const T* go = gout + nc * g.out_plane();
        T* gplane = gx ? gx + nc * g.in_plane() : nullptr;
        T* gkern = gw ? gw + c * ksize : nullptr;
        for (std::int64_t y = 0; y < g.out_h; ++y) {
          for (std::int64_t x = 0; x < g.out_w; ++x) {
            const T d = go[y * g.out_w + x];
            if (gb) gb[c] += d;
            kernel_loop(y, x, [&](std::int64_t src, std::int64_t k) {
              if (gplane) gplane[src] += d * kern[k];
              if (gkern) gkern[k] += d * plane[src];
            });
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape) {
  require_rank4(input.shape(), "maxpool input");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) {
    throw ContractViolation("maxpool-2 needs spatial dims >= 2, got " + std::to_string(h) + "x" +
                            std::to_string(w));
  }
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::int64_t> argmax(out.numel());
  const T* in = input.ptr();
  T* o = out.ptr();
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* plane = in + nc * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        std::int64_t best = (2 * y) * w + 2 * x;
        for (std::int64_t dy = 0; dy < 2; ++dy) {
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = (2 * y + dy) * w + 2 * x + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::int64_t oi = nc * oh * ow + y * ow + x;
        o[oi] = plane[best];
        argmax[static_cast<std::size_t>(oi)] = nc * h * w + best;
      }
    }
  }
  if (detail::needs_grad(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record("maxpool2d", [input = Tensor<T>(input), out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      auto gout = out.grad();
      auto gin = input.grad();
      for (std::size_t i = 0; i < gout.size(); ++i) gin[static_cast<std::size_t>(argmax[i])] += gout[i];
    });
  }
  return out;
}

namespace {

struct LerpTap {
  std::int64_t lo = 0, hi = 0;
  double frac = 0.0;
};

std::vector<LerpTap> upsample_taps(std::int64_t in_size, int factor) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(in_size * factor));
  for (std::int64_t o = 0; o < in_size * factor; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    LerpTap tap;
    tap.lo = static_cast<std::int64_t>(std::floor(src));
    tap.hi = std::min(tap.lo + 1, in_size - 1);
    tap.frac = src - static_cast<double>(tap.lo);
    taps[static_cast<std::size_t>(o)] = tap;
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor, Tape<T>* tape) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1, got " + std::to_string(factor));
  require_rank4(input.shape(), "upsample input");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  Tensor<T> out(Shape{n, c, oh, ow});
  const auto ty = upsample_taps(h, factor);
  const auto tx = upsample_taps(w, factor);
  const T* in = input.ptr();
  T* o = out.ptr();
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* plane = in + nc * h * w;
    T* dst = o + nc * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t x = 0; x < ow; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const T fx = static_cast<T>(b.frac);
        const T top = plane[a.lo * w + b.lo] * (T(1) - fx) + plane[a.lo * w + b.hi] * fx;
        const T bottom = plane[a.hi * w + b.lo] * (T(1) - fx) + plane[a.hi * w + b.hi] * fx;
        dst[y * ow + x] = top * (T(1) - fy) + bottom * fy;
      }
    }
  }
  if (detail::needs_grad(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record("bilinear_upsample", [input = Tensor<T>(input), out, ty, tx, h, w, oh, ow]() mutable {
      if (!out.has_grad()) return;
      const T* gout = out.grad().data();
      T* gin = input.grad().data();
      const std::int64_t planes = input.dim(0) * input.dim(1);
      for (std::int64_t nc = 0; nc < planes; ++nc) {
        const T* go = gout + nc * oh * ow;
        T* gi = gin + nc * h * w;
        for (std::int64_t y = 0; y < oh; ++y) {
          const auto& a = ty[static_cast<std::size_t>(y)];
          const T fy = static_cast<T>(a.frac);
          for (std::int64_t x = 0; x < ow; ++x) {
            const auto& b = tx[static_cast<std::size_t>(x)];
            const T fx = static_cast<T>(b.frac);
            const T d = go[y * ow + x];
            gi[a.lo * w + b.lo] += d * (T(1) - fy) * (T(1) - fx);
            gi[a.lo * w + b.hi] += d * (T(1) - fy) * fx;
            gi[a.hi * w + b.lo] += d * fy * (T(1) - fx);
            gi[a.hi * w + b.hi] += d * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  auto src = input.data();
  auto dst = out.data();
  switch (kind) {
    case ActivationKind::kNone:
      std::copy(src.begin(), src.end(), dst.begin());
      break;
    case ActivationKind::kRelu:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
      break;
    case ActivationKind::kRelu6:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::min(std::max(src[i], T(0)), T(6));
      break;
    case ActivationKind::kAbs:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::abs(src[i]);
      break;
  }
  if (detail::needs_grad(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record("activation", [input = Tensor<T>(input), out, kind]() mutable {
      if (!out.has_grad()) return;
      auto gout = out.grad();
      auto gin = input.grad();
      auto x = input.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        T slope = T(1);
        switch (kind) {
          case ActivationKind::kNone: break;
          case ActivationKind::kRelu: slope = x[i] > T(0) ? T(1) : T(0); break;
          case ActivationKind::kRelu6: slope = (x[i] > T(0) && x[i] < T(6)) ? T(1) : T(0); break;
          case ActivationKind::kAbs: slope = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0)); break;
        }
        gin[i] += slope * gout[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs, Tape<T>* tape) {
  if (inputs.empty()) throw ContractViolation("concat of zero tensors");
  for (const auto& t : inputs) require_rank4(t.shape(), "concat input");
  const std::int64_t n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
  std::int64_t channels = 0;
  for (const auto& t : inputs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw ContractViolation("concat inputs disagree: " + shape_to_string(inputs[0].shape()) +
                              " vs " + shape_to_string(t.shape()));
    }
    channels += t.dim(1);
  }
  Tensor<T> out(Shape{n, channels, h, w});
  const std::int64_t plane = h * w;
  for (std::int64_t b = 0; b < n; ++b) {
    std::int64_t offset = 0;
    for (const auto& t : inputs) {
      const std::int64_t block = t.dim(1) * plane;
      const T* src = t.ptr() + b * block;
      std::copy(src, src + block, out.ptr() + (b * channels) * plane + offset);
      offset += block;
    }
  }
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    tape->record("concat_channels", [inputs = std::vector<Tensor<T>>(inputs), out, n, channels,
                                        plane]() mutable {
      if (!out.has_grad()) return;
      const T* gout = out.grad().data();
      for (std::int64_t b = 0; b < n; ++b) {
        std::int64_t offset = 0;
        for (auto& t : inputs) {
          const std::int64_t block = t.dim(1) * plane;
          if (t.requires_grad()) {
            T* gin = t.grad().data() + b * block;
            const T* src = gout + (b * channels) * plane + offset;
            for (std::int64_t i = 0; i < block; ++i) gin[i] += src[i];
          }
          offset += block;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("add shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                            shape_to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto z = out.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  if (detail::needs_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record("add", [a = Tensor<T>(a), b = Tensor<T>(b), out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape) {
  T acc = T(0);
  for (T v : input.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::needs_grad(tape, {&input})) {
    out.set_requires_grad(true);
    tape->record("sum", [input = Tensor<T>(input), out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (T& v : input.grad()) v += g;
    });
  }
  return out;
}

#define DENSECOUNT_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvOptions,  \
                            Tape<T>*);                                                          \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      ConvOptions, Tape<T>*);                                   \
  template Tensor<T> maxpool2d(const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, int, Tape<T>*);                        \
  template Tensor<T> activation(const Tensor<T>&, ActivationKind, Tape<T>*);                    \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&, Tape<T>*);                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);

DENSECOUNT_INSTANTIATE_OPS(float)
DENSECOUNT_INSTANTIATE_OPS(double)

#undef DENSECOUNT_INSTANTIATE_OPS

}  // namespace densecount
