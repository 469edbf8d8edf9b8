#pragma once

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deskavoid/nn/tensor.hpp"

namespace deskavoid::nn {

enum class Mode { train, eval };

/// Whatever a layer keeps from forward for its backward pass.
template <class T>
struct LayerCache {
  BasicTensor<T> input;
  BasicTensor<T> aux;
  std::vector<T> stats;
};

namespace detail {

template <class T>
void init_uniform(BasicTensor<T>& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.data) v = static_cast<T>(dist(rng));
}

/// Shape of a strided kernel sweep over an image with symmetric zero padding.
struct ConvGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int out_h = 0;
  int out_w = 0;

  [[nodiscard]] int rows() const { return channels * kernel * kernel; }
  [[nodiscard]] int grid() const { return out_h * out_w; }
};

/// (N,C,H,W) image -> (C*k*k, N*Ho*Wo) patch matrix.
template <class T>
void im2col(const T* img, int batch, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = static_cast<std::size_t>(batch) * g.grid();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int n = 0; n < batch; ++n) {
          const T* plane = img + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          T* dst = row + static_cast<std::size_t>(n) * g.grid();
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[oy * g.out_w + ox] =
                  (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width) ? plane[iy * g.width + ix] : T(0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch columns back into an (N,C,H,W) image.
template <class T>
void col2im(const T* cols, int batch, const ConvGeometry& g, T* img) {
  const std::size_t ncols = static_cast<std::size_t>(batch) * g.grid();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int n = 0; n < batch; ++n) {
          T* plane = img + (static_cast<std::size_t>(n) * g.channels + c) * g.height * g.width;
          const T* src = row + static_cast<std::size_t>(n) * g.grid();
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

/// (N,C,S) -> (C, N*S)
template <class T>
void nchw_to_cn(const T* src, int n, int c, int s, T* dst) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      std::copy_n(src + (static_cast<std::size_t>(i) * c + j) * s, s, dst + (static_cast<std::size_t>(j) * n + i) * s);
    }
  }
}

/// (C, N*S) -> (N,C,S)
template <class T>
void cn_to_nchw(const T* src, int n, int c, int s, T* dst) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      std::copy_n(src + (static_cast<std::size_t>(j) * n + i) * s, s, dst + (static_cast<std::size_t>(i) * c + j) * s);
    }
  }
}

inline void require_rank(const std::vector<int>& s, std::size_t rank, const char* layer) {
  if (s.size() != rank) {
    throw ValidationError(std::string(layer) + " expects per-sample rank " + std::to_string(rank) + ", got shape " +
                          shape_string(s));
  }
}

}  // namespace detail

template <class T>
struct DenseT {
  int in = 0;
  int out = 0;
  BasicTensor<T> weight;  // (out, in)
  BasicTensor<T> bias;    // (out)

  void initialize(Rng& rng) {
    weight = BasicTensor<T>({out, in});
    bias = BasicTensor<T>({out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    detail::init_uniform(weight, bound, rng);
    detail::init_uniform(bias, bound, rng);
  }

  [[nodiscard]] std::vector<int> output_shape(const std::vector<int>& s) const {
    if (s.size() != 1 || s[0] != in) {
      throw ValidationError("dense expects input (" + std::to_string(in) + "), got " + shape_string(s));
    }
    return {out};
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    const int n = x.batch();
    BasicTensor<T> y({n, out});
    y.rows().noalias() = x.matrix(n, in) * weight.matrix(out, in).transpose();
    y.rows().rowwise() += bias.matrix(1, out).row(0);
    c.input = x;
    return y;
  }

  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>> grads) const {
    const int n = gy.batch();
    const auto g = gy.matrix(n, out);
    if (!grads.empty()) {
      grads[0].matrix(out, in).noalias() += g.transpose() * c.input.matrix(n, in);
      grads[1].matrix(1, out) += g.colwise().sum();
    }
    BasicTensor<T> gx(c.input.shape);
    gx.matrix(n, in).noalias() = g * weight.matrix(out, in);
    return gx;
  }
};

/// Strided convolution with zero padding (kernel-1)/2; output size is computed from the input.
template <class T>
struct Conv2dT {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 2;
  BasicTensor<T> weight;  // (out_ch, in_ch, k, k)
  BasicTensor<T> bias;    // (out_ch)

  void initialize(Rng& rng) {
    weight = BasicTensor<T>({out_ch, in_ch, kernel, kernel});
    bias = BasicTensor<T>({out_ch});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel * kernel));
    detail::init_uniform(weight, bound, rng);
    detail::init_uniform(bias, bound, rng);
  }

  [[nodiscard]] detail::ConvGeometry geometry(int h, int w) const {
    const int pad = (kernel - 1) / 2;
    return {in_ch, h, w, kernel, stride, pad, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1};
  }

  [[nodiscard]] std::vector<int> output_shape(const std::vector<int>& s) const {
    detail::require_rank(s, 3, "conv");
    if (s[0] != in_ch) {
      throw ValidationError("conv expects " + std::to_string(in_ch) + " channels, got " + shape_string(s));
    }
    if (kernel % 2 == 0) throw ValidationError("conv kernel must be odd");
    const auto g = geometry(s[1], s[2]);
    if (g.out_h < 1 || g.out_w < 1) throw ValidationError("conv input too small: " + shape_string(s));
    return {out_ch, g.out_h, g.out_w};
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    const int n = x.batch();
    const auto g = geometry(x.shape[2], x.shape[3]);
    const int cols = n * g.grid();
    c.aux = BasicTensor<T>({g.rows(), cols});
    detail::im2col(x.data.data(), n, g, c.aux.data.data());
    MatrixRM<T> out = weight.matrix(out_ch, g.rows()) * c.aux.matrix(g.rows(), cols);
    out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data.data(), out_ch);
    BasicTensor<T> y({n, out_ch, g.out_h, g.out_w});
    detail::cn_to_nchw(out.data(), n, out_ch, g.grid(), y.data.data());
    c.input.shape = x.shape;  // only the shape is needed later
    return y;
  }

  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>> grads) const {
    const int n = gy.batch();
    const auto g = geometry(c.input.shape[2], c.input.shape[3]);
    const int cols = n * g.grid();
    MatrixRM<T> gm(out_ch, cols);
    detail::nchw_to_cn(gy.data.data(), n, out_ch, g.grid(), gm.data());
    if (!grads.empty()) {
      grads[0].matrix(out_ch, g.rows()).noalias() += gm * c.aux.matrix(g.rows(), cols).transpose();
      grads[1].matrix(out_ch, 1) += gm.rowwise().sum();
    }
    MatrixRM<T> gcols = weight.matrix(out_ch, g.rows()).transpose() * gm;
    BasicTensor<T> gx(c.input.shape);
    detail::col2im(gcols.data(), n, g, gx.data.data());
    return gx;
  }
};

/// Transposed convolution: output = (in-1)*stride - 2*padding + kernel + output_padding.
template <class T>
struct ConvTranspose2dT {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  int output_padding = 0;
  BasicTensor<T> weight;  // (in_ch, out_ch, k, k)
  BasicTensor<T> bias;    // (out_ch)

  void initialize(Rng& rng) {
    weight = BasicTensor<T>({in_ch, out_ch, kernel, kernel});
    bias = BasicTensor<T>({out_ch});
    const double bound = 1.0 / std::sqrt(static_cast<double>(out_ch * kernel * kernel));
    detail::init_uniform(weight, bound, rng);
    detail::init_uniform(bias, bound, rng);
  }

  [[nodiscard]] detail::ConvGeometry geometry(int h, int w) const {
    const int oh = (h - 1) * stride - 2 * padding + kernel + output_padding;
    const int ow = (w - 1) * stride - 2 * padding + kernel + output_padding;
    return {out_ch, oh, ow, kernel, stride, padding, h, w};
  }

  [[nodiscard]] std::vector<int> output_shape(const std::vector<int>& s) const {
    detail::require_rank(s, 3, "conv_transpose");
    if (s[0] != in_ch) {
      throw ValidationError("conv_transpose expects " + std::to_string(in_ch) + " channels, got " + shape_string(s));
    }
    if (output_padding >= stride) throw ValidationError("conv_transpose output_padding must be < stride");
    const auto g = geometry(s[1], s[2]);
    if (g.height < 1 || g.width < 1) throw ValidationError("conv_transpose output would be empty");
    return {out_ch, g.height, g.width};
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    const int n = x.batch();
    const auto g = geometry(x.shape[2], x.shape[3]);
    const int cols = n * g.grid();
    c.aux = BasicTensor<T>({in_ch, cols});
    detail::nchw_to_cn(x.data.data(), n, in_ch, g.grid(), c.aux.data.data());
    MatrixRM<T> patches = weight.matrix(in_ch, g.rows()).transpose() * c.aux.matrix(in_ch, cols);
    BasicTensor<T> y({n, out_ch, g.height, g.width});
    detail::col2im(patches.data(), n, g, y.data.data());
    const int plane = g.height * g.width;
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < out_ch; ++ch) {
        T* p = y.data.data() + (static_cast<std::size_t>(i) * out_ch + ch) * plane;
        for (int k = 0; k < plane; ++k) p[k] += bias.data[ch];
      }
    }
    c.input.shape = x.shape;
    return y;
  }

  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>> grads) const {
    const int n = gy.batch();
    const auto g = geometry(c.input.shape[2], c.input.shape[3]);
    const int cols = n * g.grid();
    MatrixRM<T> gpatch(g.rows(), cols);
    detail::im2col(gy.data.data(), n, g, gpatch.data());
    if (!grads.empty()) {
      grads[0].matrix(in_ch, g.rows()).noalias() += c.aux.matrix(in_ch, cols) * gpatch.transpose();
      const int plane = g.height * g.width;
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < out_ch; ++ch) {
          const T* p = gy.data.data() + (static_cast<std::size_t>(i) * out_ch + ch) * plane;
          double s = 0.0;
          for (int k = 0; k < plane; ++k) s += p[k];
          grads[1].data[ch] += static_cast<T>(s);
        }
      }
    }
    MatrixRM<T> gxm = weight.matrix(in_ch, g.rows()) * gpatch;
    BasicTensor<T> gx(c.input.shape);
    detail::cn_to_nchw(gxm.data(), n, in_ch, g.grid(), gx.data.data());
    return gx;
  }
};

/// Per-feature normalization. Rank-1 samples normalize each feature over the batch; rank-3
/// samples (C,H,W) normalize each channel over batch and space. Running statistics follow
/// running = momentum * running + (1 - momentum) * batch.
template <class T>
struct BatchNormT {
  int features = 0;
  float momentum = 0.99f;
  float eps = 1e-5f;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  void initialize(Rng&) {
    gamma = BasicTensor<T>({features}, T(1));
    beta = BasicTensor<T>({features}, T(0));
    running_mean = BasicTensor<T>({features}, T(0));
    running_var = BasicTensor<T>({features}, T(1));
  }

  [[nodiscard]] std::vector<int> output_shape(const std::vector<int>& s) const {
    if ((s.size() != 1 && s.size() != 3) || s[0] != features) {
      throw ValidationError("batch_norm expects " + std::to_string(features) + " features, got " + shape_string(s));
    }
    return s;
  }

  // cache.stats layout: [mean(F), var(F), invstd(F), train flag]
  // Loops run in memory order; per-feature sums still accumulate over (i, j) in sequence.
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, LayerCache<T>& c) const {
    const int n = x.batch();
    const int f = features;
    const std::size_t inner = x.sample_size() / f;
    const double count = static_cast<double>(n) * inner;
    if (inner == 1) return forward_rows(x, mode, c);
    std::vector<double> mean(f), var(f);
    for (int k = 0; k < f; ++k) {
      mean[k] = running_mean.data[k];
      var[k] = running_var.data[k];
    }
    if (mode == Mode::train) {
      std::vector<double> s(f, 0.0), ss(f, 0.0);
      const T* p = x.data.data();
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < f; ++k, p += inner) {
          double acc = s[k];
          for (std::size_t j = 0; j < inner; ++j) acc += p[j];
          s[k] = acc;
        }
      }
      for (int k = 0; k < f; ++k) mean[k] = s[k] / count;
      p = x.data.data();
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < f; ++k, p += inner) {
          double acc = ss[k];
          for (std::size_t j = 0; j < inner; ++j) acc += (p[j] - mean[k]) * (p[j] - mean[k]);
          ss[k] = acc;
        }
      }
      for (int k = 0; k < f; ++k) var[k] = ss[k] / count;
    }
    c.stats.assign(3 * f + 1, T(0));
    for (int k = 0; k < f; ++k) {
      c.stats[k] = static_cast<T>(mean[k]);
      c.stats[f + k] = static_cast<T>(var[k]);
      c.stats[2 * f + k] = static_cast<T>(1.0 / std::sqrt(var[k] + eps));
    }
    c.stats[3 * f] = mode == Mode::train ? T(1) : T(0);

    BasicTensor<T> xhat(x.shape);
    BasicTensor<T> y(x.shape);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < f; ++k) {
        const std::size_t off = (static_cast<std::size_t>(i) * f + k) * inner;
        const T mu = c.stats[k];
        const T inv = c.stats[2 * f + k];
        for (std::size_t j = 0; j < inner; ++j) {
          const T h = (x.data[off + j] - mu) * inv;
          xhat.data[off + j] = h;
          y.data[off + j] = gamma.data[k] * h + beta.data[k];
        }
      }
    }
    c.aux = std::move(xhat);
    return y;
  }

  void commit(const LayerCache<T>& c) {
    if (c.stats.empty() || c.stats[3 * features] == T(0)) return;
    const T m = static_cast<T>(momentum);
    for (int k = 0; k < features; ++k) {
      running_mean.data[k] = m * running_mean.data[k] + (T(1) - m) * c.stats[k];
      running_var.data[k] = m * running_var.data[k] + (T(1) - m) * c.stats[features + k];
    }
  }

  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>> grads) const {
    const int n = gy.batch();
    const int f = features;
    const std::size_t inner = gy.sample_size() / f;
    const double count = static_cast<double>(n) * inner;
    const bool train = c.stats[3 * f] != T(0);
    if (inner == 1) return backward_rows(c, gy, grads);
    std::vector<double> sum_g(f, 0.0), sum_gh(f, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < f; ++k) {
        const std::size_t off = (static_cast<std::size_t>(i) * f + k) * inner;
        double sg = sum_g[k], sgh = sum_gh[k];
        for (std::size_t j = 0; j < inner; ++j) {
          sg += gy.data[off + j];
          sgh += static_cast<double>(gy.data[off + j]) * c.aux.data[off + j];
        }
        sum_g[k] = sg;
        sum_gh[k] = sgh;
      }
    }
    if (!grads.empty()) {
      for (int k = 0; k < f; ++k) {
        grads[0].data[k] += static_cast<T>(sum_gh[k]);
        grads[1].data[k] += static_cast<T>(sum_g[k]);
      }
    }
    BasicTensor<T> gx(gy.shape);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < f; ++k) {
        const double scale = static_cast<double>(gamma.data[k]) * c.stats[2 * f + k];
        const std::size_t off = (static_cast<std::size_t>(i) * f + k) * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          double g = gy.data[off + j];
          if (train) g -= (sum_g[k] + c.aux.data[off + j] * sum_gh[k]) / count;
          gx.data[off + j] = static_cast<T>(scale * g);
        }
      }
    }
    return gx;
  }

 private:
  using RowArray = Eigen::Array<T, 1, Eigen::Dynamic>;
  using RowsMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using RowsMapMut = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  // (batch, features) inputs: vectorized across features.
  BasicTensor<T> forward_rows(const BasicTensor<T>& x, Mode mode, LayerCache<T>& c) const {
    const int n = x.batch();
    const int f = features;
    const RowsMap X(x.data.data(), n, f);
    RowArray mean = Eigen::Map<const RowArray>(running_mean.data.data(), f);
    RowArray var = Eigen::Map<const RowArray>(running_var.data.data(), f);
    if (mode == Mode::train) {
      // row-by-row accumulation keeps the reduction contiguous
      mean.setZero();
      for (int i = 0; i < n; ++i) mean += X.row(i);
      mean /= static_cast<T>(n);
      var.setZero();
      for (int i = 0; i < n; ++i) var += (X.row(i) - mean).square();
      var /= static_cast<T>(n);
    }
    const RowArray inv = (var + static_cast<T>(eps)).rsqrt();
    c.stats.assign(3 * f + 1, T(0));
    for (int k = 0; k < f; ++k) {
      c.stats[k] = mean[k];
      c.stats[f + k] = var[k];
      c.stats[2 * f + k] = inv[k];
    }
    c.stats[3 * f] = mode == Mode::train ? T(1) : T(0);
    BasicTensor<T> xhat(x.shape), y(x.shape);
    RowsMapMut H(xhat.data.data(), n, f), Y(y.data.data(), n, f);
    H = (X.rowwise() - mean).rowwise() * inv;
    Y = (H.rowwise() * Eigen::Map<const RowArray>(gamma.data.data(), f)).rowwise() +
        Eigen::Map<const RowArray>(beta.data.data(), f);
    c.aux = std::move(xhat);
    return y;
  }

  BasicTensor<T> backward_rows(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>> grads) const {
    const int n = gy.batch();
    const int f = features;
    const bool train = c.stats[3 * f] != T(0);
    const RowsMap G(gy.data.data(), n, f), H(c.aux.data.data(), n, f);
    RowArray sum_g = RowArray::Zero(f), sum_gh = RowArray::Zero(f);
    for (int i = 0; i < n; ++i) {
      sum_g += G.row(i);
      sum_gh += G.row(i) * H.row(i);
    }
    if (!grads.empty()) {
      Eigen::Map<RowArray>(grads[0].data.data(), f) += sum_gh;
      Eigen::Map<RowArray>(grads[1].data.data(), f) += sum_g;
    }
    const RowArray scale =
        Eigen::Map<const RowArray>(gamma.data.data(), f) * Eigen::Map<const RowArray>(c.stats.data() + 2 * f, f);
    BasicTensor<T> gx(gy.shape);
    RowsMapMut GX(gx.data.data(), n, f);
    if (train) {
      const T inv_n = T(1) / static_cast<T>(n);
      GX = ((G.rowwise() - sum_g * inv_n) - H.rowwise() * (sum_gh * inv_n)).rowwise() * scale;
    } else {
      GX = G.rowwise() * scale;
    }
    return gx;
  }
};

template <class T>
struct ReluT {
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    BasicTensor<T> y = x;
    for (T& v : y.data) v = v > T(0) ? v : T(0);
    c.aux = y;
    return y;
  }
  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>>) const {
    BasicTensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      if (c.aux.data[i] <= T(0)) gx.data[i] = T(0);
    }
    return gx;
  }
};

template <class T>
struct TanhT {
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    BasicTensor<T> y = x;
    for (T& v : y.data) v = std::tanh(v);
    c.aux = y;
    return y;
  }
  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>>) const {
    BasicTensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= T(1) - c.aux.data[i] * c.aux.data[i];
    return gx;
  }
};

template <class T>
struct SigmoidT {
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    BasicTensor<T> y = x;
    for (T& v : y.data) v = T(1) / (T(1) + std::exp(-v));
    c.aux = y;
    return y;
  }
  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>>) const {
    BasicTensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= c.aux.data[i] * (T(1) - c.aux.data[i]);
    return gx;
  }
};

/// Reinterprets each sample with a new shape of equal size (flatten / unflatten).
template <class T>
struct ReshapeT {
  std::vector<int> shape;

  [[nodiscard]] std::vector<int> output_shape(const std::vector<int>& s) const {
    if (shape_size(s) != shape_size(shape)) {
      throw ValidationError("reshape " + shape_string(s) + " -> " + shape_string(shape) + " changes size");
    }
    return shape;
  }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode, LayerCache<T>& c) const {
    std::vector<int> out{x.batch()};
    out.insert(out.end(), shape.begin(), shape.end());
    c.input.shape = x.shape;
    return BasicTensor<T>(out, x.data);
  }
  BasicTensor<T> backward(const LayerCache<T>& c, const BasicTensor<T>& gy, std::span<BasicTensor<T>>) const {
    return BasicTensor<T>(c.input.shape, gy.data);
  }
};

template <class T>
using LayerT = std::variant<DenseT<T>, Conv2dT<T>, ConvTranspose2dT<T>, BatchNormT<T>, ReluT<T>, TanhT<T>, SigmoidT<T>,
                            ReshapeT<T>>;

using Dense = DenseT<float>;
using Conv2d = Conv2dT<float>;
using ConvTranspose2d = ConvTranspose2dT<float>;
using BatchNorm = BatchNormT<float>;
using Layer = LayerT<float>;

template <class T = float>
LayerT<T> dense(int in, int out) {
  return DenseT<T>{in, out, {}, {}};
}
template <class T = float>
LayerT<T> conv(int in_ch, int out_ch, int kernel = 3, int stride = 2) {
  return Conv2dT<T>{in_ch, out_ch, kernel, stride, {}, {}};
}
template <class T = float>
LayerT<T> conv_transpose(int in_ch, int out_ch, int kernel = 4, int stride = 2, int padding = 1, int output_padding = 0) {
  return ConvTranspose2dT<T>{in_ch, out_ch, kernel, stride, padding, output_padding, {}, {}};
}
template <class T = float>
LayerT<T> batch_norm(int features, float momentum = 0.99f, float eps = 1e-5f) {
  return BatchNormT<T>{features, momentum, eps, {}, {}, {}, {}};
}
template <class T = float>
LayerT<T> relu() {
  return ReluT<T>{};
}
template <class T = float>
LayerT<T> tanh_layer() {
  return TanhT<T>{};
}
template <class T = float>
LayerT<T> sigmoid() {
  return SigmoidT<T>{};
}
template <class T = float>
LayerT<T> reshape(std::vector<int> shape) {
  return ReshapeT<T>{std::move(shape)};
}

}  // namespace deskavoid::nn
