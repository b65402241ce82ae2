#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedseg::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Batch of feature maps: one row per channel, columns ordered (b, y, x)
/// with x fastest. Every layer below works on this layout, which turns
/// convolutions into a single GEMM after im2col.
template <typename Scalar>
struct FeatureMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  Matrix<Scalar> data;

  FeatureMap() = default;
  FeatureMap(int channels, int b, int h, int w)
      : batch(b), height(h), width(w), data(Matrix<Scalar>::Zero(channels, Eigen::Index{b} * h * w)) {}

  [[nodiscard]] int channels() const { return static_cast<int>(data.rows()); }
  [[nodiscard]] Eigen::Index positions() const { return Eigen::Index{batch} * height * width; }
  [[nodiscard]] Eigen::Index column(int b, int y, int x) const {
    return (Eigen::Index{b} * height + y) * width + x;
  }
};

// ---------------------------------------------------------------------------
// 3x3 convolution, padding 1, stride 1 or 2.

template <typename Scalar>
Matrix<Scalar> im2col3x3(const FeatureMap<Scalar>& in, int stride) {
  const int ho = (in.height - 1) / stride + 1;
  const int wo = (in.width - 1) / stride + 1;
  Matrix<Scalar> col(Eigen::Index{in.channels()} * 9, Eigen::Index{in.batch} * ho * wo);
  for (int c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = col.row(Eigen::Index{c} * 9 + ky * 3 + kx).data();
        for (int b = 0; b < in.batch; ++b)
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - 1;
            Scalar* out = dst + (Eigen::Index{b} * ho + oy) * wo;
            if (iy < 0 || iy >= in.height) {
              std::fill(out, out + wo, Scalar(0));
              continue;
            }
            const Scalar* row = src + (Eigen::Index{b} * in.height + iy) * in.width;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - 1;
              out[ox] = (ix < 0 || ix >= in.width) ? Scalar(0) : row[ix];
            }
          }
      }
  }
  return col;
}

/// Adjoint of im2col3x3: scatters column gradients back onto the input grid.
template <typename Scalar>
FeatureMap<Scalar> col2im3x3(const Matrix<Scalar>& col, int channels, int batch, int height,
                             int width, int stride) {
  const int ho = (height - 1) / stride + 1;
  const int wo = (width - 1) / stride + 1;
  FeatureMap<Scalar> out(channels, batch, height, width);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = out.data.row(c).data();
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = col.row(Eigen::Index{c} * 9 + ky * 3 + kx).data();
        for (int b = 0; b < batch; ++b)
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= height) continue;
            const Scalar* in = src + (Eigen::Index{b} * ho + oy) * wo;
            Scalar* row = dst + (Eigen::Index{b} * height + iy) * width;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix >= 0 && ix < width) row[ix] += in[ox];
            }
          }
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, y, x) per channel.

template <typename Scalar>
struct BatchNormCache {
  Matrix<Scalar> normalized;
  Vector<Scalar> inv_std;
};

/// Training-mode batch norm: normalizes with batch statistics and updates
/// the running statistics in place (unbiased variance, PyTorch convention).
template <typename Scalar>
void batch_norm_train(Matrix<Scalar>& x, const Eigen::Ref<const Vector<Scalar>>& gamma,
                      const Eigen::Ref<const Vector<Scalar>>& beta, Eigen::Ref<Vector<Scalar>> running_mean,
                      Eigen::Ref<Vector<Scalar>> running_var, Scalar momentum, Scalar eps,
                      BatchNormCache<Scalar>& cache) {
  const auto n = static_cast<Scalar>(x.cols());
  const Vector<Scalar> mean = x.rowwise().mean();
  x.colwise() -= mean;
  const Vector<Scalar> var = x.array().square().rowwise().sum().matrix() / n;
  cache.inv_std = (var.array() + eps).rsqrt().matrix();
  x = cache.inv_std.asDiagonal() * x;
  cache.normalized = x;
  x = gamma.asDiagonal() * x;
  x.colwise() += beta;
  const Scalar unbias = x.cols() > 1 ? n / (n - 1) : Scalar(1);
  running_mean = (Scalar(1) - momentum) * running_mean + momentum * mean;
  running_var = (Scalar(1) - momentum) * running_var + momentum * unbias * var;
}

template <typename Scalar>
void batch_norm_eval(Matrix<Scalar>& x, const Eigen::Ref<const Vector<Scalar>>& gamma,
                     const Eigen::Ref<const Vector<Scalar>>& beta,
                     const Eigen::Ref<const Vector<Scalar>>& running_mean,
                     const Eigen::Ref<const Vector<Scalar>>& running_var, Scalar eps) {
  const Vector<Scalar> scale = gamma.array() * (running_var.array() + eps).rsqrt();
  const Vector<Scalar> shift = beta.array() - running_mean.array() * scale.array();
  x = scale.asDiagonal() * x;
  x.colwise() += shift;
}

/// Returns d(input); accumulates into dgamma/dbeta.
template <typename Scalar>
Matrix<Scalar> batch_norm_backward(const Matrix<Scalar>& dy, const Eigen::Ref<const Vector<Scalar>>& gamma,
                                   const BatchNormCache<Scalar>& cache, Eigen::Ref<Vector<Scalar>> dgamma,
                                   Eigen::Ref<Vector<Scalar>> dbeta) {
  const auto n = static_cast<Scalar>(dy.cols());
  const Vector<Scalar> sum_dy = dy.rowwise().sum();
  const Vector<Scalar> sum_dy_xhat = dy.cwiseProduct(cache.normalized).rowwise().sum();
  dgamma += sum_dy_xhat;
  dbeta += sum_dy;
  // dx = gamma * inv_std / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))
  Matrix<Scalar> dx = n * dy;
  dx.colwise() -= sum_dy;
  dx -= sum_dy_xhat.asDiagonal() * cache.normalized;
  const Vector<Scalar> scale = gamma.array() * cache.inv_std.array() / n;
  return scale.asDiagonal() * dx;
}

// ---------------------------------------------------------------------------
// PReLU with a single learned slope.

template <typename Scalar>
void prelu_forward(Matrix<Scalar>& x, Scalar slope) {
  x = x.unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
}

/// `pre` is the activation input. Returns dx; adds d(slope) into dslope.
template <typename Scalar>
Matrix<Scalar> prelu_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& pre, Scalar slope,
                              Scalar& dslope) {
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  Scalar acc = 0;
  const Eigen::Index n = dy.size();
  const Scalar* g = dy.data();
  const Scalar* p = pre.data();
  Scalar* out = dx.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p[i] > Scalar(0)) {
      out[i] = g[i];
    } else {
      out[i] = slope * g[i];
      acc += g[i] * p[i];
    }
  }
  dslope += acc;
  return dx;
}

// ---------------------------------------------------------------------------
// 2x2 transposed convolution, stride 2. Weight matrix rows are (cout, ky, kx).

template <typename Scalar>
FeatureMap<Scalar> upconv2x2_forward(const Eigen::Ref<const Matrix<Scalar>>& weight,
                                     const Eigen::Ref<const Vector<Scalar>>& bias,
                                     const FeatureMap<Scalar>& in) {
  const int cout = static_cast<int>(bias.size());
  const Matrix<Scalar> m = weight * in.data;  // (cout*4) x (B*H*W)
  FeatureMap<Scalar> out(cout, in.batch, in.height * 2, in.width * 2);
  for (int c = 0; c < cout; ++c) {
    Scalar* dst = out.data.row(c).data();
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2, kx = k % 2;
      const Scalar* src = m.row(Eigen::Index{c} * 4 + k).data();
      for (int b = 0; b < in.batch; ++b)
        for (int y = 0; y < in.height; ++y) {
          const Scalar* s = src + (Eigen::Index{b} * in.height + y) * in.width;
          Scalar* d = dst + out.column(b, 2 * y + ky, kx);
          for (int x = 0; x < in.width; ++x) d[2 * x] = s[x] + bias[c];
        }
    }
  }
  return out;
}

/// Gathers the output gradient into the (cout*4) x positions layout.
template <typename Scalar>
Matrix<Scalar> upconv2x2_gather(const FeatureMap<Scalar>& dout, int in_height, int in_width) {
  const int cout = dout.channels();
  Matrix<Scalar> dm(Eigen::Index{cout} * 4, Eigen::Index{dout.batch} * in_height * in_width);
  for (int c = 0; c < cout; ++c) {
    const Scalar* src = dout.data.row(c).data();
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2, kx = k % 2;
      Scalar* dst = dm.row(Eigen::Index{c} * 4 + k).data();
      for (int b = 0; b < dout.batch; ++b)
        for (int y = 0; y < in_height; ++y) {
          Scalar* d = dst + (Eigen::Index{b} * in_height + y) * in_width;
          const Scalar* s = src + dout.column(b, 2 * y + ky, kx);
          for (int x = 0; x < in_width; ++x) d[x] = s[2 * x];
        }
    }
  }
  return dm;
}

// ---------------------------------------------------------------------------
// Two-class softmax cross-entropy against per-voxel target distributions.

/// Row 1 of the result is p(lesion); row 0 is computed as its complement so
/// the pair sums to one up to a single rounding.
template <typename Scalar>
Matrix<Scalar> softmax2(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(2, logits.cols());
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const Scalar p1 = Scalar(1) / (Scalar(1) + std::exp(logits(0, i) - logits(1, i)));
    p(1, i) = p1;
    p(0, i) = Scalar(1) - p1;
  }
  return p;
}

/// Mean over voxels of -sum_k t_k log p_k. Writes d(loss)/d(logits) when
/// `grad` is non-null.
template <typename Scalar>
Scalar cross_entropy2(const Matrix<Scalar>& logits, const Matrix<Scalar>& targets, Matrix<Scalar>* grad) {
  if (logits.rows() != 2 || targets.rows() != 2 || logits.cols() != targets.cols())
    throw std::invalid_argument("cross_entropy2: logits and targets must both be 2 x N");
  const Eigen::Index n = logits.cols();
  if (grad) grad->resize(2, n);
  double total = 0.0;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar d = logits(1, i) - logits(0, i);
    // log p1 = -softplus(-d), log p0 = -softplus(d)
    const Scalar sp_pos = d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
    const Scalar sp_neg = sp_pos - d;
    total += static_cast<double>(targets(0, i) * sp_pos + targets(1, i) * sp_neg);
    if (grad) {
      const Scalar p1 = Scalar(1) / (Scalar(1) + std::exp(-d));
      const Scalar t1 = targets(1, i), t0 = targets(0, i);
      // d/dl1 = p1*(t0+t1) - t1 ; d/dl0 = (1-p1)*(t0+t1) - t0
      (*grad)(1, i) = (p1 * (t0 + t1) - t1) * inv_n;
      (*grad)(0, i) = ((Scalar(1) - p1) * (t0 + t1) - t0) * inv_n;
    }
  }
  return static_cast<Scalar>(total / static_cast<double>(n));
}

}  // namespace fedseg::nn
