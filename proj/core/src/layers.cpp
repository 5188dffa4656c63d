#include "mvcl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void he_normal(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<Real> dist(0.0, std::sqrt(2.0 / static_cast<Real>(fan_in)));
  for (auto& v : t.values()) v = dist(rng);
}

}  // namespace

Parameter::Parameter(std::string n, Shape shape)
    : name(std::move(n)), value(shape), grad(shape), velocity(std::move(shape)) {}

// ---- Conv2d ---------------------------------------------------------------

Conv2d::Conv2d(const Spec& spec, const std::string& name)
    : weight(name + ".weight", {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
      bias(name + ".bias", {spec.out_channels}),
      spec_(spec) {
  if (spec.kernel == 0 || spec.stride == 0) fail(ErrorCode::kConfiguration, "conv kernel/stride must be positive");
}

std::size_t Conv2d::out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

void Conv2d::init(std::mt19937_64& rng) {
  he_normal(weight.value, spec_.in_channels * spec_.kernel * spec_.kernel, rng);
  bias.value.fill(0.0);
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, k, stride, pad, ho, wo;
  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return ho * wo; }
};

void im2col(const Real* image, const ConvGeometry& g, Real* cols) {
  const auto P = g.cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        Real* row = cols + ((ch * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] =
                inside ? image[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const Real* cols, const ConvGeometry& g, Real* image) {
  const auto P = g.cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + ((ch * g.k + ky) * g.k + kx) * P;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            image[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) {
  expect_rank(x, 4, "conv2d");
  if (x.dim(1) != spec_.in_channels) {
    fail(ErrorCode::kShape, "conv2d expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                                shape_string(x.shape()));
  }
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), spec_.kernel, spec_.stride, spec_.pad,
                       out_extent(x.dim(2), spec_.kernel, spec_.stride, spec_.pad),
                       out_extent(x.dim(3), spec_.kernel, spec_.stride, spec_.pad)};
  if (g.ho == 0 || g.wo == 0) {
    fail(ErrorCode::kShape, "input " + shape_string(x.shape()) + " is smaller than the conv kernel");
  }
  input_ = x;
  const std::size_t B = x.dim(0);
  const std::size_t Co = spec_.out_channels;
  Tensor out({B, Co, g.ho, g.wo});
  RowMatrix cols(g.rows(), g.cols());
  ConstMatrixMap w(weight.value.data(), Co, g.rows());
  Eigen::Map<const Eigen::VectorXd> b(bias.value.data(), static_cast<Eigen::Index>(Co));
  for (std::size_t n = 0; n < B; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
    MatrixMap o(out.data() + n * Co * g.cols(), Co, g.cols());
    o.noalias() = w * cols;
    o.colwise() += b;
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), spec_.kernel, spec_.stride, spec_.pad,
                       grad_out.dim(2), grad_out.dim(3)};
  const std::size_t B = x.dim(0);
  const std::size_t Co = spec_.out_channels;
  Tensor grad_in(x.shape());
  RowMatrix cols(g.rows(), g.cols());
  RowMatrix dcols(g.rows(), g.cols());
  ConstMatrixMap w(weight.value.data(), Co, g.rows());
  MatrixMap dw(weight.grad.data(), Co, g.rows());
  Eigen::Map<Eigen::VectorXd> db(bias.grad.data(), static_cast<Eigen::Index>(Co));
  for (std::size_t n = 0; n < B; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
    ConstMatrixMap go(grad_out.data() + n * Co * g.cols(), Co, g.cols());
    dw.noalias() += go * cols.transpose();
    db += go.rowwise().sum();
    dcols.noalias() = w.transpose() * go;
    col2im_add(dcols.data(), g, grad_in.data() + n * g.c * g.h * g.w);
  }
  return grad_in;
}

// ---- MaxPool2d ------------------------------------------------------------

Tensor MaxPool2d::forward(const Tensor& x) {
  expect_rank(x, 4, "maxpool2d");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = Conv2d::out_extent(H, kernel_, stride_, 0);
  const std::size_t Wo = Conv2d::out_extent(W, kernel_, stride_, 0);
  if (Ho == 0 || Wo == 0) fail(ErrorCode::kShape, "input " + shape_string(x.shape()) + " is smaller than the pool window");
  input_shape_ = x.shape();
  Tensor out({B, C, Ho, Wo});
  argmax_.assign(out.numel(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const Real* src = x.data() + plane * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t arg = 0;
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::size_t idx = (oy * stride_ + ky) * W + ox * stride_ + kx;
            if (src[idx] > best) {
              best = src[idx];
              arg = idx;
            }
          }
        }
        out[o] = best;
        argmax_[o] = plane * H * W + arg;
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor grad_in(input_shape_);
  for (std::size_t o = 0; o < grad_out.numel(); ++o) grad_in[argmax_[o]] += grad_out[o];
  return grad_in;
}

// ---- AdaptiveAvgPool2d ----------------------------------------------------

namespace {

std::size_t bin_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t bin_end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }

}  // namespace

Tensor AdaptiveAvgPool2d::forward(const Tensor& x) {
  expect_rank(x, 4, "adaptive_avg_pool2d");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  input_shape_ = x.shape();
  Tensor out({B, C, out_, out_});
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const Real* src = x.data() + plane * H * W;
    for (std::size_t oy = 0; oy < out_; ++oy) {
      const auto y0 = bin_start(oy, H, out_), y1 = bin_end(oy, H, out_);
      for (std::size_t ox = 0; ox < out_; ++ox) {
        const auto x0 = bin_start(ox, W, out_), x1 = bin_end(ox, W, out_);
        Real sum = 0.0;
        for (auto yy = y0; yy < y1; ++yy)
          for (auto xx = x0; xx < x1; ++xx) sum += src[yy * W + xx];
        out[(plane * out_ + oy) * out_ + ox] = sum / static_cast<Real>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& grad_out) {
  const std::size_t B = input_shape_[0], C = input_shape_[1], H = input_shape_[2], W = input_shape_[3];
  Tensor grad_in(input_shape_);
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    Real* dst = grad_in.data() + plane * H * W;
    for (std::size_t oy = 0; oy < out_; ++oy) {
      const auto y0 = bin_start(oy, H, out_), y1 = bin_end(oy, H, out_);
      for (std::size_t ox = 0; ox < out_; ++ox) {
        const auto x0 = bin_start(ox, W, out_), x1 = bin_end(ox, W, out_);
        const Real g = grad_out[(plane * out_ + oy) * out_ + ox] / static_cast<Real>((y1 - y0) * (x1 - x0));
        for (auto yy = y0; yy < y1; ++yy)
          for (auto xx = x0; xx < x1; ++xx) dst[yy * W + xx] += g;
      }
    }
  }
  return grad_in;
}

// ---- ReLU -----------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  Tensor out = x;
  mask_.assign(x.numel(), 0);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] > 0.0) {
      mask_[i] = 1;
    } else {
      out[i] = 0.0;
    }
  }
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.numel(); ++i) {
    if (!mask_[i]) grad_in[i] = 0.0;
  }
  return grad_in;
}

// ---- Linear ---------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, const std::string& name)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

void Linear::init(std::mt19937_64& rng) {
  he_normal(weight.value, in_features(), rng);
  bias.value.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) {
  expect_rank(x, 2, "linear");
  if (x.dim(1) != in_features()) {
    fail(ErrorCode::kShape, "linear expects " + std::to_string(in_features()) + " features, got " +
                                shape_string(x.shape()));
  }
  input_ = x;
  const std::size_t B = x.dim(0), out_dim = out_features();
  Tensor out({B, out_dim});
  ConstMatrixMap xin(x.data(), B, in_features());
  ConstMatrixMap w(weight.value.data(), out_dim, in_features());
  Eigen::Map<const Eigen::RowVectorXd> b(bias.value.data(), static_cast<Eigen::Index>(out_dim));
  MatrixMap o(out.data(), B, out_dim);
  o.noalias() = xin * w.transpose();
  o.rowwise() += b;
  return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const std::size_t B = input_.dim(0), out_dim = out_features(), in_dim = in_features();
  ConstMatrixMap go(grad_out.data(), B, out_dim);
  ConstMatrixMap xin(input_.data(), B, in_dim);
  ConstMatrixMap w(weight.value.data(), out_dim, in_dim);
  MatrixMap dw(weight.grad.data(), out_dim, in_dim);
  Eigen::Map<Eigen::RowVectorXd> db(bias.grad.data(), static_cast<Eigen::Index>(out_dim));
  dw.noalias() += go.transpose() * xin;
  db += go.colwise().sum();
  Tensor grad_in({B, in_dim});
  MatrixMap gi(grad_in.data(), B, in_dim);
  gi.noalias() = go * w;
  return grad_in;
}

// ---- BatchNorm1d ----------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::size_t features, const std::string& name, Real eps, Real momentum)
    : gamma(name + ".gamma", {features}),
      beta(name + ".beta", {features}),
      running_mean({features}, 0.0),
      running_var({features}, 1.0),
      eps_(eps),
      momentum_(momentum) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
  expect_rank(x, 2, "batchnorm1d");
  const std::size_t B = x.dim(0), F = x.dim(1);
  if (F != gamma.value.numel()) fail(ErrorCode::kShape, "batchnorm feature count mismatch");
  mode_ = mode;
  xhat_ = Tensor({B, F});
  inv_std_.assign(F, 0.0);
  Tensor out({B, F});
  for (std::size_t f = 0; f < F; ++f) {
    Real mean = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t n = 0; n < B; ++n) mean += x[n * F + f];
      mean /= static_cast<Real>(B);
      for (std::size_t n = 0; n < B; ++n) {
        const Real d = x[n * F + f] - mean;
        var += d * d;
      }
      const Real biased = var / static_cast<Real>(B);
      const Real unbiased = B > 1 ? var / static_cast<Real>(B - 1) : biased;
      running_mean[f] = (1 - momentum_) * running_mean[f] + momentum_ * mean;
      running_var[f] = (1 - momentum_) * running_var[f] + momentum_ * unbiased;
      var = biased;
    } else {
      mean = running_mean[f];
      var = running_var[f];
    }
    const Real inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[f] = inv;
    for (std::size_t n = 0; n < B; ++n) {
      const Real h = (x[n * F + f] - mean) * inv;
      xhat_[n * F + f] = h;
      out[n * F + f] = gamma.value[f] * h + beta.value[f];
    }
  }
  return out;
}

Tensor BatchNorm1d::backward(const Tensor& grad_out) {
  const std::size_t B = xhat_.dim(0), F = xhat_.dim(1);
  Tensor grad_in({B, F});
  for (std::size_t f = 0; f < F; ++f) {
    Real sum_g = 0.0, sum_gh = 0.0;
    for (std::size_t n = 0; n < B; ++n) {
      const Real g = grad_out[n * F + f];
      sum_g += g;
      sum_gh += g * xhat_[n * F + f];
    }
    gamma.grad[f] += sum_gh;
    beta.grad[f] += sum_g;
    const Real scale = gamma.value[f] * inv_std_[f];
    if (mode_ == Mode::kTrain) {
      const Real inv_b = 1.0 / static_cast<Real>(B);
      for (std::size_t n = 0; n < B; ++n) {
        const Real g = grad_out[n * F + f];
        grad_in[n * F + f] = scale * (g - inv_b * sum_g - xhat_[n * F + f] * inv_b * sum_gh);
      }
    } else {
      for (std::size_t n = 0; n < B; ++n) grad_in[n * F + f] = scale * grad_out[n * F + f];
    }
  }
  return grad_in;
}

// ---- L2Normalize ----------------------------------------------------------

Tensor L2Normalize::forward(const Tensor& x) {
  expect_rank(x, 2, "l2_normalize");
  const std::size_t B = x.dim(0), D = x.dim(1);
  output_ = Tensor({B, D});
  norms_.assign(B, 0.0);
  flagged_.clear();
  for (std::size_t n = 0; n < B; ++n) {
    // Scaling by the largest magnitude keeps the sum of squares from
    // overflowing for large but finite rows.
    Real peak = 0.0;
    for (std::size_t d = 0; d < D; ++d) peak = std::max(peak, std::abs(x[n * D + d]));
    if (!std::isfinite(peak)) fail(ErrorCode::kNumeric, "non-finite input to l2 normalization");
    Real sq = 0.0;
    if (peak > 0.0) {
      for (std::size_t d = 0; d < D; ++d) sq += (x[n * D + d] / peak) * (x[n * D + d] / peak);
    }
    const Real norm = peak * std::sqrt(sq);
    norms_[n] = norm;
    if (norm < eps_) {
      flagged_.push_back(n);
      continue;
    }
    for (std::size_t d = 0; d < D; ++d) output_[n * D + d] = x[n * D + d] / norm;
  }
  return output_;
}

Tensor L2Normalize::backward(const Tensor& grad_out) {
  const std::size_t B = output_.dim(0), D = output_.dim(1);
  Tensor grad_in({B, D});
  for (std::size_t n = 0; n < B; ++n) {
    if (norms_[n] < eps_) continue;
    Real dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) dot += output_[n * D + d] * grad_out[n * D + d];
    for (std::size_t d = 0; d < D; ++d) {
      grad_in[n * D + d] = (grad_out[n * D + d] - output_[n * D + d] * dot) / norms_[n];
    }
  }
  return grad_in;
}

}  // namespace mvcl
