#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl {

enum class Mode { kTrain, kEval };

/// A trainable tensor with its gradient accumulator and SGD velocity.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Shape shape);

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;

  void zero_grad() { grad.fill(0.0); }
};

// Every layer caches what its backward pass needs during forward(); a
// backward() call consumes the cache of the most recent forward().
// Parameter gradients accumulate, input gradients are returned.

class Conv2d {
 public:
  struct Spec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;
  };

  Conv2d() = default;
  Conv2d(const Spec& spec, const std::string& name);

  Tensor forward(const Tensor& x);  // [B, C, H, W] -> [B, Co, Ho, Wo]
  Tensor backward(const Tensor& grad_out);
  void init(std::mt19937_64& rng);  // He fan-in normal, zero bias
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  const Spec& spec() const noexcept { return spec_; }

  // Output extent, or 0 when the input is smaller than the kernel.
  static std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

  Parameter weight;  // [Co, C, k, k]
  Parameter bias;    // [Co]

 private:
  Spec spec_;
  Tensor input_;
};

class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

 private:
  std::size_t kernel_ = 2;
  std::size_t stride_ = 2;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Averages over bins [floor(i*in/out), ceil((i+1)*in/out)) per axis.
class AdaptiveAvgPool2d {
 public:
  AdaptiveAvgPool2d() = default;
  explicit AdaptiveAvgPool2d(std::size_t out) : out_(out) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

 private:
  std::size_t out_ = 1;
  Shape input_shape_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

 private:
  std::vector<unsigned char> mask_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, const std::string& name);

  Tensor forward(const Tensor& x);  // [B, in] -> [B, out]
  Tensor backward(const Tensor& grad_out);
  void init(std::mt19937_64& rng);
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

 private:
  Tensor input_;
};

/// Batch normalization over [B, F]. Training mode normalizes with the biased
/// batch variance and folds the unbiased variance into the running estimate;
/// evaluation mode uses the running statistics only.
class BatchNorm1d {
 public:
  static constexpr Real kDefaultEps = 1e-5;
  static constexpr Real kDefaultMomentum = 0.1;

  BatchNorm1d() = default;
  BatchNorm1d(std::size_t features, const std::string& name, Real eps = kDefaultEps,
              Real momentum = kDefaultMomentum);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  std::vector<Parameter*> parameters() { return {&gamma, &beta}; }

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  Real eps_ = kDefaultEps;
  Real momentum_ = kDefaultMomentum;
  Mode mode_ = Mode::kTrain;
  Tensor xhat_;
  std::vector<Real> inv_std_;
};

/// Row-wise l2 normalization. Rows whose norm is below eps map to zero and
/// are reported through flagged_rows().
class L2Normalize {
 public:
  static constexpr Real kDefaultEps = 1e-12;

  explicit L2Normalize(Real eps = kDefaultEps) : eps_(eps) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  const std::vector<std::size_t>& flagged_rows() const noexcept { return flagged_; }

 private:
  Real eps_;
  Tensor output_;
  std::vector<Real> norms_;
  std::vector<std::size_t> flagged_;
};

}  // namespace mvcl
