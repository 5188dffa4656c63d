#include "mvcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mvcl/errors.hpp"

namespace mvcl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) fail(ErrorCode::kShape, "tensor dims must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) fail(ErrorCode::kShape, "tensor dims must be positive: " + shape_string(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    fail(ErrorCode::kShape, "data length does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorCode::kShape, std::string(what) + " expects rank " + std::to_string(rank) +
                                ", got " + shape_string(t.shape()));
  }
}

}  // namespace mvcl
