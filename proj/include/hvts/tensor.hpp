#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hvts/error.hpp"

namespace hvts {

// Dense rank-4 tensor with (batch, depth, height, width) layout, row-major
// with width fastest.  Height carries the electrode axis and width the time
// axis throughout the pipeline.
struct Shape4 {
  int b = 0, d = 0, h = 0, w = 0;

  bool operator==(const Shape4&) const = default;
  std::size_t count() const {
    return static_cast<std::size_t>(b) * d * h * w;
  }
  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 s, double fill = 0.0)
      : shape_(s), data_(s.count(), fill) {
    if (s.b <= 0 || s.d <= 0 || s.h <= 0 || s.w <= 0) {
      throw Error(ErrorCategory::Shape, "tensor dims must be positive, got " + s.str());
    }
  }
  Tensor4(int b, int d, int h, int w, double fill = 0.0)
      : Tensor4(Shape4{b, d, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(int b, int d, int h, int w) {
    return data_[((static_cast<std::size_t>(b) * shape_.d + d) * shape_.h + h) * shape_.w + w];
  }
  const double& at(int b, int d, int h, int w) const {
    return data_[((static_cast<std::size_t>(b) * shape_.d + d) * shape_.h + h) * shape_.w + w];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const Tensor4&) const = default;

  bool all_finite() const;
  double max_abs() const;

  // Scalar convenience for (1,1,1,1) loss nodes.
  double scalar() const {
    if (size() != 1) {
      throw Error(ErrorCategory::Internal, "scalar() on tensor of shape " + shape_.str());
    }
    return data_[0];
  }

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw Error(ErrorCategory::Shape, std::string(op) + ": shape mismatch " +
                                          a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace hvts
