#include "hvts/tensor.hpp"

#include <cmath>

namespace hvts {

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor4::max_abs() const {
  double m = 0.0;
  for (double v : data_) {
    const double a = std::fabs(v);
    if (a > m) m = a;
  }
  return m;
}

}  // namespace hvts
