#include "hvts/spectral.hpp"

#include <fftw3.h>

#include <mutex>

#include "hvts/error.hpp"

namespace hvts::spectral {

namespace {
// FFTW plan creation is not thread-safe; execution of separate plans is.
std::mutex plan_mutex;
}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n <= 0) {
    throw Error(ErrorCategory::Shape, "rfft: empty input");
  }
  std::vector<double> in(x);
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    plan = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                FFTW_ESTIMATE | FFTW_PRESERVE_INPUT);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    fftw_destroy_plan(plan);
  }
  return out;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& spectrum, int n) {
  if (n <= 0 || spectrum.size() != static_cast<std::size_t>(n / 2 + 1)) {
    throw Error(ErrorCategory::Shape, "irfft: spectrum size does not match target length");
  }
  std::vector<std::complex<double>> in(spectrum);  // c2r transforms clobber input
  std::vector<double> out(n);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    plan = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(in.data()), out.data(),
                                FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    fftw_destroy_plan(plan);
  }
  const double inv = 1.0 / n;
  for (double& v : out) v *= inv;
  return out;
}

}  // namespace hvts::spectral
