#pragma once

#include <complex>
#include <vector>

namespace hvts::spectral {

// Real-to-complex DFT; returns n/2 + 1 bins for an n-sample input.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft for a length-n real series (includes the 1/n scaling).
std::vector<double> irfft(const std::vector<std::complex<double>>& spectrum, int n);

}  // namespace hvts::spectral
