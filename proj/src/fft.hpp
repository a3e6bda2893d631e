#pragma once

#include <complex>
#include <vector>

namespace breathid::detail {

// Unnormalized DFT/IDFT of arbitrary length (FFTW backend). The inverse is
// unscaled; callers divide by N where needed. Thread-safe.
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in, bool inverse);

// Linear convolution via FFT, output length n + m - 1.
std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace breathid::detail
