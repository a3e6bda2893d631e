#pragma once

#include <complex>
#include <string>
#include <vector>

#include "breathid/matrix.hpp"
#include "breathid/types.hpp"

namespace breathid::hht {

struct SiftingCriteria {
  double sd_threshold = 0.2;               // Cauchy stop on successive sifts
  int max_sifts_per_imf = 50;
  double residual_energy_fraction = 1e-6;  // stop when residual energy falls below this times signal energy
  int max_imfs = 9;
};

// K intrinsic mode functions plus residual; imfs[0] has the highest
// frequency content. x == sum(imfs) + residual.
struct ImfSet {
  std::vector<std::vector<double>> imfs;
  std::vector<double> residual;
  std::string source_id;

  int count() const { return static_cast<int>(imfs.size()); }
};

// Empirical mode decomposition by envelope-mean sifting. Envelopes are
// natural cubic splines through the extrema, with the two nearest extrema
// mirrored across each signal end.
ImfSet emd(const std::vector<double>& signal, const SiftingCriteria& criteria);

// Complex signal with one-sided spectrum; real part equals the source
// sample-for-sample.
struct AnalyticSignal {
  std::vector<std::complex<double>> z;

  std::size_t size() const { return z.size(); }
  std::vector<double> magnitude() const;
  std::vector<double> phase() const;  // (-pi, pi]
};

// DFT-domain construction: weight 1 at DC and Nyquist, 2 for positive
// frequencies, 0 for negative ones. Odd lengths are zero-padded by one
// sample for the transform and truncated back.
AnalyticSignal analytic_signal(const std::vector<double>& imf);

// Elementwise modulus of z.
std::vector<double> instantaneous_magnitude(const AnalyticSignal& z);

// Unwrapped-phase derivative in Hz (central differences, one-sided ends).
std::vector<double> instantaneous_frequency(const AnalyticSignal& z, double sample_rate_hz);

// Per channel: decompose, keep the first K IMFs (rows of zeros when fewer
// emerge), and stack their instantaneous magnitudes as a K x N matrix.
std::vector<MatD> hht_magnitudes(const BreathInstance& instance, int k_imfs,
                                 const SiftingCriteria& criteria);

}  // namespace breathid::hht
