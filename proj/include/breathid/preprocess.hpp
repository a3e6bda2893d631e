#pragma once

#include <cstdint>
#include <vector>

#include "breathid/types.hpp"

namespace breathid::preprocess {

// Linear-phase (Type I) FIR: odd length, symmetric taps.
struct FirFilter {
  std::vector<double> taps;
  double cutoff_hz = 0.0;
  double sample_rate_hz = 0.0;

  int length() const { return static_cast<int>(taps.size()); }
  int group_delay() const { return (length() - 1) / 2; }
};

// Windowed-sinc high-pass (Blackman window, spectral inversion of the
// low-pass prototype). num_taps must be odd.
FirFilter design_highpass_fir(int num_taps, double cutoff_hz, double sample_rate_hz);

// Zero-padded convolution with group-delay compensation: output has the
// input's length and is time-aligned with it.
std::vector<double> apply_fir(const FirFilter& filter, const std::vector<double>& signal);

struct SegmentationParams {
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  double threshold_factor = 3.0;   // times the 10th-percentile framewise RMS
  double min_breath_ms = 150.0;
  double max_breath_ms = 2000.0;
  double merge_gap_ms = 60.0;
};

struct Segment {
  std::int64_t start = 0;  // inclusive sample index
  std::int64_t end = 0;    // exclusive
  bool operator==(const Segment&) const = default;
};

// Frame-based level thresholding. Returns sorted, non-overlapping segments;
// gaps shorter than merge_gap_ms are merged, segments outside
// [min_breath_ms, max_breath_ms] are dropped.
std::vector<Segment> segment_breaths(const std::vector<double>& signal, double sample_rate_hz,
                                     const SegmentationParams& params);

struct AlignResult {
  std::vector<std::vector<double>> channels;
  std::vector<int> lags;  // per channel, samples; lags[reference] == 0
};

// Shift every channel onto the reference by the absolute cross-correlation
// peak, searched over [-max_lag, max_lag]. Shifted-in samples are zeros.
AlignResult align_channels(const std::vector<std::vector<double>>& channels, int reference_index,
                           int max_lag);

// Scale to unit energy (sum of squares == 1).
std::vector<double> normalize_energy(const std::vector<double>& signal);

}  // namespace breathid::preprocess
