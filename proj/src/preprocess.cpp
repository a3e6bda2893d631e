#include "breathid/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fft.hpp"

namespace breathid::preprocess {

namespace {

constexpr double kPi = std::numbers::pi;

// Direct convolution is fine for short signals/filters; switch to the FFT
// path once the naive product count gets large.
constexpr std::size_t kFftConvolutionThreshold = std::size_t{1} << 22;

}  // namespace

FirFilter design_highpass_fir(int num_taps, double cutoff_hz, double sample_rate_hz) {
  if (num_taps < 3 || num_taps % 2 == 0)
    throw std::invalid_argument("FIR length must be odd and >= 3");
  if (sample_rate_hz <= 0.0) throw std::invalid_argument("sample rate must be positive");
  if (cutoff_hz <= 0.0 || cutoff_hz >= sample_rate_hz / 2.0)
    throw std::invalid_argument("cutoff must lie strictly inside (0, Nyquist)");

  const int mid = (num_taps - 1) / 2;
  const double fc = cutoff_hz / sample_rate_hz;  // normalized (cycles/sample)

  // Blackman-windowed sinc low-pass prototype. Evaluate one half and mirror
  // so the taps are symmetric to the bit.
  std::vector<double> lp(num_taps);
  for (int n = 0; n <= mid; ++n) {
    const int d = n - mid;  // <= 0
    const double sinc = d == 0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * d) / (kPi * d);
    const double w = 0.42 - 0.5 * std::cos(2.0 * kPi * n / (num_taps - 1)) +
                     0.08 * std::cos(4.0 * kPi * n / (num_taps - 1));
    lp[n] = sinc * w;
    lp[num_taps - 1 - n] = lp[n];
  }
  double sum = 0.0;
  for (double v : lp) sum += v;
  for (double& v : lp) v /= sum;  // unity DC gain

  FirFilter f;
  f.cutoff_hz = cutoff_hz;
  f.sample_rate_hz = sample_rate_hz;
  f.taps.resize(num_taps);
  for (int n = 0; n < num_taps; ++n) f.taps[n] = -lp[n];
  f.taps[mid] += 1.0;  // spectral inversion: delta minus low-pass
  return f;
}

std::vector<double> apply_fir(const FirFilter& filter, const std::vector<double>& signal) {
  const std::size_t n = signal.size();
  const std::size_t l = filter.taps.size();
  if (l == 0) throw std::invalid_argument("empty filter");
  if (n == 0) return {};

  std::vector<double> full;
  if (n * l <= kFftConvolutionThreshold) {
    full.assign(n + l - 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = signal[i];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < l; ++j) full[i + j] += x * filter.taps[j];
    }
  } else {
    full = detail::fft_convolve(signal, filter.taps);
  }

  const std::size_t delay = static_cast<std::size_t>(filter.group_delay());
  std::vector<double> out(n);
  std::copy_n(full.begin() + delay, n, out.begin());
  return out;
}

std::vector<Segment> segment_breaths(const std::vector<double>& signal, double sample_rate_hz,
                                     const SegmentationParams& params) {
  if (sample_rate_hz <= 0.0) throw std::invalid_argument("sample rate must be positive");
  const std::int64_t n = static_cast<std::int64_t>(signal.size());
  const std::int64_t frame = std::llround(params.frame_ms * sample_rate_hz / 1000.0);
  const std::int64_t hop = std::llround(params.hop_ms * sample_rate_hz / 1000.0);
  if (frame <= 0 || hop <= 0) throw std::invalid_argument("frame and hop must be positive");
  if (n < frame) return {};

  std::vector<double> rms;
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + frame <= n; s += hop) {
    double acc = 0.0;
    for (std::int64_t i = s; i < s + frame; ++i) acc += signal[i] * signal[i];
    rms.push_back(std::sqrt(acc / frame));
    starts.push_back(s);
  }

  // Noise floor: lower nearest-rank 10th percentile of the framewise RMS.
  std::vector<double> sorted = rms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t idx = static_cast<std::size_t>(std::floor(0.10 * (sorted.size() - 1)));
  const double threshold = params.threshold_factor * sorted[idx];

  std::vector<Segment> runs;
  for (std::size_t f = 0; f < rms.size(); ++f) {
    if (!(rms[f] > threshold)) continue;
    const std::int64_t s = starts[f];
    const std::int64_t e = std::min(s + frame, n);
    if (!runs.empty() && s <= runs.back().end)
      runs.back().end = std::max(runs.back().end, e);
    else
      runs.push_back({s, e});
  }

  const std::int64_t merge_gap = std::llround(params.merge_gap_ms * sample_rate_hz / 1000.0);
  std::vector<Segment> merged;
  for (const Segment& r : runs) {
    if (!merged.empty() && r.start - merged.back().end < merge_gap)
      merged.back().end = r.end;
    else
      merged.push_back(r);
  }

  const std::int64_t min_len = std::llround(params.min_breath_ms * sample_rate_hz / 1000.0);
  const std::int64_t max_len = std::llround(params.max_breath_ms * sample_rate_hz / 1000.0);
  std::vector<Segment> out;
  for (const Segment& s : merged) {
    const std::int64_t len = s.end - s.start;
    if (len >= min_len && len <= max_len) out.push_back(s);
  }
  return out;
}

AlignResult align_channels(const std::vector<std::vector<double>>& channels, int reference_index,
                           int max_lag) {
  if (channels.empty()) throw std::invalid_argument("no channels");
  if (reference_index < 0 || reference_index >= static_cast<int>(channels.size()))
    throw std::invalid_argument("reference index out of range");
  if (max_lag < 0) throw std::invalid_argument("max_lag must be non-negative");
  const std::int64_t n = static_cast<std::int64_t>(channels[reference_index].size());
  for (const auto& ch : channels)
    if (static_cast<std::int64_t>(ch.size()) != n)
      throw std::invalid_argument("channels must share a length");

  const auto& ref = channels[reference_index];
  AlignResult result;
  result.channels.resize(channels.size());
  result.lags.resize(channels.size());

  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (static_cast<int>(c) == reference_index) {
      result.channels[c] = channels[c];
      result.lags[c] = 0;
      continue;
    }
    const auto& ch = channels[c];
    // lag tau > 0 means this channel trails the reference by tau samples:
    // ch[n + tau] lines up with ref[n].
    int best_lag = 0;
    double best_score = -1.0;
    for (int tau = -max_lag; tau <= max_lag; ++tau) {
      const std::int64_t lo = std::max<std::int64_t>(0, -tau);
      const std::int64_t hi = std::min<std::int64_t>(n, n - tau);
      double acc = 0.0;
      for (std::int64_t i = lo; i < hi; ++i) acc += ref[i] * ch[i + tau];
      const double score = std::fabs(acc);
      if (score > best_score ||
          (score == best_score && std::abs(tau) < std::abs(best_lag))) {
        best_score = score;
        best_lag = tau;
      }
    }
    std::vector<double> shifted(n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t src = i + best_lag;
      if (src >= 0 && src < n) shifted[i] = ch[src];
    }
    result.channels[c] = std::move(shifted);
    result.lags[c] = best_lag;
  }
  return result;
}

std::vector<double> normalize_energy(const std::vector<double>& signal) {
  double energy = 0.0;
  for (double v : signal) energy += v * v;
  if (energy == 0.0) return signal;  // silence stays silence
  const double scale = 1.0 / std::sqrt(energy);
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) out[i] = signal[i] * scale;
  return out;
}

}  // namespace breathid::preprocess
