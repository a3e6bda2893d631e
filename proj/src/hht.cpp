#include "breathid/hht.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fft.hpp"

namespace breathid::hht {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Interior extrema with plateau midpoints.
void find_extrema(const std::vector<double>& x, std::vector<int>& maxima,
                  std::vector<int>& minima) {
  maxima.clear();
  minima.clear();
  const int n = static_cast<int>(x.size());
  int last_dir = 0;
  int plateau_begin = 0;
  for (int i = 1; i < n; ++i) {
    const double d = x[i] - x[i - 1];
    if (d == 0.0) continue;
    const int dir = d > 0.0 ? 1 : -1;
    if (last_dir > 0 && dir < 0)
      maxima.push_back((plateau_begin + i - 1) / 2);
    else if (last_dir < 0 && dir > 0)
      minima.push_back((plateau_begin + i - 1) / 2);
    last_dir = dir;
    plateau_begin = i;
  }
}

// Natural cubic spline through (t_i, y_i), evaluated at every integer sample.
// Knot positions are strictly increasing and bracket [0, n-1].
std::vector<double> spline_at_samples(const std::vector<double>& t, const std::vector<double>& y,
                                      int n) {
  const int m = static_cast<int>(t.size());
  std::vector<double> out(n);
  if (m == 2) {
    const double slope = (y[1] - y[0]) / (t[1] - t[0]);
    for (int s = 0; s < n; ++s) out[s] = y[0] + slope * (s - t[0]);
    return out;
  }

  std::vector<double> h(m - 1);
  for (int i = 0; i + 1 < m; ++i) h[i] = t[i + 1] - t[i];

  // Second derivatives, natural ends; Thomas sweep over the interior rows.
  std::vector<double> mprime(m, 0.0);
  std::vector<double> diag(m, 0.0), rhs(m, 0.0), upper(m, 0.0);
  for (int i = 1; i + 1 < m; ++i) {
    diag[i] = 2.0 * (h[i - 1] + h[i]);
    upper[i] = h[i];
    rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
  }
  for (int i = 2; i + 1 < m; ++i) {
    const double w = h[i - 1] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (int i = m - 2; i >= 1; --i)
    mprime[i] = (rhs[i] - upper[i] * mprime[i + 1]) / diag[i];

  int seg = 0;
  for (int s = 0; s < n; ++s) {
    while (seg + 2 < m && t[seg + 1] < s) ++seg;
    const double hi = h[seg];
    const double a = t[seg + 1] - s;
    const double b = s - t[seg];
    out[s] = mprime[seg] * a * a * a / (6.0 * hi) + mprime[seg + 1] * b * b * b / (6.0 * hi) +
             (y[seg] / hi - mprime[seg] * hi / 6.0) * a +
             (y[seg + 1] / hi - mprime[seg + 1] * hi / 6.0) * b;
  }
  return out;
}

// Envelope through one family of extrema; the two extrema nearest each end
// are mirrored across it so the spline covers the whole sample range.
std::vector<double> envelope(const std::vector<double>& x, const std::vector<int>& idx) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(idx.size());
  std::vector<double> t, y;
  const int nmirror = std::min(m, 2);
  for (int i = nmirror - 1; i >= 0; --i) {
    t.push_back(-static_cast<double>(idx[i]));
    y.push_back(x[idx[i]]);
  }
  for (int i = 0; i < m; ++i) {
    t.push_back(idx[i]);
    y.push_back(x[idx[i]]);
  }
  for (int i = 0; i < nmirror; ++i) {
    t.push_back(2.0 * (n - 1) - idx[m - 1 - i]);
    y.push_back(x[idx[m - 1 - i]]);
  }
  return spline_at_samples(t, y, n);
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

ImfSet emd(const std::vector<double>& signal, const SiftingCriteria& criteria) {
  if (signal.empty()) throw std::invalid_argument("emd: empty signal");
  if (criteria.max_imfs < 1) throw std::invalid_argument("emd: max_imfs must be >= 1");

  const double total_energy = energy(signal);
  ImfSet result;
  result.residual = signal;

  std::vector<int> maxima, minima;
  while (result.count() < criteria.max_imfs) {
    find_extrema(result.residual, maxima, minima);
    if (maxima.size() + minima.size() < 2) break;
    if (energy(result.residual) <= criteria.residual_energy_fraction * total_energy) break;

    std::vector<double> h = result.residual;
    for (int sift = 0; sift < criteria.max_sifts_per_imf; ++sift) {
      find_extrema(h, maxima, minima);
      if (maxima.empty() || minima.empty()) break;
      const std::vector<double> upper = envelope(h, maxima);
      const std::vector<double> lower = envelope(h, minima);
      const double h_energy = energy(h);
      if (h_energy == 0.0) break;
      double drift = 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) {
        const double mean = 0.5 * (upper[i] + lower[i]);
        drift += mean * mean;
        h[i] -= mean;
      }
      if (drift / h_energy < criteria.sd_threshold) break;
    }
    for (std::size_t i = 0; i < h.size(); ++i) result.residual[i] -= h[i];
    result.imfs.push_back(std::move(h));
  }
  return result;
}

std::vector<double> AnalyticSignal::magnitude() const {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::abs(z[i]);
  return out;
}

std::vector<double> AnalyticSignal::phase() const {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::arg(z[i]);
  return out;
}

AnalyticSignal analytic_signal(const std::vector<double>& imf) {
  const std::size_t n0 = imf.size();
  if (n0 == 0) throw std::invalid_argument("analytic_signal: empty input");

  std::vector<std::complex<double>> buf(imf.begin(), imf.end());
  if (n0 % 2 != 0) buf.emplace_back(0.0, 0.0);
  const std::size_t n = buf.size();

  std::vector<std::complex<double>> spec = detail::fft(buf, false);
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < half; ++k) spec[k] *= 2.0;
  for (std::size_t k = half + 1; k < n; ++k) spec[k] = 0.0;
  std::vector<std::complex<double>> z = detail::fft(spec, true);

  AnalyticSignal out;
  out.z.resize(n0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n0; ++i)
    out.z[i] = {imf[i], z[i].imag() * inv_n};  // real part stays the source
  return out;
}

std::vector<double> instantaneous_magnitude(const AnalyticSignal& z) { return z.magnitude(); }

std::vector<double> instantaneous_frequency(const AnalyticSignal& z, double sample_rate_hz) {
  if (sample_rate_hz <= 0.0) throw std::invalid_argument("sample rate must be positive");
  const std::size_t n = z.size();
  std::vector<double> u(n);
  if (n == 0) return u;
  u[0] = std::arg(z.z[0]);
  for (std::size_t i = 1; i < n; ++i) {
    double d = std::arg(z.z[i]) - std::arg(z.z[i - 1]);
    d -= kTwoPi * std::round(d / kTwoPi);
    u[i] = u[i - 1] + d;
  }
  std::vector<double> f(n, 0.0);
  if (n == 1) return f;
  const double scale = sample_rate_hz / kTwoPi;
  f[0] = (u[1] - u[0]) * scale;
  f[n - 1] = (u[n - 1] - u[n - 2]) * scale;
  for (std::size_t i = 1; i + 1 < n; ++i) f[i] = 0.5 * (u[i + 1] - u[i - 1]) * scale;
  return f;
}

std::vector<MatD> hht_magnitudes(const BreathInstance& instance, int k_imfs,
                                 const SiftingCriteria& criteria) {
  if (k_imfs < 1) throw std::invalid_argument("k_imfs must be >= 1");
  std::vector<MatD> out;
  out.reserve(instance.channels.size());
  for (const auto& channel : instance.channels) {
    SiftingCriteria c = criteria;
    c.max_imfs = std::min(criteria.max_imfs, k_imfs);
    const ImfSet set = emd(channel, c);
    MatD m(k_imfs, static_cast<int>(channel.size()));
    std::fill(m.data.begin(), m.data.end(), 0.0);
    for (int k = 0; k < set.count() && k < k_imfs; ++k) {
      const std::vector<double> mag = instantaneous_magnitude(analytic_signal(set.imfs[k]));
      std::copy(mag.begin(), mag.end(), m.row_ptr(k));
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace breathid::hht
