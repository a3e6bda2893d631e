#include "fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace breathid::detail {

namespace {

// FFTW planning is not thread-safe; plan under a global lock, execute on
// per-thread buffers without it.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanEntry {
  fftw_plan plan = nullptr;
  fftw_complex* buf = nullptr;
  ~PlanEntry() {
    if (plan) fftw_destroy_plan(plan);
    if (buf) fftw_free(buf);
  }
  PlanEntry() = default;
  PlanEntry(const PlanEntry&) = delete;
  PlanEntry& operator=(const PlanEntry&) = delete;
  PlanEntry(PlanEntry&& o) noexcept : plan(o.plan), buf(o.buf) {
    o.plan = nullptr;
    o.buf = nullptr;
  }
};

PlanEntry make_plan(int n, bool inverse) {
  PlanEntry e;
  e.buf = fftw_alloc_complex(static_cast<std::size_t>(n));
  std::lock_guard<std::mutex> lock(planner_mutex());
  e.plan = fftw_plan_dft_1d(n, e.buf, e.buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  if (!e.plan) throw std::runtime_error("fftw plan creation failed");
  return e;
}

PlanEntry& cached_plan(int n, bool inverse) {
  thread_local std::unordered_map<long, PlanEntry> cache;
  long key = static_cast<long>(n) * 2 + (inverse ? 1 : 0);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, make_plan(n, inverse)).first;
  return it->second;
}

}  // namespace

std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& in, bool inverse) {
  const int n = static_cast<int>(in.size());
  if (n == 0) return {};
  if (n == 1) return in;
  PlanEntry& e = cached_plan(n, inverse);
  std::memcpy(e.buf, in.data(), sizeof(fftw_complex) * n);
  fftw_execute(e.plan);
  std::vector<std::complex<double>> out(n);
  std::memcpy(out.data(), e.buf, sizeof(fftw_complex) * n);
  return out;
}

std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 || m == 0) return {};
  const std::size_t len = n + m - 1;
  std::vector<std::complex<double>> fa(len), fb(len);
  for (std::size_t i = 0; i < n; ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < m; ++i) fb[i] = b[i];
  fa = fft(fa, false);
  fb = fft(fb, false);
  for (std::size_t i = 0; i < len; ++i) fa[i] *= fb[i];
  fa = fft(fa, true);
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = fa[i].real() / static_cast<double>(len);
  return out;
}

}  // namespace breathid::detail
