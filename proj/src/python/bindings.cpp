#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "breathid/audio_io.hpp"
#include "breathid/config.hpp"
#include "breathid/hht.hpp"
#include "breathid/pipeline.hpp"
#include "breathid/preprocess.hpp"
#include "breathid/stationarity.hpp"

namespace py = pybind11;
using namespace breathid;

namespace {

std::vector<double> to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {a.data(), a.data() + a.shape(0)};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::array_t<double> rows_to_array(const std::vector<std::vector<double>>& rows) {
  const py::ssize_t r = static_cast<py::ssize_t>(rows.size());
  const py::ssize_t c = r ? static_cast<py::ssize_t>(rows[0].size()) : 0;
  py::array_t<double> a({r, c});
  for (py::ssize_t i = 0; i < r; ++i)
    std::copy(rows[i].begin(), rows[i].end(), a.mutable_data(i, 0));
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "breath-sound classification pipeline primitives";

  m.def(
      "design_highpass_fir",
      [](int num_taps, double cutoff_hz, double sample_rate_hz) {
        return to_array(preprocess::design_highpass_fir(num_taps, cutoff_hz, sample_rate_hz).taps);
      },
      py::arg("num_taps"), py::arg("cutoff_hz"), py::arg("sample_rate_hz"),
      "Blackman-windowed high-pass FIR taps (odd length, symmetric)");

  m.def(
      "apply_fir",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& taps,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& signal) {
        preprocess::FirFilter f;
        f.taps = to_vec(taps);
        return to_array(preprocess::apply_fir(f, to_vec(signal)));
      },
      py::arg("taps"), py::arg("signal"),
      "group-delay-compensated zero-padded convolution");

  m.def(
      "segment_breaths",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& signal,
         double sample_rate_hz, double frame_ms, double hop_ms, double threshold_factor,
         double min_breath_ms, double max_breath_ms, double merge_gap_ms) {
        preprocess::SegmentationParams p;
        p.frame_ms = frame_ms;
        p.hop_ms = hop_ms;
        p.threshold_factor = threshold_factor;
        p.min_breath_ms = min_breath_ms;
        p.max_breath_ms = max_breath_ms;
        p.merge_gap_ms = merge_gap_ms;
        std::vector<std::pair<std::int64_t, std::int64_t>> out;
        for (const auto& s : preprocess::segment_breaths(to_vec(signal), sample_rate_hz, p))
          out.emplace_back(s.start, s.end);
        return out;
      },
      py::arg("signal"), py::arg("sample_rate_hz"), py::arg("frame_ms") = 20.0,
      py::arg("hop_ms") = 10.0, py::arg("threshold_factor") = 3.0,
      py::arg("min_breath_ms") = 150.0, py::arg("max_breath_ms") = 2000.0,
      py::arg("merge_gap_ms") = 60.0,
      "RMS-threshold breath segmentation; returns [start, end) sample pairs");

  m.def(
      "align_channels",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& chans,
         int reference, int max_lag) {
        std::vector<std::vector<double>> in;
        for (const auto& c : chans) in.push_back(to_vec(c));
        const auto res = preprocess::align_channels(in, reference, max_lag);
        std::vector<py::array_t<double>> out;
        for (const auto& c : res.channels) out.push_back(to_array(c));
        return py::make_tuple(out, res.lags);
      },
      py::arg("channels"), py::arg("reference") = 0, py::arg("max_lag") = 48,
      "cross-correlation alignment; returns (aligned channels, lags)");

  m.def(
      "normalize_energy",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        return to_array(preprocess::normalize_energy(to_vec(x)));
      },
      py::arg("signal"), "scale to unit energy");

  m.def(
      "emd",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, int max_imfs,
         double sd_threshold, int max_sifts, double residual_energy_fraction) {
        hht::SiftingCriteria c;
        c.max_imfs = max_imfs;
        c.sd_threshold = sd_threshold;
        c.max_sifts_per_imf = max_sifts;
        c.residual_energy_fraction = residual_energy_fraction;
        const auto set = hht::emd(to_vec(x), c);
        return py::make_tuple(rows_to_array(set.imfs), to_array(set.residual));
      },
      py::arg("signal"), py::arg("max_imfs") = 9, py::arg("sd_threshold") = 0.2,
      py::arg("max_sifts") = 50, py::arg("residual_energy_fraction") = 1e-6,
      "empirical mode decomposition; returns (imfs [k x n], residual)");

  m.def(
      "analytic_signal",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        const auto z = hht::analytic_signal(to_vec(x));
        py::array_t<std::complex<double>> out(static_cast<py::ssize_t>(z.size()));
        std::copy(z.z.begin(), z.z.end(), out.mutable_data());
        return out;
      },
      py::arg("signal"), "one-sided-spectrum analytic signal");

  m.def(
      "instantaneous_magnitude",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        return to_array(hht::analytic_signal(to_vec(x)).magnitude());
      },
      py::arg("signal"), "|analytic signal|");

  m.def(
      "instantaneous_frequency",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         double sample_rate_hz) {
        return to_array(hht::instantaneous_frequency(hht::analytic_signal(to_vec(x)),
                                                     sample_rate_hz));
      },
      py::arg("signal"), py::arg("sample_rate_hz"),
      "unwrapped-phase derivative of the analytic signal, in Hz");

  m.def(
      "adf_test",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, int lag) {
        const auto r = stationarity::adf_test(to_vec(x), lag);
        py::dict d;
        d["statistic"] = r.test_statistic;
        d["lag"] = r.lag_order;
        d["n_effective"] = r.n_effective;
        d["reject_1pct"] = r.reject_at_p01;
        d["crit_1pct"] = r.crit_1pct;
        d["crit_5pct"] = r.crit_5pct;
        d["crit_10pct"] = r.crit_10pct;
        return d;
      },
      py::arg("series"), py::arg("lag") = stationarity::kAutoLag,
      "augmented Dickey-Fuller unit-root test (constant-only)");

  m.def(
      "load_recording",
      [](const std::string& path) {
        const auto rec = audio::load_recording(path);
        return py::make_tuple(rows_to_array(rec.channels), rec.sample_rate);
      },
      py::arg("path"), "WAV -> (channels [c x n], sample_rate)");

  m.def(
      "generate_synthetic",
      [](const std::string& out_dir, int n_speakers, int n_instances_per_cell, double sample_rate,
         std::uint64_t seed) {
        pipeline::SynthConfig c;
        c.out_dir = out_dir;
        c.n_speakers = n_speakers;
        c.n_instances_per_cell = n_instances_per_cell;
        c.sample_rate = sample_rate;
        c.seed = seed;
        return pipeline::generate_synthetic(c);
      },
      py::arg("out_dir"), py::arg("n_speakers") = 4, py::arg("n_instances_per_cell") = 50,
      py::arg("sample_rate") = 48000.0, py::arg("seed") = 1,
      "write a synthetic 4-channel dataset; returns the manifest path");

  m.def(
      "run_experiment",
      [](const std::string& config_path) {
        const auto result = pipeline::run_experiment(pipeline::load_config(config_path));
        std::vector<py::tuple> rows;
        for (const auto& r : result.grid)
          rows.push_back(py::make_tuple(r.task, r.mode, r.model, r.accuracy));
        return rows;
      },
      py::arg("config_path"),
      "full experiment from a JSON config; returns (task, mode, model, accuracy) rows");
}
