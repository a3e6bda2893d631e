#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "breathid/audio_io.hpp"
#include "breathid/pipeline.hpp"
#include "breathid/rng.hpp"
#include "fft.hpp"

namespace fs = std::filesystem;

namespace breathid::pipeline {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Cues are chosen to survive the downstream feature pipeline, which keeps only
// envelope information per oscillatory mode and normalizes every channel to
// unit energy. Speaker identity: the band-component chord position, the slow
// amplitude modulation (rate and waveform shape), and narrow noise bands at
// speaker-positioned frequencies on the far channels (which shift how noise
// energy spreads across modes there, while the close mic's turbulence stays
// speaker-neutral). Posture identity: far-channel
// envelope skew and a faster amplitude modulation, with the three lying
// variants sharing a family of nearby values; static gains and delays are
// deliberately uninformative.
constexpr double kChord[3] = {0.85, 1.0, 1.2};

// emphasis[posture][far channel][component]
constexpr double kEmphasis[5][3][3] = {
    {{1.8, 0.55, 0.55}, {0.55, 1.8, 0.55}, {0.55, 0.55, 1.8}},
    {{0.55, 1.8, 0.55}, {0.55, 0.55, 1.8}, {1.8, 0.55, 0.55}},
    {{0.55, 0.55, 1.8}, {1.8, 0.55, 0.55}, {0.55, 1.8, 0.55}},
    {{1.8, 1.8, 0.55}, {0.55, 1.8, 1.8}, {1.8, 0.55, 1.8}},
    {{1.8, 0.55, 1.8}, {1.8, 1.8, 0.55}, {0.55, 1.8, 1.8}},
};

// first-difference tilt coefficient per (posture, far channel)
constexpr double kTilt[5][3] = {
    {0.2, -0.1, 0.4},
    {-0.3, 0.3, 0.1},
    {0.5, -0.2, -0.4},
    {-0.1, 0.5, 0.3},
    {0.35, 0.05, -0.25},
};

// far-channel envelope per posture: attack/decay ramp fractions and the rate
// of the posture amplitude modulation (Hz). Lying variants cluster.
constexpr double kAttack[5] = {0.25, 0.08, 0.45, 0.40, 0.50};
constexpr double kDecay[5] = {0.25, 0.45, 0.08, 0.10, 0.06};
constexpr double kPostureAmHz[5] = {13.0, 21.0, 31.0, 33.0, 29.0};

constexpr int kBaseDelay[3] = {2, 3, 5};

// Flat-topped envelope with cosine ramps of the given fractional lengths.
double ramped(double t, double total, double attack_frac, double decay_frac) {
  const double up = attack_frac * total;
  const double down = decay_frac * total;
  if (t <= 0.0 || t >= total) return 0.0;
  if (t < up) return 0.5 * (1.0 - std::cos(std::numbers::pi * t / up));
  if (t > total - down) return 0.5 * (1.0 - std::cos(std::numbers::pi * (total - t) / down));
  return 1.0;
}

// White noise confined to [lo, hi] (fractions of Nyquist) by spectral masking.
std::vector<double> band_noise(int n, double lo, double hi, Rng& rng) {
  std::vector<std::complex<double>> buf(n);
  for (int i = 0; i < n; ++i) buf[i] = rng.normal();
  auto spec = detail::fft(buf, false);
  for (int k = 0; k < n; ++k) {
    const int sym = std::min(k, n - k);                  // bin distance from DC
    const double frac = 2.0 * sym / n;                   // 1.0 at Nyquist
    if (frac < lo || frac > hi) spec[k] = 0.0;
  }
  auto back = detail::fft(spec, true);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = back[i].real() / n;
  return out;
}

double mean_power(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return x.empty() ? 0.0 : e / x.size();
}

}  // namespace

std::string generate_synthetic(const SynthConfig& config) {
  if (config.n_speakers < 2) throw std::invalid_argument("synth: need at least 2 speakers");
  if (config.n_instances_per_cell < 1)
    throw std::invalid_argument("synth: need at least 1 instance per cell");
  if (config.sample_rate <= 0.0) throw std::invalid_argument("synth: bad sample rate");
  if (config.out_dir.empty()) throw std::invalid_argument("synth: out_dir not set");
  if (config.min_duration_s <= 0.0 || config.max_duration_s < config.min_duration_s)
    throw std::invalid_argument("synth: bad duration range");

  const double sr = config.sample_rate;
  const double nyq = sr / 2.0;
  const int n_speakers = config.n_speakers;

  fs::create_directories(fs::path(config.out_dir) / "wav");

  DatasetManifest manifest;
  for (int s = 0; s < n_speakers; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%02d", s);
    manifest.speaker_vocab.push_back(buf);
  }
  manifest.posture_vocab.assign(kPostureTokens.begin(), kPostureTokens.end());

  Rng root(config.seed);
  for (int s = 0; s < n_speakers; ++s) {
    const double pos = n_speakers > 1 ? static_cast<double>(s) / (n_speakers - 1) : 0.5;
    const double base_center = (0.3 + 0.4 * pos) * nyq;
    const double am_base = 3.5 + 10.0 * pos;
    const double am_shape = 0.35 * pos;  // second-harmonic content of the AM waveform

    for (int o = 0; o < 5; ++o) {
      for (int i = 0; i < config.n_instances_per_cell; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%s_%03d", manifest.speaker_vocab[s].c_str(),
                      kPostureTokens[o], i);
        Rng rng = root.stream(fnv1a64(name));

        const double dur =
            config.min_duration_s + (config.max_duration_s - config.min_duration_s) * rng.uniform();
        const int n_breath = std::max(8, static_cast<int>(std::lround(dur * sr)));
        const int n_pad = static_cast<int>(std::lround(config.pad_s * sr));
        const int n_total = n_breath + 2 * n_pad;

        // AM band components shared by every channel, not yet enveloped
        const double am_rate = am_base * (1.0 + 0.05 * (2.0 * rng.uniform() - 1.0));
        std::vector<std::vector<double>> comp(3, std::vector<double>(n_breath));
        for (int g = 0; g < 3; ++g) {
          const double f = base_center * kChord[g];
          const double phase = kTwoPi * rng.uniform();
          const double am_phase = kTwoPi * rng.uniform();
          for (int t = 0; t < n_breath; ++t) {
            const double ts = t / sr;
            const double am = 1.0 + 0.6 * std::sin(kTwoPi * am_rate * ts + am_phase) +
                              am_shape * std::sin(2.0 * kTwoPi * am_rate * ts + 2.0 * am_phase + 1.0);
            comp[g][t] = am * std::sin(kTwoPi * f * ts + phase);
          }
        }
        // shared wide-band turbulence (speaker-neutral, dominates the close
        // mic) plus one narrow speaker-positioned band per far channel: a
        // texture signature only the multichannel modes can see
        std::vector<double> turb = band_noise(n_breath, 0.12, 0.75, rng);
        std::vector<std::vector<double>> far_band(3);
        for (int c = 0; c < 3; ++c) {
          const double lo = 0.10 + 0.40 * pos + 0.05 * c;
          far_band[c] = band_noise(n_breath, lo, lo + 0.22, rng);
        }

        // posture envelope on the far channels: skewed ramps plus a faster
        // amplitude modulation than the speaker one
        const double pam_rate = kPostureAmHz[o] * (1.0 + 0.04 * (2.0 * rng.uniform() - 1.0));
        const double pam_phase = kTwoPi * rng.uniform();
        std::vector<double> env_sym(n_breath), env_far(n_breath);
        for (int t = 0; t < n_breath; ++t) {
          const double ts = t / sr;
          env_sym[t] = ramped(ts, dur, 0.25, 0.25);
          env_far[t] = ramped(ts, dur, kAttack[o], kDecay[o]) *
                       (1.0 + 0.8 * std::sin(kTwoPi * pam_rate * ts + pam_phase));
        }

        MultichannelRecording rec;
        rec.sample_rate = sr;
        rec.channel_roles = {"close_mic", "far_mic_1", "far_mic_2", "far_mic_3"};
        rec.channels.assign(4, std::vector<double>(n_total, 0.0));

        // close mic: turbulence-dominated, symmetric envelope, no posture cue
        for (int t = 0; t < n_breath; ++t) {
          double v = 1.2 * turb[t];
          for (int g = 0; g < 3; ++g) v += 0.35 * comp[g][t];
          rec.channels[0][n_pad + t] = env_sym[t] * v;
        }

        for (int c = 0; c < 3; ++c) {
          std::vector<double> mixed(n_breath);
          for (int t = 0; t < n_breath; ++t) {
            double v = 0.45 * turb[t] + 0.75 * far_band[c][t];
            for (int g = 0; g < 3; ++g) v += kEmphasis[o][c][g] * comp[g][t];
            mixed[t] = v;
          }
          const double tau = kTilt[o][c];
          for (int t = n_breath - 1; t >= 1; --t) mixed[t] -= tau * mixed[t - 1];
          const double gain = (0.9 - 0.1 * c) * (1.0 + 0.1 * (2.0 * rng.uniform() - 1.0));
          const int delay = kBaseDelay[c] + static_cast<int>(rng.bounded(3)) - 1;
          for (int t = 0; t < n_breath; ++t) {
            const int dst = n_pad + t + delay;
            if (dst < n_total) rec.channels[c + 1][dst] = gain * env_far[t] * mixed[t];
          }
        }

        // additive channel noise at the configured SNR over the whole file
        for (int c = 0; c < 4; ++c) {
          const double p = mean_power(rec.channels[c]);
          const double sigma = std::sqrt(p * std::pow(10.0, -config.snr_db / 10.0));
          for (int t = 0; t < n_total; ++t) rec.channels[c][t] += sigma * rng.normal();
        }

        const std::string rel = std::string("wav/") + name + ".wav";
        audio::save_recording(rec, (fs::path(config.out_dir) / rel).string(),
                              audio::SampleFormat::Float32);
        ManifestEntry entry;
        entry.recording_path = rel;
        entry.speaker_id = manifest.speaker_vocab[s];
        entry.posture_id = kPostureTokens[o];
        manifest.entries.push_back(entry);
      }
    }
  }

  const std::string manifest_path = (fs::path(config.out_dir) / "manifest.txt").string();
  audio::save_manifest(manifest, manifest_path);
  return manifest_path;
}

}  // namespace breathid::pipeline
