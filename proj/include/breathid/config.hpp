#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "breathid/features.hpp"
#include "breathid/hht.hpp"
#include "breathid/neuralnet.hpp"
#include "breathid/preprocess.hpp"

namespace breathid::pipeline {

struct PreprocessConfig {
  int fir_taps = 4097;
  double fir_cutoff_hz = 70.0;
  preprocess::SegmentationParams segmentation;
  double align_max_lag_ms = 50.0;
  int align_reference = 0;  // close mic
  int segment_channel = 0;  // channel the level thresholding runs on
};

struct HhtConfig {
  int k_imfs = 9;
  hht::SiftingCriteria criteria;
};

struct FeatureConfig {
  features::ConfigMode mode = features::ConfigMode::AllOrdered;
  bool shuffle_train_per_epoch = true;  // AllShuffled only; evaluation always uses the fixed draw
};

// Synthetic dataset: each (speaker, posture) cell gets n_instances_per_cell
// breath-like recordings. Speaker identity drives the band-component chord,
// the slow amplitude-modulation rate, and the turbulence band; posture drives
// far-channel emphasis profiles, envelope skew, and a faster amplitude
// modulation. The close mic carries no posture cue.
struct SynthConfig {
  int n_speakers = 4;
  int n_instances_per_cell = 50;
  double sample_rate = 48000.0;
  std::uint64_t seed = 1;
  double min_duration_s = 0.3;
  double max_duration_s = 1.5;
  double pad_s = 0.15;     // silence around each breath
  double snr_db = 20.0;    // additive noise level per channel
  std::string out_dir;
};

struct TrainSection {
  nn::TrainConfig config;
  std::vector<std::string> model_specs = {
      "C1D(32,8,4,0.1) C1D(64,4,2,0.2) GRU(64,0.2) Dense",
      "C1D(16,16,8,0.3) GRU(96,0.3) Dense",
      "C1D(48,4,2,0.1) C1D(48,4,2,0.1) GRU(32,0.1) Dense",
  };
};

struct PipelineConfig {
  std::uint64_t seed = 1234;
  bool deterministic = true;
  int threads = 1;
  PreprocessConfig preprocess;
  HhtConfig hht;
  FeatureConfig features;
  TrainSection train;
  double test_fraction = 0.2;
  std::vector<std::string> tasks = {"speaker", "posture3", "posture5"};
  std::vector<std::string> modes = {"channel0", "split", "all_ordered", "all_shuffled"};
  SynthConfig synth;
  std::string manifest_path;  // input data; empty means synthesize into out_dir
  std::string out_dir = "breathid_out";
};

PipelineConfig default_config();
PipelineConfig load_config(const std::string& path);
void save_config(const PipelineConfig& config, const std::string& path);

}  // namespace breathid::pipeline
