#include "breathid/config.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

using json = nlohmann::json;

namespace breathid::pipeline {

PipelineConfig default_config() { return PipelineConfig{}; }

namespace {

// Every key is optional and falls back to the default; unknown keys are
// rejected so typos do not silently vanish.
template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw std::invalid_argument("unknown config key " + where + "." + key);
  }
}

void load_segmentation(const json& j, preprocess::SegmentationParams& p) {
  check_keys(j, {"frame_ms", "hop_ms", "threshold_factor", "min_breath_ms", "max_breath_ms",
                 "merge_gap_ms"},
             "preprocess.segmentation");
  get(j, "frame_ms", p.frame_ms);
  get(j, "hop_ms", p.hop_ms);
  get(j, "threshold_factor", p.threshold_factor);
  get(j, "min_breath_ms", p.min_breath_ms);
  get(j, "max_breath_ms", p.max_breath_ms);
  get(j, "merge_gap_ms", p.merge_gap_ms);
}

void load_preprocess(const json& j, PreprocessConfig& p) {
  check_keys(j, {"fir_taps", "fir_cutoff_hz", "segmentation", "align_max_lag_ms",
                 "align_reference", "segment_channel"},
             "preprocess");
  get(j, "fir_taps", p.fir_taps);
  get(j, "fir_cutoff_hz", p.fir_cutoff_hz);
  if (j.contains("segmentation")) load_segmentation(j.at("segmentation"), p.segmentation);
  get(j, "align_max_lag_ms", p.align_max_lag_ms);
  get(j, "align_reference", p.align_reference);
  get(j, "segment_channel", p.segment_channel);
}

void load_hht(const json& j, HhtConfig& h) {
  check_keys(j, {"k_imfs", "sd_threshold", "max_sifts_per_imf", "residual_energy_fraction"},
             "hht");
  get(j, "k_imfs", h.k_imfs);
  get(j, "sd_threshold", h.criteria.sd_threshold);
  get(j, "max_sifts_per_imf", h.criteria.max_sifts_per_imf);
  get(j, "residual_energy_fraction", h.criteria.residual_energy_fraction);
  h.criteria.max_imfs = h.k_imfs;
}

void load_features(const json& j, FeatureConfig& f) {
  check_keys(j, {"mode", "shuffle_train_per_epoch"}, "features");
  if (j.contains("mode")) f.mode = features::parse_config_mode(j.at("mode").get<std::string>());
  get(j, "shuffle_train_per_epoch", f.shuffle_train_per_epoch);
}

void load_train(const json& j, TrainSection& t) {
  check_keys(j, {"optimizer", "learning_rate", "batch_size", "epochs", "grad_clip_norm",
                 "early_stop_patience", "momentum", "adam_beta1", "adam_beta2", "adam_eps",
                 "model_specs"},
             "train");
  if (j.contains("optimizer")) {
    const std::string name = j.at("optimizer").get<std::string>();
    if (name == "adam")
      t.config.optimizer = nn::Optimizer::Adam;
    else if (name == "sgd_momentum")
      t.config.optimizer = nn::Optimizer::SgdMomentum;
    else
      throw std::invalid_argument("unknown optimizer: " + name);
  }
  get(j, "learning_rate", t.config.learning_rate);
  get(j, "batch_size", t.config.batch_size);
  get(j, "epochs", t.config.epochs);
  get(j, "grad_clip_norm", t.config.grad_clip_norm);
  get(j, "early_stop_patience", t.config.early_stop_patience);
  get(j, "momentum", t.config.momentum);
  get(j, "adam_beta1", t.config.adam_beta1);
  get(j, "adam_beta2", t.config.adam_beta2);
  get(j, "adam_eps", t.config.adam_eps);
  get(j, "model_specs", t.model_specs);
}

void load_synth(const json& j, SynthConfig& s) {
  check_keys(j, {"n_speakers", "n_instances_per_cell", "sample_rate", "seed", "min_duration_s",
                 "max_duration_s", "pad_s", "snr_db", "out_dir"},
             "synth");
  get(j, "n_speakers", s.n_speakers);
  get(j, "n_instances_per_cell", s.n_instances_per_cell);
  get(j, "sample_rate", s.sample_rate);
  get(j, "seed", s.seed);
  get(j, "min_duration_s", s.min_duration_s);
  get(j, "max_duration_s", s.max_duration_s);
  get(j, "pad_s", s.pad_s);
  get(j, "snr_db", s.snr_db);
  get(j, "out_dir", s.out_dir);
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }

  check_keys(j, {"seed", "deterministic", "threads", "preprocess", "hht", "features", "train",
                 "test_fraction", "tasks", "modes", "synth", "manifest_path", "out_dir"},
             "config");
  PipelineConfig c;
  get(j, "seed", c.seed);
  get(j, "deterministic", c.deterministic);
  get(j, "threads", c.threads);
  if (j.contains("preprocess")) load_preprocess(j.at("preprocess"), c.preprocess);
  if (j.contains("hht")) load_hht(j.at("hht"), c.hht);
  if (j.contains("features")) load_features(j.at("features"), c.features);
  if (j.contains("train")) load_train(j.at("train"), c.train);
  get(j, "test_fraction", c.test_fraction);
  get(j, "tasks", c.tasks);
  get(j, "modes", c.modes);
  if (j.contains("synth")) load_synth(j.at("synth"), c.synth);
  get(j, "manifest_path", c.manifest_path);
  get(j, "out_dir", c.out_dir);

  if (c.test_fraction <= 0.0 || c.test_fraction >= 1.0)
    throw std::invalid_argument("test_fraction must lie in (0, 1)");
  if (c.threads < 1) throw std::invalid_argument("threads must be >= 1");
  for (const std::string& m : c.modes) features::parse_config_mode(m);  // validate tokens
  return c;
}

void save_config(const PipelineConfig& c, const std::string& path) {
  json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  j["preprocess"] = {
      {"fir_taps", c.preprocess.fir_taps},
      {"fir_cutoff_hz", c.preprocess.fir_cutoff_hz},
      {"segmentation",
       {{"frame_ms", c.preprocess.segmentation.frame_ms},
        {"hop_ms", c.preprocess.segmentation.hop_ms},
        {"threshold_factor", c.preprocess.segmentation.threshold_factor},
        {"min_breath_ms", c.preprocess.segmentation.min_breath_ms},
        {"max_breath_ms", c.preprocess.segmentation.max_breath_ms},
        {"merge_gap_ms", c.preprocess.segmentation.merge_gap_ms}}},
      {"align_max_lag_ms", c.preprocess.align_max_lag_ms},
      {"align_reference", c.preprocess.align_reference},
      {"segment_channel", c.preprocess.segment_channel},
  };
  j["hht"] = {
      {"k_imfs", c.hht.k_imfs},
      {"sd_threshold", c.hht.criteria.sd_threshold},
      {"max_sifts_per_imf", c.hht.criteria.max_sifts_per_imf},
      {"residual_energy_fraction", c.hht.criteria.residual_energy_fraction},
  };
  j["features"] = {
      {"mode", features::to_string(c.features.mode)},
      {"shuffle_train_per_epoch", c.features.shuffle_train_per_epoch},
  };
  j["train"] = {
      {"optimizer", c.train.config.optimizer == nn::Optimizer::Adam ? "adam" : "sgd_momentum"},
      {"learning_rate", c.train.config.learning_rate},
      {"batch_size", c.train.config.batch_size},
      {"epochs", c.train.config.epochs},
      {"grad_clip_norm", c.train.config.grad_clip_norm},
      {"early_stop_patience", c.train.config.early_stop_patience},
      {"momentum", c.train.config.momentum},
      {"adam_beta1", c.train.config.adam_beta1},
      {"adam_beta2", c.train.config.adam_beta2},
      {"adam_eps", c.train.config.adam_eps},
      {"model_specs", c.train.model_specs},
  };
  j["test_fraction"] = c.test_fraction;
  j["tasks"] = c.tasks;
  j["modes"] = c.modes;
  j["synth"] = {
      {"n_speakers", c.synth.n_speakers},
      {"n_instances_per_cell", c.synth.n_instances_per_cell},
      {"sample_rate", c.synth.sample_rate},
      {"seed", c.synth.seed},
      {"min_duration_s", c.synth.min_duration_s},
      {"max_duration_s", c.synth.max_duration_s},
      {"pad_s", c.synth.pad_s},
      {"snr_db", c.synth.snr_db},
      {"out_dir", c.synth.out_dir},
  };
  j["manifest_path"] = c.manifest_path;
  j["out_dir"] = c.out_dir;

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open config for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("config write failed: " + path);
}

}  // namespace breathid::pipeline
