#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "breathid/audio_io.hpp"
#include "breathid/config.hpp"
#include "breathid/hht.hpp"
#include "breathid/pipeline.hpp"
#include "breathid/preprocess.hpp"
#include "breathid/stationarity.hpp"

namespace fs = std::filesystem;
using namespace breathid;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = true;
};

pipeline::PipelineConfig resolve_config(const GlobalArgs& g) {
  pipeline::PipelineConfig c =
      g.config_path.empty() ? pipeline::default_config() : pipeline::load_config(g.config_path);
  if (g.seed_set) {
    c.seed = g.seed;
    c.synth.seed = g.seed;
  }
  c.deterministic = g.deterministic;
  return c;
}

void emit(const std::string& text, const std::string& output_path) {
  if (output_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(output_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + output_path);
  f << text;
}

int run_segment(const GlobalArgs& g, const std::string& input, int channel,
                const std::string& output) {
  const auto config = resolve_config(g);
  const auto rec = audio::load_recording(input);
  if (channel < 0 || channel >= static_cast<int>(rec.num_channels()))
    throw std::invalid_argument("channel out of range");
  const auto fir = preprocess::design_highpass_fir(config.preprocess.fir_taps,
                                                   config.preprocess.fir_cutoff_hz,
                                                   rec.sample_rate);
  const auto filtered = preprocess::apply_fir(fir, rec.channels[channel]);
  const auto segments =
      preprocess::segment_breaths(filtered, rec.sample_rate, config.preprocess.segmentation);
  std::ostringstream os;
  os << "recording_path,start_sample,end_sample\n";
  for (const auto& s : segments) os << input << "," << s.start << "," << s.end << "\n";
  emit(os.str(), output);
  std::cerr << segments.size() << " breath segment(s)\n";
  return 0;
}

int run_extract(const GlobalArgs& g, const std::string& manifest_path, const std::string& mode_token,
                const std::string& output) {
  const auto config = resolve_config(g);
  const auto mode = mode_token.empty() ? config.features.mode
                                       : features::parse_config_mode(mode_token);
  const auto manifest = audio::load_manifest(manifest_path);
  const auto instances = pipeline::prepare_instances(manifest, config.preprocess, config.threads);
  if (instances.empty()) throw std::runtime_error("no breath instances found");
  const auto feats = pipeline::extract_features(instances, config.hht, config.threads);
  const auto series = features::assemble(feats, mode, config.seed);
  const std::size_t bytes = audio::write_feature_cache(series, output);
  std::cerr << series.size() << " series (" << bytes << " bytes) -> " << output << "\n";
  return 0;
}

int run_adf(const GlobalArgs& g, const std::string& manifest_path, int channel, int lag,
            const std::string& output) {
  const auto config = resolve_config(g);
  const auto manifest = audio::load_manifest(manifest_path);
  const auto instances = pipeline::prepare_instances(manifest, config.preprocess, config.threads);
  const auto report = stationarity::stationarity_report(instances, channel, lag);
  std::ostringstream os;
  os << "instance_id,statistic,lag,n_effective,reject_1pct\n";
  for (const auto& row : report.rows) {
    if (row.skipped) {
      os << row.instance_id << ",skipped,,,\n";
    } else {
      os << row.instance_id << "," << row.result.test_statistic << "," << row.result.lag_order
         << "," << row.result.n_effective << "," << (row.result.reject_at_p01 ? 1 : 0) << "\n";
    }
  }
  emit(os.str(), output);
  std::cerr << "tested=" << report.total << " rejected_1pct=" << report.rejected_at_p01
            << " skipped=" << report.skipped << "\n";
  return 0;
}

int run_synth(const GlobalArgs& g, const std::string& out_dir, int speakers, int instances,
              double rate) {
  auto config = resolve_config(g);
  pipeline::SynthConfig sc = config.synth;
  if (!out_dir.empty()) sc.out_dir = out_dir;
  if (sc.out_dir.empty()) sc.out_dir = (fs::path(config.out_dir) / "synth").string();
  if (speakers > 0) sc.n_speakers = speakers;
  if (instances > 0) sc.n_instances_per_cell = instances;
  if (rate > 0) sc.sample_rate = rate;
  const std::string manifest = pipeline::generate_synthetic(sc);
  std::cout << manifest << "\n";
  return 0;
}

int run_train(const GlobalArgs& g, const std::string& features_path, const std::string& task_token,
              const std::string& spec_text, const std::string& output, int epochs, double lr,
              double test_fraction) {
  auto config = resolve_config(g);
  auto series = audio::read_feature_cache(features_path);
  if (series.empty()) throw std::runtime_error("feature cache is empty");
  const auto task = pipeline::TaskSpec::from_string(task_token);
  const auto tds = pipeline::build_task(series, task);
  if (tds.class_names.size() < 2) throw std::runtime_error("need at least 2 classes");

  const std::string text = spec_text.empty() ? config.train.model_specs.at(0) : spec_text;
  nn::NetworkSpec spec = nn::NetworkSpec::from_text(text, series.front().dim());
  spec.classes = static_cast<int>(tds.class_names.size());
  spec.validate();

  nn::TrainConfig tc = config.train.config;
  tc.seed = config.seed;
  tc.threads = config.threads;
  if (epochs > 0) tc.epochs = epochs;
  if (lr > 0) tc.learning_rate = lr;
  tc.reshuffle_per_epoch = series.front().mode == features::ConfigMode::AllShuffled &&
                           config.features.shuffle_train_per_epoch;
  tc.reshuffle_seed = splitmix64(config.seed);

  std::vector<features::FeatureSeries>* train_data = &series;
  std::vector<int> train_labels = tds.labels;
  std::vector<features::FeatureSeries> held;
  std::vector<int> test_indices;
  if (test_fraction > 0.0) {
    const auto split = pipeline::stratified_split(series, tds, test_fraction, config.seed);
    held.reserve(split.train_indices.size());
    train_labels.clear();
    for (int i : split.train_indices) {
      held.push_back(series[i]);
      train_labels.push_back(tds.labels[i]);
    }
    train_data = &held;
    test_indices = split.test_indices;
  }

  nn::ModelState model = nn::init_model(spec, config.seed);
  const auto history = nn::train(model, *train_data, train_labels, tc);
  std::cout << "epoch,split,loss,accuracy\n";
  for (const auto& h : history)
    std::cout << h.epoch << ",train," << h.loss << "," << h.accuracy << "\n";

  if (!test_indices.empty()) {
    auto rep = pipeline::evaluate({&model}, series, tds.labels, test_indices, tds.class_names,
                                  false);
    rep.mode = features::to_string(series.front().mode);
    rep.model_id = "model";
    std::cout << history.size() - 1 << ",test,," << rep.accuracy << "\n";
  }
  nn::save_model(model, output);
  std::cerr << "checkpoint -> " << output << "\n";
  return 0;
}

int run_eval(const GlobalArgs& g, const std::string& features_path,
             const std::vector<std::string>& model_paths, const std::string& task_token,
             const std::string& subset, double test_fraction) {
  const auto config = resolve_config(g);
  const auto series = audio::read_feature_cache(features_path);
  if (series.empty()) throw std::runtime_error("feature cache is empty");
  const auto task = pipeline::TaskSpec::from_string(task_token);
  const auto tds = pipeline::build_task(series, task);

  std::vector<nn::ModelState> models;
  for (const auto& p : model_paths) models.push_back(nn::load_model(p));
  std::vector<const nn::ModelState*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);

  std::vector<int> indices;
  if (subset == "test") {
    const double frac = test_fraction > 0.0 ? test_fraction : config.test_fraction;
    indices = pipeline::stratified_split(series, tds, frac, config.seed).test_indices;
  } else {
    for (std::size_t i = 0; i < series.size(); ++i) indices.push_back(static_cast<int>(i));
  }

  auto rep = pipeline::evaluate(ptrs, series, tds.labels, indices, tds.class_names,
                                models.size() > 1);
  rep.mode = features::to_string(series.front().mode);
  rep.model_id = models.size() > 1 ? "ensemble" : "model";
  std::cout << pipeline::format_report(rep);
  return 0;
}

int run_experiment_cmd(const GlobalArgs& g, const std::string& out_dir) {
  auto config = resolve_config(g);
  if (!out_dir.empty()) config.out_dir = out_dir;
  const auto result = pipeline::run_experiment(config);
  std::cout << pipeline::format_summary_grid(
      result.grid, config.tasks, config.modes,
      static_cast<int>(config.train.model_specs.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"breathid: breath-sound speaker and posture classification"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", g.seed, "override the configured seed");
  app.add_flag("--deterministic,!--no-deterministic", g.deterministic,
               "deterministic mode (default on)");

  auto* seg = app.add_subcommand("segment", "detect breath segments in a recording");
  std::string seg_input, seg_output;
  int seg_channel = 0;
  seg->add_option("--input", seg_input, "input WAV file")->required()->check(CLI::ExistingFile);
  seg->add_option("--channel", seg_channel, "channel to threshold (default 0)");
  seg->add_option("--output", seg_output, "CSV output path (default stdout)");

  auto* ext = app.add_subcommand("extract", "manifest -> instantaneous-magnitude feature cache");
  std::string ext_manifest, ext_mode, ext_output = "features.bhf";
  ext->add_option("--manifest", ext_manifest, "dataset manifest")->required()
      ->check(CLI::ExistingFile);
  ext->add_option("--mode", ext_mode, "channel0|split|all_ordered|all_shuffled");
  ext->add_option("--output", ext_output, "feature cache path");

  auto* adf = app.add_subcommand("adf", "stationarity testing over conditioned breaths");
  std::string adf_manifest, adf_output;
  int adf_channel = 0, adf_lag = stationarity::kAutoLag;
  adf->add_option("--manifest", adf_manifest, "dataset manifest")->required()
      ->check(CLI::ExistingFile);
  adf->add_option("--channel", adf_channel, "channel to test (default 0)");
  adf->add_option("--lag", adf_lag, "lag order (default: automatic)");
  adf->add_option("--output", adf_output, "CSV output path (default stdout)");

  auto* syn = app.add_subcommand("synth", "generate a synthetic multichannel dataset");
  std::string syn_out;
  int syn_speakers = 0, syn_instances = 0;
  double syn_rate = 0.0;
  syn->add_option("--out", syn_out, "output directory");
  syn->add_option("--speakers", syn_speakers, "number of speakers");
  syn->add_option("--instances", syn_instances, "instances per (speaker, posture) cell");
  syn->add_option("--rate", syn_rate, "sample rate in Hz");

  auto* trn = app.add_subcommand("train", "train one classifier on a feature cache");
  std::string trn_features, trn_task = "speaker", trn_spec, trn_output = "model.bhm";
  int trn_epochs = 0;
  double trn_lr = 0.0, trn_frac = 0.0;
  trn->add_option("--features", trn_features, "feature cache")->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--task", trn_task, "speaker|posture5|posture3");
  trn->add_option("--spec", trn_spec, "network text, e.g. \"C1D(32,8,4,0.1) GRU(64,0.2) Dense\"");
  trn->add_option("--output", trn_output, "checkpoint path");
  trn->add_option("--epochs", trn_epochs, "override epoch count");
  trn->add_option("--lr", trn_lr, "override learning rate");
  trn->add_option("--test-fraction", trn_frac, "hold out a stratified test split and report it");

  auto* evl = app.add_subcommand("eval", "evaluate checkpoints on a feature cache");
  std::string evl_features, evl_task = "speaker", evl_subset = "all";
  std::vector<std::string> evl_models;
  double evl_frac = 0.0;
  evl->add_option("--features", evl_features, "feature cache")->required()
      ->check(CLI::ExistingFile);
  evl->add_option("--model", evl_models, "checkpoint path (repeat for an ensemble)")->required();
  evl->add_option("--task", evl_task, "speaker|posture5|posture3");
  evl->add_option("--split", evl_subset, "all|test (test reproduces the stratified split)");
  evl->add_option("--test-fraction", evl_frac, "fraction for --split test");

  auto* exp = app.add_subcommand("experiment", "full protocol over tasks x modes x models");
  std::string exp_out;
  exp->add_option("--out", exp_out, "output directory (overrides config)");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*seg) return run_segment(g, seg_input, seg_channel, seg_output);
    if (*ext) return run_extract(g, ext_manifest, ext_mode, ext_output);
    if (*adf) return run_adf(g, adf_manifest, adf_channel, adf_lag, adf_output);
    if (*syn) return run_synth(g, syn_out, syn_speakers, syn_instances, syn_rate);
    if (*trn)
      return run_train(g, trn_features, trn_task, trn_spec, trn_output, trn_epochs, trn_lr,
                       trn_frac);
    if (*evl) return run_eval(g, evl_features, evl_models, evl_task, evl_subset, evl_frac);
    if (*exp) return run_experiment_cmd(g, exp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
