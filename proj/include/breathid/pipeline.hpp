#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "breathid/config.hpp"
#include "breathid/features.hpp"
#include "breathid/matrix.hpp"
#include "breathid/neuralnet.hpp"
#include "breathid/types.hpp"

namespace breathid::pipeline {

struct TaskSpec {
  enum class Target { Speaker, Posture5, Posture3 };
  Target target = Target::Speaker;

  static TaskSpec from_string(const std::string& token);  // speaker|posture5|posture3
  std::string name() const;
};

// Class labels for every series under a task, plus the index table.
struct TaskDataset {
  std::vector<int> labels;               // parallel to the series vector
  std::vector<std::string> class_names;  // class index -> name
};

TaskDataset build_task(const std::vector<features::FeatureSeries>& series, const TaskSpec& task);

struct SplitResult {
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// Stratified split on the task label, grouping by instance id so that all
// series of one breath land on the same side. Per-class test counts are
// round(count * fraction), adjusted by +-1 to hit round(total * fraction).
SplitResult stratified_split(const std::vector<features::FeatureSeries>& series,
                             const TaskDataset& task, double test_fraction, std::uint64_t seed);

struct EvalReport {
  double accuracy = 0.0;
  Mat<int> confusion;                 // true x predicted counts
  std::vector<double> per_class_recall;
  std::vector<std::string> class_names;
  std::string mode;
  std::string model_id;
};

// Argmax predictions (ties toward the lowest class index).
EvalReport evaluate(const std::vector<const nn::ModelState*>& models,
                    const std::vector<features::FeatureSeries>& series,
                    const std::vector<int>& labels, const std::vector<int>& indices,
                    const std::vector<std::string>& class_names, bool ensemble);

std::string format_report(const EvalReport& report);

// Writes wav/ recordings plus manifest.txt under config.out_dir; returns the
// manifest path. Fully deterministic under the seed.
std::string generate_synthetic(const SynthConfig& config);

// Conditioning of one recording: filter, segment, align, normalize.
std::vector<BreathInstance> condition_recording(const MultichannelRecording& rec,
                                                const std::string& recording_id,
                                                const std::string& speaker_id,
                                                const std::string& posture_id,
                                                const PreprocessConfig& config);

// Manifest -> conditioned breath instances.
std::vector<BreathInstance> prepare_instances(const DatasetManifest& manifest,
                                              const PreprocessConfig& config, int threads = 1);

// Instances -> per-channel magnitude matrices.
std::vector<features::InstanceFeatures> extract_features(const std::vector<BreathInstance>& instances,
                                                         const HhtConfig& config, int threads = 1);

struct GridRow {
  std::string task;
  std::string mode;
  std::string model;  // model1|model2|model3|ensemble
  double accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<GridRow> grid;
  std::vector<EvalReport> reports;
};

// Full protocol: data -> condition -> HHT -> assemble per mode -> stratified
// split -> train the three models -> evaluate individually and ensembled.
// Reports are flushed to config.out_dir as they are produced.
ExperimentResult run_experiment(const PipelineConfig& config);

std::string format_summary_grid(const std::vector<GridRow>& grid,
                                const std::vector<std::string>& tasks,
                                const std::vector<std::string>& modes, int n_models);

}  // namespace breathid::pipeline
