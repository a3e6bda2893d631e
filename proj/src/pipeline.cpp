#include "breathid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "breathid/audio_io.hpp"
#include "breathid/hht.hpp"
#include "breathid/preprocess.hpp"
#include "breathid/rng.hpp"

namespace fs = std::filesystem;

namespace breathid::pipeline {

TaskSpec TaskSpec::from_string(const std::string& token) {
  TaskSpec t;
  if (token == "speaker")
    t.target = Target::Speaker;
  else if (token == "posture5")
    t.target = Target::Posture5;
  else if (token == "posture3")
    t.target = Target::Posture3;
  else
    throw std::invalid_argument("unknown task: " + token);
  return t;
}

std::string TaskSpec::name() const {
  switch (target) {
    case Target::Speaker: return "speaker";
    case Target::Posture5: return "posture5";
    case Target::Posture3: return "posture3";
  }
  throw std::logic_error("bad task");
}

TaskDataset build_task(const std::vector<features::FeatureSeries>& series, const TaskSpec& task) {
  auto label_of = [&task](const features::FeatureSeries& s) -> std::string {
    switch (task.target) {
      case TaskSpec::Target::Speaker: return s.speaker_id;
      case TaskSpec::Target::Posture5: return s.posture_id;
      case TaskSpec::Target::Posture3: return posture3_label(s.posture_id);
    }
    throw std::logic_error("bad task");
  };

  std::set<std::string> seen;
  for (const auto& s : series) seen.insert(label_of(s));

  TaskDataset out;
  if (task.target == TaskSpec::Target::Speaker) {
    out.class_names.assign(seen.begin(), seen.end());  // lexicographic
  } else {
    // canonical posture order, restricted to what is present
    const auto& canon = task.target == TaskSpec::Target::Posture5
                            ? std::vector<std::string>(kPostureTokens.begin(), kPostureTokens.end())
                            : std::vector<std::string>(kPosture3Tokens.begin(),
                                                       kPosture3Tokens.end());
    for (const auto& name : canon)
      if (seen.count(name)) out.class_names.push_back(name);
  }

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < out.class_names.size(); ++i) index[out.class_names[i]] = i;
  out.labels.reserve(series.size());
  for (const auto& s : series) out.labels.push_back(index.at(label_of(s)));
  return out;
}

SplitResult stratified_split(const std::vector<features::FeatureSeries>& series,
                             const TaskDataset& task, double test_fraction, std::uint64_t seed) {
  if (series.empty()) throw std::invalid_argument("split: no series");
  if (series.size() != task.labels.size())
    throw std::invalid_argument("split: label count mismatch");
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw std::invalid_argument("split: test_fraction must lie in (0, 1)");

  // Group series by breath so multi-series modes keep one breath on one side.
  std::map<std::string, std::vector<int>> groups;
  std::map<std::string, int> group_label;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& id = series[i].instance_id;
    groups[id].push_back(static_cast<int>(i));
    auto [it, fresh] = group_label.emplace(id, task.labels[i]);
    if (!fresh && it->second != task.labels[i])
      throw std::invalid_argument("split: inconsistent labels within breath " + id);
  }

  const int n_classes = static_cast<int>(task.class_names.size());
  std::vector<std::vector<std::string>> per_class(n_classes);
  for (const auto& [id, label] : group_label) per_class[label].push_back(id);  // sorted by id

  const int total_groups = static_cast<int>(group_label.size());
  const int target_total = static_cast<int>(std::lround(total_groups * test_fraction));

  std::vector<int> take(n_classes);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double exact = per_class[c].size() * test_fraction;
    take[c] = static_cast<int>(std::floor(exact));
    assigned += take[c];
    remainders.push_back({exact - take[c], c});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int i = 0; assigned < target_total && i < n_classes; ++i, ++assigned)
    ++take[remainders[i].second];
  for (int c = 0; c < n_classes; ++c) {
    // never let test swallow a whole class
    const int cap = std::max(0, static_cast<int>(per_class[c].size()) - 1);
    if (take[c] > cap) take[c] = cap;
  }

  Rng root(seed);
  std::set<std::string> test_ids;
  for (int c = 0; c < n_classes; ++c) {
    Rng rng = root.stream(fnv1a64(task.class_names[c]));
    rng.shuffle(per_class[c].begin(), per_class[c].end());
    for (int i = 0; i < take[c]; ++i) test_ids.insert(per_class[c][i]);
  }

  SplitResult out;
  for (const auto& [id, indices] : groups) {
    auto& dst = test_ids.count(id) ? out.test_indices : out.train_indices;
    dst.insert(dst.end(), indices.begin(), indices.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  if (out.train_indices.empty() || out.test_indices.empty())
    throw std::invalid_argument("split: one side is empty; adjust test_fraction or data");
  return out;
}

EvalReport evaluate(const std::vector<const nn::ModelState*>& models,
                    const std::vector<features::FeatureSeries>& series,
                    const std::vector<int>& labels, const std::vector<int>& indices,
                    const std::vector<std::string>& class_names, bool ensemble) {
  if (models.empty()) throw std::invalid_argument("evaluate: no models");
  if (indices.empty()) throw std::invalid_argument("evaluate: no samples");
  const int n_classes = static_cast<int>(class_names.size());

  EvalReport report;
  report.class_names = class_names;
  report.confusion = Mat<int>(n_classes, n_classes);
  std::fill(report.confusion.data.begin(), report.confusion.data.end(), 0);

  int correct = 0;
  for (int idx : indices) {
    const auto probs = ensemble ? nn::ensemble_predict(models, series[idx])
                                : nn::predict(*models.front(), series[idx]);
    Eigen::Index arg = 0;
    probs.maxCoeff(&arg);
    const int truth = labels[idx];
    report.confusion(truth, static_cast<int>(arg)) += 1;
    if (static_cast<int>(arg) == truth) ++correct;
  }
  report.accuracy = static_cast<double>(correct) / indices.size();
  report.per_class_recall.resize(n_classes, 0.0);
  for (int c = 0; c < n_classes; ++c) {
    int row = 0;
    for (int p = 0; p < n_classes; ++p) row += report.confusion(c, p);
    if (row > 0) report.per_class_recall[c] = static_cast<double>(report.confusion(c, c)) / row;
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "mode=" << report.mode << " model=" << report.model_id << " accuracy=" << std::fixed
     << std::setprecision(4) << report.accuracy << "\n";
  std::size_t width = 8;
  for (const auto& name : report.class_names) width = std::max(width, name.size() + 1);
  os << std::setw(static_cast<int>(width)) << "true\\pred";
  for (const auto& name : report.class_names)
    os << std::setw(static_cast<int>(width)) << name;
  os << std::setw(8) << "recall" << "\n";
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    os << std::setw(static_cast<int>(width)) << report.class_names[c];
    for (std::size_t p = 0; p < report.class_names.size(); ++p)
      os << std::setw(static_cast<int>(width))
         << report.confusion(static_cast<int>(c), static_cast<int>(p));
    os << std::setw(8) << std::fixed << std::setprecision(3) << report.per_class_recall[c] << "\n";
  }
  return os.str();
}

namespace {

void parallel_chunks(int n, int threads, const std::function<void(int, int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + threads - 1) / threads;
  for (int k = 0; k < threads; ++k) {
    const int lo = k * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, lo, hi);
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<BreathInstance> condition_recording(const MultichannelRecording& rec,
                                                const std::string& recording_id,
                                                const std::string& speaker_id,
                                                const std::string& posture_id,
                                                const PreprocessConfig& config) {
  rec.validate();
  const int n_ch = static_cast<int>(rec.num_channels());
  if (config.segment_channel < 0 || config.segment_channel >= n_ch)
    throw std::invalid_argument("segment channel out of range for " + recording_id);
  if (config.align_reference < 0 || config.align_reference >= n_ch)
    throw std::invalid_argument("align reference out of range for " + recording_id);

  const auto fir =
      preprocess::design_highpass_fir(config.fir_taps, config.fir_cutoff_hz, rec.sample_rate);
  std::vector<std::vector<double>> filtered(n_ch);
  for (int c = 0; c < n_ch; ++c) filtered[c] = preprocess::apply_fir(fir, rec.channels[c]);

  const auto segments = preprocess::segment_breaths(filtered[config.segment_channel],
                                                    rec.sample_rate, config.segmentation);

  const int max_lag =
      static_cast<int>(std::lround(config.align_max_lag_ms * rec.sample_rate / 1000.0));
  const auto aligned = preprocess::align_channels(filtered, config.align_reference, max_lag);

  std::vector<BreathInstance> out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    BreathInstance inst;
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "#%03zu", s);
    inst.id = recording_id + suffix;
    inst.speaker_id = speaker_id;
    inst.posture_id = posture_id;
    inst.sample_rate_hz = rec.sample_rate;
    inst.channels.reserve(n_ch);
    for (int c = 0; c < n_ch; ++c) {
      std::vector<double> cut(aligned.channels[c].begin() + segments[s].start,
                              aligned.channels[c].begin() + segments[s].end);
      inst.channels.push_back(preprocess::normalize_energy(cut));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<BreathInstance> prepare_instances(const DatasetManifest& manifest,
                                              const PreprocessConfig& config, int threads) {
  const int n = static_cast<int>(manifest.entries.size());
  std::vector<std::vector<BreathInstance>> per_entry(n);
  std::vector<std::string> errors(n);
  parallel_chunks(n, threads, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const auto& e = manifest.entries[i];
      try {
        const auto rec = audio::load_recording(e.resolved_path);
        per_entry[i] =
            condition_recording(rec, e.recording_path, e.speaker_id, e.posture_id, config);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  });
  for (int i = 0; i < n; ++i)
    if (!errors[i].empty())
      throw std::runtime_error("failed to condition " + manifest.entries[i].recording_path + ": " +
                               errors[i]);
  std::vector<BreathInstance> out;
  for (auto& v : per_entry)
    for (auto& inst : v) out.push_back(std::move(inst));
  return out;
}

std::vector<features::InstanceFeatures> extract_features(
    const std::vector<BreathInstance>& instances, const HhtConfig& config, int threads) {
  const int n = static_cast<int>(instances.size());
  std::vector<features::InstanceFeatures> out(n);
  std::vector<std::string> errors(n);
  parallel_chunks(n, threads, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      try {
        out[i].instance_id = instances[i].id;
        out[i].speaker_id = instances[i].speaker_id;
        out[i].posture_id = instances[i].posture_id;
        out[i].channel_mags = hht::hht_magnitudes(instances[i], config.k_imfs, config.criteria);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  });
  for (int i = 0; i < n; ++i)
    if (!errors[i].empty())
      throw std::runtime_error("feature extraction failed for " + instances[i].id + ": " +
                               errors[i]);
  return out;
}

namespace {

std::vector<features::FeatureSeries> subset(const std::vector<features::FeatureSeries>& all,
                                            const std::vector<int>& indices) {
  std::vector<features::FeatureSeries> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(all[i]);
  return out;
}

template <typename T>
std::vector<T> subset_values(const std::vector<T>& all, const std::vector<int>& indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(all[i]);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

}  // namespace

ExperimentResult run_experiment(const PipelineConfig& config) {
  fs::create_directories(config.out_dir);

  std::string manifest_path = config.manifest_path;
  if (manifest_path.empty()) {
    SynthConfig sc = config.synth;
    if (sc.out_dir.empty()) sc.out_dir = (fs::path(config.out_dir) / "synth").string();
    manifest_path = generate_synthetic(sc);
  }
  const auto manifest = audio::load_manifest(manifest_path);
  const auto instances = prepare_instances(manifest, config.preprocess, config.threads);
  if (instances.empty()) throw std::runtime_error("no breath instances found in the dataset");
  const auto feats = extract_features(instances, config.hht, config.threads);

  ExperimentResult result;
  std::ofstream grid_csv(fs::path(config.out_dir) / "summary.csv", std::ios::trunc);
  grid_csv << "task,mode,model,accuracy\n";

  for (const std::string& mode_token : config.modes) {
    const auto mode = features::parse_config_mode(mode_token);
    const auto series = features::assemble(feats, mode, config.seed);
    const int dim = series.front().dim();

    for (const std::string& task_token : config.tasks) {
      const TaskSpec task = TaskSpec::from_string(task_token);
      const TaskDataset tds = build_task(series, task);
      if (tds.class_names.size() < 2)
        throw std::runtime_error("task " + task_token + " has fewer than 2 classes");
      const SplitResult split =
          stratified_split(series, tds, config.test_fraction, config.seed);

      auto train_data = subset(series, split.train_indices);
      const auto train_labels = subset_values(tds.labels, split.train_indices);

      std::vector<nn::ModelState> models;
      std::ostringstream report_text;
      for (std::size_t m = 0; m < config.train.model_specs.size(); ++m) {
        nn::NetworkSpec spec = nn::NetworkSpec::from_text(config.train.model_specs[m], dim);
        spec.classes = static_cast<int>(tds.class_names.size());
        spec.validate();

        const std::string tag = task_token + "_" + mode_token + "_model" + std::to_string(m + 1);
        const std::uint64_t model_seed = splitmix64(config.seed ^ fnv1a64(tag));

        nn::TrainConfig tc = config.train.config;
        tc.seed = model_seed;
        tc.threads = config.threads;
        tc.reshuffle_per_epoch =
            mode == features::ConfigMode::AllShuffled && config.features.shuffle_train_per_epoch;
        tc.reshuffle_seed = splitmix64(model_seed ^ 0x524553485546ull);

        nn::ModelState model = nn::init_model(spec, model_seed);
        const auto history = nn::train(model, train_data, train_labels, tc);

        std::ostringstream losses;
        losses << "epoch,split,loss,accuracy\n";
        for (const auto& h : history)
          losses << h.epoch << ",train," << h.loss << "," << h.accuracy << "\n";
        write_text((fs::path(config.out_dir) / ("losses_" + tag + ".csv")).string(), losses.str());
        nn::save_model(model, (fs::path(config.out_dir) / ("ckpt_" + tag + ".bhm")).string());

        EvalReport rep = evaluate({&model}, series, tds.labels, split.test_indices,
                                  tds.class_names, false);
        rep.mode = mode_token;
        rep.model_id = "model" + std::to_string(m + 1);
        result.grid.push_back({task_token, mode_token, rep.model_id, rep.accuracy});
        grid_csv << task_token << "," << mode_token << "," << rep.model_id << "," << std::fixed
                 << std::setprecision(6) << rep.accuracy << "\n";
        grid_csv.flush();
        report_text << format_report(rep) << "\n";
        result.reports.push_back(std::move(rep));
        models.push_back(std::move(model));
      }

      std::vector<const nn::ModelState*> member_ptrs;
      for (const auto& m : models) member_ptrs.push_back(&m);
      EvalReport ens = evaluate(member_ptrs, series, tds.labels, split.test_indices,
                                tds.class_names, true);
      ens.mode = mode_token;
      ens.model_id = "ensemble";
      result.grid.push_back({task_token, mode_token, "ensemble", ens.accuracy});
      grid_csv << task_token << "," << mode_token << ",ensemble," << std::fixed
               << std::setprecision(6) << ens.accuracy << "\n";
      grid_csv.flush();
      report_text << format_report(ens) << "\n";
      result.reports.push_back(std::move(ens));

      write_text(
          (fs::path(config.out_dir) / ("report_" + task_token + "_" + mode_token + ".txt"))
              .string(),
          report_text.str());
    }
  }

  write_text((fs::path(config.out_dir) / "summary.txt").string(),
             format_summary_grid(result.grid, config.tasks, config.modes,
                                 static_cast<int>(config.train.model_specs.size())));
  return result;
}

std::string format_summary_grid(const std::vector<GridRow>& grid,
                                const std::vector<std::string>& tasks,
                                const std::vector<std::string>& modes, int n_models) {
  auto find = [&grid](const std::string& t, const std::string& m,
                      const std::string& model) -> const GridRow* {
    for (const auto& r : grid)
      if (r.task == t && r.mode == m && r.model == model) return &r;
    return nullptr;
  };

  std::vector<std::string> model_cols;
  for (int i = 1; i <= n_models; ++i) model_cols.push_back("model" + std::to_string(i));
  model_cols.push_back("ensemble");

  std::ostringstream os;
  os << std::left << std::setw(10) << "task" << std::setw(14) << "mode";
  for (const auto& c : model_cols) os << std::right << std::setw(10) << c;
  os << "\n";
  for (const auto& t : tasks) {
    for (const auto& m : modes) {
      os << std::left << std::setw(10) << t << std::setw(14) << m;
      for (const auto& c : model_cols) {
        const GridRow* r = find(t, m, c);
        if (r)
          os << std::right << std::setw(10) << std::fixed << std::setprecision(4) << r->accuracy;
        else
          os << std::right << std::setw(10) << "-";
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace breathid::pipeline
