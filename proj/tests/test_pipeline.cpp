#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "breathid/audio_io.hpp"
#include "breathid/pipeline.hpp"
#include "breathid/rng.hpp"
#include "test_util.hpp"

using namespace breathid;
using pipeline::PipelineConfig;
using pipeline::PreprocessConfig;
using pipeline::SynthConfig;
using pipeline::TaskSpec;
using testutil::TempDir;

namespace {

features::FeatureSeries tiny_series(const std::string& inst, const std::string& speaker,
                                    const std::string& posture, int d = 2, int n = 6) {
  features::FeatureSeries s;
  s.instance_id = inst;
  s.speaker_id = speaker;
  s.posture_id = posture;
  s.mode = features::ConfigMode::Channel0;
  s.k_imfs = d;
  s.m = MatF(d, n, 0.5f);
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("postures: merge map and vocabulary helpers") {
  CHECK(posture3_label("high_sitting") == "sitting");
  CHECK(posture3_label("low_sitting") == "sitting");
  CHECK(posture3_label("standing") == "standing");
  CHECK(posture3_label("standing_hands_behind_head") == "standing");
  CHECK(posture3_label("lying") == "lying");
  CHECK_THROWS(posture3_label("floating"));

  CHECK(posture_index("high_sitting") == 0);
  CHECK(posture_index("lying") == 4);
  CHECK(posture_index("floating") == -1);
  CHECK(is_known_posture("standing"));
  CHECK_FALSE(is_known_posture("sprinting"));
}

TEST_CASE("task spec: tokens round trip") {
  CHECK(TaskSpec::from_string("speaker").target == TaskSpec::Target::Speaker);
  CHECK(TaskSpec::from_string("posture5").target == TaskSpec::Target::Posture5);
  CHECK(TaskSpec::from_string("posture3").target == TaskSpec::Target::Posture3);
  CHECK(TaskSpec::from_string("posture3").name() == "posture3");
  CHECK_THROWS(TaskSpec::from_string("speakers"));
}

TEST_CASE("build task: classes are ordered and labels merged per task") {
  std::vector<features::FeatureSeries> series = {
      tiny_series("a#000", "s02", "standing"),
      tiny_series("b#000", "s00", "high_sitting"),
      tiny_series("c#000", "s01", "lying"),
      tiny_series("d#000", "s00", "standing_hands_behind_head"),
      tiny_series("e#000", "s02", "low_sitting"),
  };

  auto speaker = pipeline::build_task(series, TaskSpec::from_string("speaker"));
  CHECK(speaker.class_names == std::vector<std::string>{"s00", "s01", "s02"});
  CHECK(speaker.labels == std::vector<int>{2, 0, 1, 0, 2});

  auto p5 = pipeline::build_task(series, TaskSpec::from_string("posture5"));
  CHECK(p5.class_names ==
        std::vector<std::string>{"high_sitting", "low_sitting", "standing",
                                 "standing_hands_behind_head", "lying"});
  CHECK(p5.labels == std::vector<int>{2, 0, 4, 3, 1});

  auto p3 = pipeline::build_task(series, TaskSpec::from_string("posture3"));
  CHECK(p3.class_names == std::vector<std::string>{"sitting", "standing", "lying"});
  CHECK(p3.labels == std::vector<int>{1, 0, 2, 1, 0});
}

TEST_CASE("split: stratified by class, grouped by breath") {
  // 4 series per breath (split-channel shape), 20 breaths per class.
  std::vector<features::FeatureSeries> series;
  for (int g = 0; g < 40; ++g) {
    std::string speaker = g < 20 ? "s00" : "s01";
    for (int c = 0; c < 4; ++c) {
      auto s = tiny_series("inst" + std::to_string(g) + "#000", speaker, "lying");
      s.mode = features::ConfigMode::SplitChannel;
      s.origin_channel = c;
      series.push_back(s);
    }
  }
  auto task = pipeline::build_task(series, TaskSpec::from_string("speaker"));
  auto split = pipeline::stratified_split(series, task, 0.25, 99);

  CHECK(split.test_indices.size() == 40);    // 10 breaths x 4 series
  CHECK(split.train_indices.size() == 120);

  // Disjoint and covering.
  std::set<int> all(split.test_indices.begin(), split.test_indices.end());
  all.insert(split.train_indices.begin(), split.train_indices.end());
  CHECK(all.size() == 160);

  // Entire breaths stay on one side, and classes stay balanced.
  std::set<std::string> test_ids;
  int per_class[2] = {0, 0};
  for (int idx : split.test_indices) test_ids.insert(series[idx].instance_id);
  CHECK(test_ids.size() == 10);
  for (int idx : split.test_indices) ++per_class[task.labels[idx]];
  CHECK(per_class[0] == 20);  // 5 breaths x 4 series per class
  CHECK(per_class[1] == 20);
  for (const auto& id : test_ids)
    for (std::size_t i = 0; i < series.size(); ++i)
      if (series[i].instance_id == id)
        CHECK(std::count(split.test_indices.begin(), split.test_indices.end(),
                         static_cast<int>(i)) == 1);

  // Deterministic under the seed.
  auto again = pipeline::stratified_split(series, task, 0.25, 99);
  CHECK(again.test_indices == split.test_indices);
  auto other = pipeline::stratified_split(series, task, 0.25, 100);
  CHECK(other.test_indices != split.test_indices);
}

TEST_CASE("split: largest-remainder correction hits the overall target") {
  std::vector<features::FeatureSeries> series;
  for (int i = 0; i < 7; ++i)
    series.push_back(tiny_series("a" + std::to_string(i), "s00", "lying"));
  for (int i = 0; i < 3; ++i)
    series.push_back(tiny_series("b" + std::to_string(i), "s01", "lying"));
  auto task = pipeline::build_task(series, TaskSpec::from_string("speaker"));
  auto split = pipeline::stratified_split(series, task, 0.2, 7);
  REQUIRE(split.test_indices.size() == 2);  // round(10 * 0.2)
  int per_class[2] = {0, 0};
  for (int idx : split.test_indices) ++per_class[task.labels[idx]];
  CHECK(per_class[0] == 1);  // 1.4 floors to 1
  CHECK(per_class[1] == 1);  // 0.6 takes the remainder seat
}

TEST_CASE("split: rejects bad fractions and empty sides") {
  std::vector<features::FeatureSeries> series = {tiny_series("a", "s00", "lying"),
                                                 tiny_series("b", "s01", "lying")};
  auto task = pipeline::build_task(series, TaskSpec::from_string("speaker"));
  CHECK_THROWS(pipeline::stratified_split(series, task, 0.0, 1));
  CHECK_THROWS(pipeline::stratified_split(series, task, 1.0, 1));
  // With one breath per class, the cap leaves the test side empty.
  CHECK_THROWS(pipeline::stratified_split(series, task, 0.5, 1));
}

TEST_CASE("evaluate: confusion bookkeeping is consistent") {
  auto spec = nn::NetworkSpec::from_text("C1D(2,3,2) GRU(3) Dense(2)", 2);
  auto m1 = nn::init_model(spec, 1);
  auto m2 = nn::init_model(spec, 2);

  std::vector<features::FeatureSeries> series;
  std::vector<int> labels;
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    auto s = tiny_series("x" + std::to_string(i), i % 2 ? "s01" : "s00", "lying", 2, 12);
    for (auto& v : s.m.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    series.push_back(s);
    labels.push_back(i % 2);
  }
  std::vector<int> indices = {0, 1, 2, 3, 4, 5, 6, 7};

  auto rep = pipeline::evaluate({&m1, &m2}, series, labels, indices, {"s00", "s01"}, true);
  int total = 0, diag = 0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) total += rep.confusion(r, c);
  for (int r = 0; r < 2; ++r) diag += rep.confusion(r, r);
  CHECK(total == 8);
  CHECK(rep.accuracy == doctest::Approx(static_cast<double>(diag) / 8.0));
  for (int c = 0; c < 2; ++c) {
    int row = rep.confusion(c, 0) + rep.confusion(c, 1);
    if (row > 0)
      CHECK(rep.per_class_recall[c] ==
            doctest::Approx(static_cast<double>(rep.confusion(c, c)) / row));
  }

  auto text = pipeline::format_report(rep);
  CHECK(text.find("accuracy") != std::string::npos);
  CHECK(text.find("s01") != std::string::npos);

  // Single-model mode must ignore the second member.
  auto solo = pipeline::evaluate({&m1, &m2}, series, labels, indices, {"s00", "s01"}, false);
  auto solo_only = pipeline::evaluate({&m1}, series, labels, indices, {"s00", "s01"}, false);
  CHECK(solo.accuracy == solo_only.accuracy);
}

TEST_CASE("config: full round trip and strict key checking") {
  TempDir dir("config");
  auto cfg = pipeline::default_config();
  CHECK(cfg.preprocess.fir_taps == 4097);
  CHECK(cfg.hht.k_imfs == 9);
  CHECK(cfg.test_fraction == doctest::Approx(0.2));
  CHECK(cfg.modes.size() == 4);
  CHECK(cfg.train.model_specs.size() == 3);

  cfg.seed = 321;
  cfg.threads = 3;
  cfg.tasks = {"speaker", "posture3"};
  cfg.modes = {"channel0", "all_shuffled"};
  cfg.train.config.epochs = 17;
  cfg.train.config.learning_rate = 2.5e-4;
  cfg.train.config.optimizer = nn::Optimizer::SgdMomentum;
  cfg.synth.n_speakers = 6;
  cfg.synth.sample_rate = 8000.0;
  cfg.preprocess.fir_taps = 513;
  cfg.preprocess.segmentation.min_breath_ms = 120.0;
  cfg.manifest_path = "some/manifest.txt";
  const std::string path = dir.file("c.json");
  pipeline::save_config(cfg, path);
  auto back = pipeline::load_config(path);
  CHECK(back.seed == 321);
  CHECK(back.threads == 3);
  CHECK(back.tasks == cfg.tasks);
  CHECK(back.modes == cfg.modes);
  CHECK(back.train.config.epochs == 17);
  CHECK(back.train.config.learning_rate == doctest::Approx(2.5e-4));
  CHECK(back.train.config.optimizer == nn::Optimizer::SgdMomentum);
  CHECK(back.synth.n_speakers == 6);
  CHECK(back.synth.sample_rate == doctest::Approx(8000.0));
  CHECK(back.preprocess.fir_taps == 513);
  CHECK(back.preprocess.segmentation.min_breath_ms == doctest::Approx(120.0));
  CHECK(back.manifest_path == "some/manifest.txt");
  CHECK(back.train.model_specs == cfg.train.model_specs);

  // Unknown keys anywhere are an error, not a silent skip.
  std::ofstream(dir.file("bad1.json")) << R"({"sede": 5})";
  CHECK_THROWS(pipeline::load_config(dir.file("bad1.json")));
  std::ofstream(dir.file("bad2.json")) << R"({"preprocess": {"fir_tapz": 33}})";
  CHECK_THROWS(pipeline::load_config(dir.file("bad2.json")));
  std::ofstream(dir.file("bad3.json")) << R"({"test_fraction": 1.5})";
  CHECK_THROWS(pipeline::load_config(dir.file("bad3.json")));
  std::ofstream(dir.file("bad4.json")) << R"({"modes": ["chan0"]})";
  CHECK_THROWS(pipeline::load_config(dir.file("bad4.json")));
  std::ofstream(dir.file("bad5.json")) << R"(not json)";
  CHECK_THROWS(pipeline::load_config(dir.file("bad5.json")));

  // Partial configs inherit defaults for everything unstated.
  std::ofstream(dir.file("partial.json")) << R"({"seed": 9, "hht": {"k_imfs": 5}})";
  auto partial = pipeline::load_config(dir.file("partial.json"));
  CHECK(partial.seed == 9);
  CHECK(partial.hht.k_imfs == 5);
  CHECK(partial.preprocess.fir_taps == 4097);
}

TEST_CASE("conditioning: filter, segment, align, normalize one recording") {
  const double fs = 1000.0;
  const int n = 2000;
  MultichannelRecording rec;
  rec.sample_rate = fs;
  rec.channels.assign(4, std::vector<double>(n, 0.0));
  // One 200 Hz burst at 0.8..1.3 s on the close channel; far channels are
  // scaled, delayed copies.
  auto burst = [&](int i) {
    if (i < 800 || i >= 1300) return 0.0;
    return 0.5 * std::sin(2.0 * M_PI * 200.0 * i / fs);
  };
  const int delays[4] = {0, 3, 6, -2};
  const double gains[4] = {1.0, 0.8, 0.7, 0.5};
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < n; ++i) {
      int j = i - delays[c];
      if (j >= 0 && j < n) rec.channels[c][i] = gains[c] * burst(j);
    }

  PreprocessConfig cfg;
  cfg.fir_taps = 101;
  cfg.fir_cutoff_hz = 70.0;

  auto instances = pipeline::condition_recording(rec, "recX", "s00", "standing", cfg);
  REQUIRE(instances.size() == 1);
  const auto& inst = instances[0];
  CHECK(inst.id == "recX#000");
  CHECK(inst.speaker_id == "s00");
  CHECK(inst.posture_id == "standing");
  REQUIRE(inst.num_channels() == 4);
  CHECK(inst.sample_rate_hz == fs);
  CHECK(inst.length() > 400);   // roughly the burst length
  CHECK(inst.length() < 800);

  for (int c = 0; c < 4; ++c) {
    double energy = 0.0;
    for (double v : inst.channels[c]) energy += v * v;
    CHECK(energy == doctest::Approx(1.0).epsilon(1e-9));
  }

  // After alignment every channel is in phase with channel 0.
  const int len = static_cast<int>(inst.length());
  for (int c = 1; c < 4; ++c) {
    double dot = 0.0, e0 = 0.0, ec = 0.0;
    for (int i = 20; i < len - 20; ++i) {
      dot += inst.channels[0][i] * inst.channels[c][i];
      e0 += inst.channels[0][i] * inst.channels[0][i];
      ec += inst.channels[c][i] * inst.channels[c][i];
    }
    CHECK(dot / std::sqrt(e0 * ec) > 0.99);
  }
}

TEST_CASE("conditioning: silent recordings produce no instances") {
  MultichannelRecording rec;
  rec.sample_rate = 1000.0;
  rec.channels.assign(4, std::vector<double>(1500, 0.0));
  PreprocessConfig cfg;
  cfg.fir_taps = 101;
  auto instances = pipeline::condition_recording(rec, "quiet", "s00", "lying", cfg);
  CHECK(instances.empty());
}

TEST_CASE("synthetic data: deterministic, loadable, and fully labeled") {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.n_speakers = 2;
  cfg.n_instances_per_cell = 1;
  cfg.sample_rate = 800.0;
  cfg.seed = 7;
  cfg.min_duration_s = 0.3;
  cfg.max_duration_s = 0.5;
  cfg.out_dir = dir.file("d1");
  auto manifest_path = pipeline::generate_synthetic(cfg);

  auto manifest = audio::load_manifest(manifest_path);
  CHECK(manifest.speaker_vocab.size() == 2);
  CHECK(manifest.posture_vocab.size() == 5);
  REQUIRE(manifest.entries.size() == 10);  // 2 speakers x 5 postures x 1

  std::set<std::string> speakers, postures;
  for (const auto& e : manifest.entries) {
    speakers.insert(e.speaker_id);
    postures.insert(e.posture_id);
    auto rec = audio::load_recording(e.resolved_path);
    CHECK(rec.num_channels() == 4);
    CHECK(rec.sample_rate == doctest::Approx(800.0));
    CHECK(rec.num_frames() > 300);
  }
  CHECK(speakers.size() == 2);
  CHECK(postures.size() == 5);

  // Same seed, fresh directory: identical bytes.
  SynthConfig cfg2 = cfg;
  cfg2.out_dir = dir.file("d2");
  auto manifest2 = pipeline::generate_synthetic(cfg2);
  CHECK(slurp(manifest_path) == slurp(manifest2));
  auto m2 = audio::load_manifest(manifest2);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    REQUIRE(slurp(manifest.entries[i].resolved_path) == slurp(m2.entries[i].resolved_path));

  // A different seed changes the audio.
  SynthConfig cfg3 = cfg;
  cfg3.seed = 8;
  cfg3.out_dir = dir.file("d3");
  auto manifest3 = pipeline::generate_synthetic(cfg3);
  auto m3 = audio::load_manifest(manifest3);
  CHECK(slurp(manifest.entries[0].resolved_path) != slurp(m3.entries[0].resolved_path));

  CHECK_THROWS([&] {
    SynthConfig bad = cfg;
    bad.n_speakers = 0;
    pipeline::generate_synthetic(bad);
  }());
}

TEST_CASE("pipeline: manifest to instances to features") {
  TempDir dir("prep");
  SynthConfig cfg;
  cfg.n_speakers = 2;
  cfg.n_instances_per_cell = 1;
  cfg.sample_rate = 800.0;
  cfg.seed = 3;
  cfg.min_duration_s = 0.3;
  cfg.max_duration_s = 0.5;
  cfg.out_dir = dir.file("data");
  auto manifest = audio::load_manifest(pipeline::generate_synthetic(cfg));

  PreprocessConfig pre;
  pre.fir_taps = 101;
  auto instances = pipeline::prepare_instances(manifest, pre, 1);
  REQUIRE(instances.size() == 10);  // one breath per synthetic file
  std::set<std::string> ids;
  for (const auto& inst : instances) {
    ids.insert(inst.id);
    CHECK(inst.num_channels() == 4);
    CHECK(inst.length() >= 120);
  }
  CHECK(ids.size() == instances.size());

  pipeline::HhtConfig hht_cfg;
  hht_cfg.k_imfs = 4;
  std::vector<BreathInstance> two(instances.begin(), instances.begin() + 2);
  auto feats = pipeline::extract_features(two, hht_cfg, 1);
  REQUIRE(feats.size() == 2);
  for (const auto& f : feats) {
    REQUIRE(f.channel_mags.size() == 4);
    for (const auto& m : f.channel_mags) {
      CHECK(m.rows == 4);
      CHECK(m.cols > 0);
    }
  }
  CHECK(feats[0].instance_id == two[0].id);
}

TEST_CASE("experiment: miniature end-to-end run is reproducible") {
  TempDir dir("exp");
  PipelineConfig cfg;
  cfg.seed = 11;
  cfg.threads = 1;
  cfg.test_fraction = 0.2;
  cfg.tasks = {"speaker"};
  cfg.modes = {"channel0"};
  cfg.preprocess.fir_taps = 101;
  cfg.hht.k_imfs = 4;
  cfg.train.config.epochs = 2;
  cfg.train.config.batch_size = 8;
  cfg.train.model_specs = {"C1D(4,4,2) GRU(8) Dense"};
  cfg.synth.n_speakers = 2;
  cfg.synth.n_instances_per_cell = 1;
  cfg.synth.sample_rate = 800.0;
  cfg.synth.min_duration_s = 0.3;
  cfg.synth.max_duration_s = 0.5;
  cfg.synth.seed = 5;
  cfg.out_dir = dir.file("run1");

  auto res = pipeline::run_experiment(cfg);
  REQUIRE(res.grid.size() == 2);  // model1 + ensemble
  CHECK(res.grid[0].task == "speaker");
  CHECK(res.grid[0].mode == "channel0");
  CHECK(res.grid[0].model == "model1");
  CHECK(res.grid[1].model == "ensemble");
  for (const auto& row : res.grid) {
    CHECK(row.accuracy >= 0.0);
    CHECK(row.accuracy <= 1.0);
  }
  namespace fs = std::filesystem;
  CHECK(fs::exists(dir.path / "run1" / "summary.csv"));
  CHECK(fs::exists(dir.path / "run1" / "summary.txt"));
  CHECK(fs::exists(dir.path / "run1" / "report_speaker_channel0.txt"));
  CHECK(fs::exists(dir.path / "run1" / "losses_speaker_channel0_model1.csv"));
  CHECK(fs::exists(dir.path / "run1" / "ckpt_speaker_channel0_model1.bhm"));

  // Identical configuration, fresh output directory: identical numbers.
  PipelineConfig cfg2 = cfg;
  cfg2.out_dir = dir.file("run2");
  auto res2 = pipeline::run_experiment(cfg2);
  REQUIRE(res2.grid.size() == res.grid.size());
  for (std::size_t i = 0; i < res.grid.size(); ++i) {
    CHECK(res2.grid[i].task == res.grid[i].task);
    CHECK(res2.grid[i].model == res.grid[i].model);
    REQUIRE(res2.grid[i].accuracy == res.grid[i].accuracy);  // bitwise
  }
  auto grid_text = pipeline::format_summary_grid(res.grid, cfg.tasks, cfg.modes, 1);
  auto grid_text2 = pipeline::format_summary_grid(res2.grid, cfg.tasks, cfg.modes, 1);
  CHECK(grid_text == grid_text2);
  CHECK(slurp((dir.path / "run1" / "summary.csv").string()) ==
        slurp((dir.path / "run2" / "summary.csv").string()));
}
