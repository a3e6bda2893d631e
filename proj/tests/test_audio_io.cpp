#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "breathid/audio_io.hpp"
#include "breathid/rng.hpp"
#include "test_util.hpp"

using namespace breathid;
using audio::SampleFormat;
using testutil::TempDir;

namespace {

MultichannelRecording make_recording(int channels, int frames, double rate, std::uint64_t seed) {
  MultichannelRecording rec;
  rec.sample_rate = rate;
  Rng rng(seed);
  rec.channels.resize(channels);
  for (auto& ch : rec.channels) {
    ch.resize(frames);
    for (auto& v : ch) v = rng.uniform(-0.95, 0.95);
  }
  return rec;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("wav: float32 round trip preserves float-representable samples") {
  TempDir dir("wav_f32");
  auto rec = make_recording(3, 777, 48000.0, 1);
  // Snap samples to float so the round trip is exact.
  for (auto& ch : rec.channels)
    for (auto& v : ch) v = static_cast<double>(static_cast<float>(v));
  const std::string path = dir.file("x.wav");
  audio::save_recording(rec, path, SampleFormat::Float32);
  auto back = audio::load_recording(path);
  REQUIRE(back.num_channels() == 3);
  REQUIRE(back.num_frames() == 777);
  CHECK(back.sample_rate == doctest::Approx(48000.0));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 777; ++i)
      REQUIRE(back.channels[c][i] == rec.channels[c][i]);
}

TEST_CASE("wav: integer formats round trip within quantization error") {
  TempDir dir("wav_int");
  auto rec = make_recording(2, 500, 16000.0, 2);
  struct Case {
    SampleFormat fmt;
    double tol;
  };
  for (auto [fmt, tol] : {Case{SampleFormat::Pcm16, 1.0 / 32768.0},
                          Case{SampleFormat::Pcm24, 1.0 / 8388608.0},
                          Case{SampleFormat::Pcm32, 1.0 / 2147483648.0 * 2}}) {
    const std::string path = dir.file("q.wav");
    audio::save_recording(rec, path, fmt);
    auto back = audio::load_recording(path);
    REQUIRE(back.num_channels() == 2);
    REQUIRE(back.num_frames() == 500);
    double max_err = 0.0;
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 500; ++i)
        max_err = std::max(max_err, std::abs(back.channels[c][i] - rec.channels[c][i]));
    CHECK(max_err <= tol);
  }
}

TEST_CASE("wav: out-of-range samples saturate instead of wrapping") {
  TempDir dir("wav_clip");
  MultichannelRecording rec;
  rec.sample_rate = 8000.0;
  rec.channels = {{1.5, -1.5, 1.0, -1.0, 0.0}};
  const std::string path = dir.file("clip.wav");
  audio::save_recording(rec, path, SampleFormat::Pcm16);
  auto back = audio::load_recording(path);
  CHECK(back.channels[0][0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(back.channels[0][1] == doctest::Approx(-1.0));
  CHECK(back.channels[0][2] == doctest::Approx(32767.0 / 32768.0));
  CHECK(back.channels[0][3] == doctest::Approx(-1.0));
  CHECK(back.channels[0][4] == doctest::Approx(0.0));
}

TEST_CASE("wav: channel order is preserved") {
  TempDir dir("wav_order");
  MultichannelRecording rec;
  rec.sample_rate = 1000.0;
  rec.channels.resize(4);
  for (int c = 0; c < 4; ++c) rec.channels[c].assign(64, 0.1 * (c + 1));
  const std::string path = dir.file("order.wav");
  audio::save_recording(rec, path, SampleFormat::Float32);
  auto back = audio::load_recording(path);
  for (int c = 0; c < 4; ++c)
    CHECK(back.channels[c][10] == doctest::Approx(0.1 * (c + 1)).epsilon(1e-6));
}

TEST_CASE("wav: rejects empty recordings and non-wav files") {
  TempDir dir("wav_bad");
  MultichannelRecording empty;
  empty.sample_rate = 1000.0;
  CHECK_THROWS(audio::save_recording(empty, dir.file("e.wav")));

  write_bytes(dir.file("junk.wav"), "this is not a riff file at all............");
  CHECK_THROWS(audio::load_recording(dir.file("junk.wav")));
  CHECK_THROWS(audio::load_recording(dir.file("missing.wav")));
}

TEST_CASE("manifest: parses header, rows, comments, and resolves paths") {
  TempDir dir("man_ok");
  // Create the referenced files so path checking passes.
  for (const char* name : {"a.wav", "b.wav"}) {
    auto rec = make_recording(1, 16, 1000.0, 3);
    audio::save_recording(rec, dir.file(name));
  }
  std::string text =
      "# comment line\n"
      "speakers=s00,s01;postures=high_sitting,lying\n"
      "\n"
      "a.wav,s00,high_sitting\n"
      "b.wav,s01,lying   \n";
  write_bytes(dir.file("manifest.txt"), text);
  auto m = audio::load_manifest(dir.file("manifest.txt"));
  REQUIRE(m.entries.size() == 2);
  CHECK(m.speaker_vocab == std::vector<std::string>{"s00", "s01"});
  CHECK(m.posture_vocab == std::vector<std::string>{"high_sitting", "lying"});
  CHECK(m.entries[0].speaker_id == "s00");
  CHECK(m.entries[1].posture_id == "lying");
  CHECK(m.entries[0].resolved_path == dir.file("a.wav"));
}

TEST_CASE("manifest: rejects bad vocab, duplicates, and missing files") {
  TempDir dir("man_bad");
  auto rec = make_recording(1, 16, 1000.0, 4);
  audio::save_recording(rec, dir.file("a.wav"));

  write_bytes(dir.file("m1.txt"), "speakers=s00;postures=lying\na.wav,s01,lying\n");
  CHECK_THROWS(audio::load_manifest(dir.file("m1.txt")));  // unknown speaker

  write_bytes(dir.file("m2.txt"), "speakers=s00;postures=lying\na.wav,s00,sitting_on_mars\n");
  CHECK_THROWS(audio::load_manifest(dir.file("m2.txt")));  // unknown posture

  write_bytes(dir.file("m3.txt"),
              "speakers=s00;postures=lying\na.wav,s00,lying\na.wav,s00,lying\n");
  CHECK_THROWS(audio::load_manifest(dir.file("m3.txt")));  // duplicate path

  write_bytes(dir.file("m4.txt"), "speakers=s00;postures=lying\nnope.wav,s00,lying\n");
  CHECK_THROWS(audio::load_manifest(dir.file("m4.txt")));  // missing file
  CHECK_NOTHROW(audio::load_manifest(dir.file("m4.txt"), /*check_paths=*/false));

  write_bytes(dir.file("m5.txt"), "a.wav,s00,lying\n");
  CHECK_THROWS(audio::load_manifest(dir.file("m5.txt")));  // no header
}

TEST_CASE("manifest: save and reload round trip") {
  TempDir dir("man_rt");
  DatasetManifest m;
  m.speaker_vocab = {"s00", "s01"};
  m.posture_vocab = {"standing", "lying"};
  m.entries.push_back({"wav/x.wav", "", "s00", "standing"});
  m.entries.push_back({"wav/y.wav", "", "s01", "lying"});
  audio::save_manifest(m, dir.file("m.txt"));
  auto back = audio::load_manifest(dir.file("m.txt"), /*check_paths=*/false);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.speaker_vocab == m.speaker_vocab);
  CHECK(back.posture_vocab == m.posture_vocab);
  CHECK(back.entries[0].recording_path == "wav/x.wav");
  CHECK(back.entries[1].speaker_id == "s01");
}

namespace {

features::FeatureSeries make_series(const std::string& id, features::ConfigMode mode, int d, int n,
                                    std::uint64_t seed) {
  features::FeatureSeries s;
  s.instance_id = id;
  s.speaker_id = "s00";
  s.posture_id = "lying";
  s.mode = mode;
  s.k_imfs = mode == features::ConfigMode::AllOrdered || mode == features::ConfigMode::AllShuffled
                 ? d / 4
                 : d;
  s.m = MatF(d, n);
  Rng rng(seed);
  for (auto& v : s.m.data) v = static_cast<float>(rng.uniform(0.0, 2.0));
  return s;
}

}  // namespace

TEST_CASE("feature cache: bitwise round trip of payload and metadata") {
  TempDir dir("cache_rt");
  std::vector<features::FeatureSeries> list;
  list.push_back(make_series("rec0#000", features::ConfigMode::AllShuffled, 12, 40, 5));
  list[0].permutation = {2, 0, 3, 1};
  list.push_back(make_series("rec0#001", features::ConfigMode::AllShuffled, 12, 55, 6));
  list[1].permutation = {1, 3, 0, 2};
  const std::string path = dir.file("f.bhf");
  std::size_t bytes = audio::write_feature_cache(list, path);
  CHECK(bytes > 0);
  auto back = audio::read_feature_cache(path);
  REQUIRE(back.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(back[i].instance_id == list[i].instance_id);
    CHECK(back[i].speaker_id == list[i].speaker_id);
    CHECK(back[i].posture_id == list[i].posture_id);
    CHECK(back[i].mode == list[i].mode);
    CHECK(back[i].k_imfs == list[i].k_imfs);
    CHECK(back[i].permutation == list[i].permutation);
    REQUIRE(back[i].m == list[i].m);  // bitwise float equality
  }
}

TEST_CASE("feature cache: split-channel metadata keeps the origin channel") {
  TempDir dir("cache_split");
  std::vector<features::FeatureSeries> list;
  for (int c = 0; c < 4; ++c) {
    auto s = make_series("rec0#000", features::ConfigMode::SplitChannel, 5, 30, 10 + c);
    s.origin_channel = c;
    list.push_back(std::move(s));
  }
  audio::write_feature_cache(list, dir.file("s.bhf"));
  auto back = audio::read_feature_cache(dir.file("s.bhf"));
  REQUIRE(back.size() == 4);
  for (int c = 0; c < 4; ++c) CHECK(back[c].origin_channel == c);
}

TEST_CASE("feature cache: rejects corrupt files and inconsistent input") {
  TempDir dir("cache_bad");
  std::vector<features::FeatureSeries> list;
  list.push_back(make_series("a", features::ConfigMode::Channel0, 9, 20, 1));
  const std::string path = dir.file("c.bhf");
  audio::write_feature_cache(list, path);

  std::string bytes = read_bytes(path);
  REQUIRE(bytes.size() > 8);

  write_bytes(dir.file("magic.bhf"), "XXXX" + bytes.substr(4));
  CHECK_THROWS(audio::read_feature_cache(dir.file("magic.bhf")));

  write_bytes(dir.file("trunc.bhf"), bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS(audio::read_feature_cache(dir.file("trunc.bhf")));

  CHECK_THROWS(audio::read_feature_cache(dir.file("missing.bhf")));

  // Mixed modes in one cache are rejected at write time.
  std::vector<features::FeatureSeries> mixed;
  mixed.push_back(make_series("a", features::ConfigMode::Channel0, 9, 20, 1));
  mixed.push_back(make_series("b", features::ConfigMode::AllOrdered, 36, 20, 2));
  CHECK_THROWS(audio::write_feature_cache(mixed, dir.file("mixed.bhf")));
}

TEST_CASE("feature cache: empty list round trips") {
  TempDir dir("cache_empty");
  audio::write_feature_cache({}, dir.file("e.bhf"));
  auto back = audio::read_feature_cache(dir.file("e.bhf"));
  CHECK(back.empty());
}
