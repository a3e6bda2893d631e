#include <doctest.h>

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "breathid/features.hpp"
#include "breathid/rng.hpp"

using namespace breathid;
using features::BlockPermutation;
using features::ConfigMode;
using features::FeatureSeries;
using features::InstanceFeatures;

namespace {

InstanceFeatures make_instance(const std::string& id, int k, int n, std::uint64_t seed) {
  InstanceFeatures inst;
  inst.instance_id = id;
  inst.speaker_id = "s01";
  inst.posture_id = "standing";
  Rng rng(seed);
  for (int c = 0; c < 4; ++c) {
    MatD m(k, n);
    for (auto& v : m.data) v = rng.uniform(0.0, 3.0);
    inst.channel_mags.push_back(std::move(m));
  }
  return inst;
}

}  // namespace

TEST_CASE("config mode: tokens round trip and bad tokens throw") {
  for (auto mode : {ConfigMode::Channel0, ConfigMode::SplitChannel, ConfigMode::AllOrdered,
                    ConfigMode::AllShuffled})
    CHECK(features::parse_config_mode(features::to_string(mode)) == mode);
  CHECK(features::to_string(ConfigMode::Channel0) == "channel0");
  CHECK(features::to_string(ConfigMode::SplitChannel) == "split");
  CHECK(features::to_string(ConfigMode::AllOrdered) == "all_ordered");
  CHECK(features::to_string(ConfigMode::AllShuffled) == "all_shuffled");
  CHECK_THROWS(features::parse_config_mode("chan0"));
}

TEST_CASE("feature dim: single-channel modes keep K, stacked modes use 4K") {
  CHECK(features::feature_dim(ConfigMode::Channel0, 9) == 9);
  CHECK(features::feature_dim(ConfigMode::SplitChannel, 9) == 9);
  CHECK(features::feature_dim(ConfigMode::AllOrdered, 9) == 36);
  CHECK(features::feature_dim(ConfigMode::AllShuffled, 9) == 36);
}

TEST_CASE("block permutation: inverse composes to the identity") {
  BlockPermutation p;
  p.perm = {2, 0, 3, 1};
  auto inv = p.inverse();
  for (int i = 0; i < 4; ++i) CHECK(inv.perm[p.perm[i]] == i);
  CHECK_FALSE(p.is_identity());
  CHECK(BlockPermutation{}.is_identity());
}

TEST_CASE("block permute: moves whole row blocks") {
  const int k = 3;
  MatF m(4 * k, 5);
  for (int r = 0; r < 4 * k; ++r)
    for (int c = 0; c < 5; ++c) m(r, c) = static_cast<float>(100 * r + c);
  BlockPermutation p;
  p.perm = {1, 3, 0, 2};  // output block i comes from input block perm[i]
  auto out = features::block_permute(m, p);
  REQUIRE(out.rows == 4 * k);
  REQUIRE(out.cols == 5);
  for (int b = 0; b < 4; ++b)
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < 5; ++c)
        REQUIRE(out(b * k + r, c) == m(p.perm[b] * k + r, c));

  // Round trip through the inverse restores the original.
  auto back = features::block_permute(out, p.inverse());
  CHECK(back == m);

  MatF bad(10, 3);  // rows not divisible by 4
  CHECK_THROWS(features::block_permute(bad, p));
}

TEST_CASE("random permutation: all 24 orders occur") {
  Rng rng(41);
  std::set<std::array<int, 4>> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(features::random_permutation(rng).perm);
  CHECK(seen.size() == 24);
}

TEST_CASE("assemble: channel0 copies channel 0 exactly") {
  auto inst = make_instance("r#000", 3, 8, 1);
  auto series = features::assemble({inst}, ConfigMode::Channel0, 7);
  REQUIRE(series.size() == 1);
  const auto& s = series[0];
  CHECK(s.instance_id == "r#000");
  CHECK(s.mode == ConfigMode::Channel0);
  CHECK(s.k_imfs == 3);
  CHECK(s.dim() == 3);
  CHECK(s.length() == 8);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 8; ++c)
      REQUIRE(s.m(r, c) == static_cast<float>(inst.channel_mags[0](r, c)));
}

TEST_CASE("assemble: split mode yields one series per channel") {
  auto inst = make_instance("r#001", 2, 6, 2);
  auto series = features::assemble({inst}, ConfigMode::SplitChannel, 7);
  REQUIRE(series.size() == 4);
  for (int c = 0; c < 4; ++c) {
    CHECK(series[c].origin_channel == c);
    CHECK(series[c].instance_id == "r#001");
    CHECK(series[c].dim() == 2);
    for (int r = 0; r < 2; ++r)
      for (int j = 0; j < 6; ++j)
        REQUIRE(series[c].m(r, j) == static_cast<float>(inst.channel_mags[c](r, j)));
  }
}

TEST_CASE("assemble: all_ordered stacks blocks in channel order") {
  auto inst = make_instance("r#002", 3, 7, 3);
  auto series = features::assemble({inst}, ConfigMode::AllOrdered, 7);
  REQUIRE(series.size() == 1);
  const auto& s = series[0];
  CHECK(s.dim() == 12);
  for (int ch = 0; ch < 4; ++ch)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 7; ++c)
        REQUIRE(s.m(ch * 3 + r, c) == static_cast<float>(inst.channel_mags[ch](r, c)));
}

TEST_CASE("assemble: all_shuffled equals the recorded permutation of all_ordered") {
  std::vector<InstanceFeatures> insts;
  for (int i = 0; i < 6; ++i)
    insts.push_back(make_instance("inst#" + std::to_string(i), 2, 9, 10 + i));
  auto ordered = features::assemble(insts, ConfigMode::AllOrdered, 99);
  auto shuffled = features::assemble(insts, ConfigMode::AllShuffled, 99);
  REQUIRE(shuffled.size() == 6);
  bool any_nontrivial = false;
  for (int i = 0; i < 6; ++i) {
    BlockPermutation p;
    p.perm = shuffled[i].permutation;
    any_nontrivial = any_nontrivial || !p.is_identity();
    auto expect = features::block_permute(ordered[i].m, p);
    REQUIRE(shuffled[i].m == expect);
  }
  CHECK(any_nontrivial);
}

TEST_CASE("assemble: shuffle draw depends only on seed and instance id") {
  std::vector<InstanceFeatures> insts;
  for (int i = 0; i < 5; ++i)
    insts.push_back(make_instance("inst#" + std::to_string(i), 2, 4, 20 + i));
  auto a = features::assemble(insts, ConfigMode::AllShuffled, 5);
  auto b = features::assemble(insts, ConfigMode::AllShuffled, 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(a[i].permutation == b[i].permutation);
    CHECK(a[i].m == b[i].m);
  }
  // Reversing the processing order must not change any draw.
  std::vector<InstanceFeatures> reversed(insts.rbegin(), insts.rend());
  auto c = features::assemble(reversed, ConfigMode::AllShuffled, 5);
  for (int i = 0; i < 5; ++i) CHECK(c[4 - i].permutation == a[i].permutation);

  auto d = features::assemble(insts, ConfigMode::AllShuffled, 6);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs = differs || !(d[i].permutation == a[i].permutation);
  CHECK(differs);
}

TEST_CASE("reshuffle: redraws all_shuffled rows and leaves other modes alone") {
  std::vector<InstanceFeatures> insts;
  for (int i = 0; i < 8; ++i)
    insts.push_back(make_instance("inst#" + std::to_string(i), 3, 10, 30 + i));
  auto ordered = features::assemble(insts, ConfigMode::AllOrdered, 99);
  auto series = features::assemble(insts, ConfigMode::AllShuffled, 99);
  auto before = series;

  features::reshuffle_epoch(series, 99, 1);
  bool changed = false;
  for (int i = 0; i < 8; ++i) {
    changed = changed || !(series[i].permutation == before[i].permutation);
    // The recorded permutation always explains the matrix.
    BlockPermutation p;
    p.perm = series[i].permutation;
    REQUIRE(series[i].m == features::block_permute(ordered[i].m, p));
  }
  CHECK(changed);

  // Same (seed, epoch) redraw from any starting state gives the same result.
  auto series2 = features::assemble(insts, ConfigMode::AllShuffled, 99);
  features::reshuffle_epoch(series2, 99, 5);
  features::reshuffle_epoch(series2, 99, 1);
  for (int i = 0; i < 8; ++i) {
    CHECK(series2[i].permutation == series[i].permutation);
    CHECK(series2[i].m == series[i].m);
  }

  // Other modes are untouched.
  auto ch0 = features::assemble(insts, ConfigMode::Channel0, 99);
  auto ch0_before = ch0;
  features::reshuffle_epoch(ch0, 99, 1);
  for (int i = 0; i < 8; ++i) CHECK(ch0[i].m == ch0_before[i].m);
}

TEST_CASE("assemble: validates channel counts and shapes") {
  auto inst = make_instance("bad", 2, 6, 50);
  inst.channel_mags.pop_back();  // only 3 channels
  CHECK_THROWS(features::assemble({inst}, ConfigMode::AllOrdered, 1));

  auto inst2 = make_instance("bad2", 2, 6, 51);
  inst2.channel_mags[2] = MatD(2, 5);  // mismatched length
  CHECK_THROWS(features::assemble({inst2}, ConfigMode::AllOrdered, 1));
}
