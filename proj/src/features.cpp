#include "breathid/features.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace breathid::features {

ConfigMode parse_config_mode(const std::string& token) {
  if (token == "channel0") return ConfigMode::Channel0;
  if (token == "split") return ConfigMode::SplitChannel;
  if (token == "all_ordered") return ConfigMode::AllOrdered;
  if (token == "all_shuffled") return ConfigMode::AllShuffled;
  throw std::invalid_argument("unknown configuration mode: " + token);
}

std::string to_string(ConfigMode mode) {
  switch (mode) {
    case ConfigMode::Channel0: return "channel0";
    case ConfigMode::SplitChannel: return "split";
    case ConfigMode::AllOrdered: return "all_ordered";
    case ConfigMode::AllShuffled: return "all_shuffled";
  }
  throw std::logic_error("bad mode");
}

int feature_dim(ConfigMode mode, int k_imfs) {
  switch (mode) {
    case ConfigMode::Channel0:
    case ConfigMode::SplitChannel: return k_imfs;
    case ConfigMode::AllOrdered:
    case ConfigMode::AllShuffled: return 4 * k_imfs;
  }
  throw std::logic_error("bad mode");
}

BlockPermutation BlockPermutation::inverse() const {
  BlockPermutation inv;
  for (int i = 0; i < 4; ++i) inv.perm[perm[i]] = i;
  return inv;
}

BlockPermutation random_permutation(Rng& rng) {
  BlockPermutation p;
  rng.shuffle(p.perm.begin(), p.perm.end());
  return p;
}

namespace {

template <typename T>
Mat<T> block_permute_impl(const Mat<T>& ordered, const BlockPermutation& p) {
  if (ordered.rows % 4 != 0)
    throw std::invalid_argument("block_permute: row count must be divisible by 4");
  const int k = ordered.rows / 4;
  Mat<T> out(ordered.rows, ordered.cols);
  for (int block = 0; block < 4; ++block) {
    const int src = p.perm[block];
    std::memcpy(out.row_ptr(block * k), ordered.row_ptr(src * k),
                sizeof(T) * static_cast<std::size_t>(k) * ordered.cols);
  }
  return out;
}

// One series from the stacked per-channel magnitudes, rows cast to float.
MatF stack(const std::vector<MatD>& mags) {
  const int k = mags[0].rows;
  const int n = mags[0].cols;
  MatF out(4 * k, n);
  for (int c = 0; c < 4; ++c) {
    if (mags[c].rows != k || mags[c].cols != n)
      throw std::invalid_argument("channel magnitude shapes disagree");
    for (std::size_t i = 0; i < mags[c].data.size(); ++i)
      out.data[static_cast<std::size_t>(c) * mags[c].data.size() + i] =
          static_cast<float>(mags[c].data[i]);
  }
  return out;
}

MatF cast_to_float(const MatD& m) {
  MatF out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<float>(m.data[i]);
  return out;
}

}  // namespace

MatF block_permute(const MatF& ordered, const BlockPermutation& p) {
  return block_permute_impl(ordered, p);
}
MatD block_permute(const MatD& ordered, const BlockPermutation& p) {
  return block_permute_impl(ordered, p);
}

std::vector<FeatureSeries> assemble(const std::vector<InstanceFeatures>& instances,
                                    ConfigMode mode, std::uint64_t seed) {
  Rng root(seed);
  std::vector<FeatureSeries> out;
  for (const auto& inst : instances) {
    if (inst.channel_mags.size() != 4)
      throw std::invalid_argument("expected 4 channel magnitude matrices for " + inst.instance_id);

    auto base = [&inst, mode](int k) {
      FeatureSeries s;
      s.instance_id = inst.instance_id;
      s.speaker_id = inst.speaker_id;
      s.posture_id = inst.posture_id;
      s.mode = mode;
      s.k_imfs = k;
      return s;
    };
    const int k = inst.channel_mags[0].rows;

    switch (mode) {
      case ConfigMode::Channel0: {
        FeatureSeries s = base(k);
        s.m = cast_to_float(inst.channel_mags[0]);
        s.origin_channel = 0;
        out.push_back(std::move(s));
        break;
      }
      case ConfigMode::SplitChannel: {
        for (int c = 0; c < 4; ++c) {
          FeatureSeries s = base(k);
          s.m = cast_to_float(inst.channel_mags[c]);
          s.origin_channel = c;
          out.push_back(std::move(s));
        }
        break;
      }
      case ConfigMode::AllOrdered: {
        FeatureSeries s = base(k);
        s.m = stack(inst.channel_mags);
        out.push_back(std::move(s));
        break;
      }
      case ConfigMode::AllShuffled: {
        FeatureSeries s = base(k);
        Rng stream = root.stream(fnv1a64(inst.instance_id));
        const BlockPermutation p = random_permutation(stream);
        s.m = block_permute(stack(inst.channel_mags), p);
        s.permutation = p.perm;
        out.push_back(std::move(s));
        break;
      }
    }
  }
  return out;
}

void reshuffle_epoch(std::vector<FeatureSeries>& series, std::uint64_t seed, std::uint64_t epoch) {
  Rng root(seed);
  for (FeatureSeries& s : series) {
    if (s.mode != ConfigMode::AllShuffled) continue;
    Rng stream = root.stream(fnv1a64(s.instance_id) ^ (epoch * 0x9e3779b97f4a7c15ull));
    const BlockPermutation next = random_permutation(stream);
    // Rows currently sit under the old permutation; compose so one pass of
    // block_permute lands them under the new one.
    BlockPermutation cur;
    cur.perm = s.permutation;
    const BlockPermutation cur_inv = cur.inverse();
    BlockPermutation rel;
    for (int i = 0; i < 4; ++i) rel.perm[i] = cur_inv.perm[next.perm[i]];
    s.m = block_permute(s.m, rel);
    s.permutation = next.perm;
  }
}

}  // namespace breathid::features
