#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "breathid/matrix.hpp"
#include "breathid/rng.hpp"

namespace breathid::features {

// The four channel-configuration embeddings.
enum class ConfigMode { Channel0, SplitChannel, AllOrdered, AllShuffled };

ConfigMode parse_config_mode(const std::string& token);  // channel0|split|all_ordered|all_shuffled
std::string to_string(ConfigMode mode);

// Feature row count for K IMFs under a mode.
int feature_dim(ConfigMode mode, int k_imfs);

// Multivariate instantaneous-magnitude time series for one breath under one
// configuration. d = K for Channel0/SplitChannel, 4K for the all-channel modes.
struct FeatureSeries {
  MatF m;  // d x N_p, entries >= 0
  std::string instance_id;
  std::string speaker_id;
  std::string posture_id;
  ConfigMode mode = ConfigMode::Channel0;
  int k_imfs = 0;
  int origin_channel = -1;                       // SplitChannel only
  std::array<int, 4> permutation{0, 1, 2, 3};    // AllShuffled only: row i of P is 1 at column permutation[i]

  int dim() const { return m.rows; }
  int length() const { return m.cols; }
};

// Per-channel K x N magnitude matrices for one breath, assemble() input.
struct InstanceFeatures {
  std::string instance_id;
  std::string speaker_id;
  std::string posture_id;
  std::vector<MatD> channel_mags;  // Q = 4 matrices of identical shape
};

// 4x4 permutation P with its Kronecker block form B = P (x) I_K.
// perm[i] = j means row block i of B*M is row block j of M.
struct BlockPermutation {
  std::array<int, 4> perm{0, 1, 2, 3};
  bool is_identity() const { return perm == std::array<int, 4>{0, 1, 2, 3}; }
  BlockPermutation inverse() const;
};

// Uniform draw over the 24 permutations of S_4.
BlockPermutation random_permutation(Rng& rng);

// Row-block reordering equal to (P (x) I_K) * m; row count must be divisible by 4.
MatF block_permute(const MatF& ordered, const BlockPermutation& p);
MatD block_permute(const MatD& ordered, const BlockPermutation& p);

// Build feature series for all instances under one mode. For AllShuffled each
// instance gets a fresh P drawn from a stream keyed on (seed, instance_id),
// so results do not depend on processing order.
std::vector<FeatureSeries> assemble(const std::vector<InstanceFeatures>& instances,
                                    ConfigMode mode, std::uint64_t seed);

// Redraw the per-instance permutation of AllShuffled series for a training
// epoch (keyed on (seed, instance_id, epoch)); other modes are untouched.
void reshuffle_epoch(std::vector<FeatureSeries>& series, std::uint64_t seed, std::uint64_t epoch);

}  // namespace breathid::features
