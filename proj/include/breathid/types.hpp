#pragma once

#include <array>
#include <string>
#include <vector>

namespace breathid {

// The five recording postures. Tokens are the on-disk vocabulary.
inline constexpr std::array<const char*, 5> kPostureTokens = {
    "high_sitting", "low_sitting", "standing", "standing_hands_behind_head", "lying"};

// Merge of the five postures onto {sitting, standing, lying}.
std::string posture3_label(const std::string& posture_token);
inline constexpr std::array<const char*, 3> kPosture3Tokens = {"sitting", "standing", "lying"};

int posture_index(const std::string& token);       // -1 if unknown
bool is_known_posture(const std::string& token);

// Synchronized per-channel sample streams at one sample rate.
// Channel 0 is the close subminiature mic, 1..3 the far mics.
struct MultichannelRecording {
  std::vector<std::vector<double>> channels;  // amplitude in [-1, 1]
  double sample_rate = 0.0;
  std::vector<std::string> channel_roles;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_frames() const { return channels.empty() ? 0 : channels[0].size(); }
  void validate() const;  // equal lengths, positive rate
};

struct ManifestEntry {
  std::string recording_path;  // as written in the manifest
  std::string resolved_path;   // absolute, filled by the loader
  std::string speaker_id;
  std::string posture_id;
};

struct DatasetManifest {
  std::vector<std::string> speaker_vocab;
  std::vector<std::string> posture_vocab;
  std::vector<ManifestEntry> entries;
};

// One segmented, aligned, energy-normalized breath.
struct BreathInstance {
  std::string id;
  std::string speaker_id;
  std::string posture_id;
  std::vector<std::vector<double>> channels;  // Q channels, equal length, unit energy
  double sample_rate_hz = 0.0;

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
};

}  // namespace breathid
