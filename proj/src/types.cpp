#include "breathid/types.hpp"

#include <stdexcept>

namespace breathid {

int posture_index(const std::string& token) {
  for (std::size_t i = 0; i < kPostureTokens.size(); ++i)
    if (token == kPostureTokens[i]) return static_cast<int>(i);
  return -1;
}

bool is_known_posture(const std::string& token) { return posture_index(token) >= 0; }

std::string posture3_label(const std::string& posture_token) {
  if (posture_token == "high_sitting" || posture_token == "low_sitting") return "sitting";
  if (posture_token == "standing" || posture_token == "standing_hands_behind_head") return "standing";
  if (posture_token == "lying") return "lying";
  throw std::invalid_argument("unknown posture token: " + posture_token);
}

void MultichannelRecording::validate() const {
  if (sample_rate <= 0.0) throw std::invalid_argument("recording: sample_rate must be > 0");
  if (channels.empty()) throw std::invalid_argument("recording: no channels");
  const std::size_t n = channels[0].size();
  for (const auto& ch : channels)
    if (ch.size() != n) throw std::invalid_argument("recording: channel lengths differ");
}

}  // namespace breathid
