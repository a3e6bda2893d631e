#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "breathid/features.hpp"
#include "breathid/types.hpp"

namespace breathid::audio {

enum class SampleFormat { Pcm16, Pcm24, Pcm32, Float32 };

// RIFF/WAVE linear PCM loader (16/24/32-bit int and 32-bit float).
// Integer samples map to [-1, 1) by dividing with 2^(bits-1).
MultichannelRecording load_recording(const std::string& path);

void save_recording(const MultichannelRecording& rec, const std::string& path,
                    SampleFormat format = SampleFormat::Float32);

// Manifest: one header line declaring the label vocabularies, then rows
// `recording_path,speaker_id,posture_id`. Relative paths resolve against the
// manifest's directory.
DatasetManifest load_manifest(const std::string& path, bool check_paths = true);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Binary feature cache: magic "BHF1", a length-prefixed UTF-8 metadata
// record, then the little-endian float32 payload (row-major d x N_p per
// instance). All instances must share mode and d.
std::size_t write_feature_cache(const std::vector<features::FeatureSeries>& instances,
                                const std::string& path);
std::vector<features::FeatureSeries> read_feature_cache(const std::string& path);

}  // namespace breathid::audio
