#include "breathid/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace breathid::audio {

namespace {

// Little-endian byte packing. Float payloads are memcpy'd, which assumes an
// LE host (x86/ARM); a static_assert guards the integer layout expectations.
static_assert(sizeof(float) == 4);

std::uint32_t read_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t read_u16(const std::uint8_t* p) { return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  std::streamoff size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(data.data()), size);
  if (!f) throw std::runtime_error("read failed: " + path);
  return data;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

MultichannelRecording load_recording(const std::string& path) {
  const auto data = read_file(path);
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, num_channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  std::size_t data_offset = 0, data_size = 0;
  bool seen_fmt = false, seen_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    std::uint32_t chunk_size = read_u32(data.data() + pos + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (body + 16 > data.size()) throw std::runtime_error("truncated fmt chunk: " + path);
      format = read_u16(data.data() + body);
      num_channels = read_u16(data.data() + body + 2);
      sample_rate = read_u32(data.data() + body + 4);
      bits = read_u16(data.data() + body + 14);
      if (format == kFormatExtensible) {
        // first two bytes of the subformat GUID carry the real tag
        if (chunk_size < 40 || body + 26 > data.size())
          throw std::runtime_error("malformed extensible fmt chunk: " + path);
        format = read_u16(data.data() + body + 24);
      }
      seen_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_offset = body;
      data_size = std::min<std::size_t>(chunk_size, data.size() - body);
      seen_data = true;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (!seen_fmt || !seen_data) throw std::runtime_error("missing fmt/data chunk: " + path);
  if (num_channels == 0) throw std::runtime_error("zero channels: " + path);
  if (sample_rate == 0) throw std::runtime_error("zero sample rate: " + path);

  const bool is_float = format == kFormatFloat && bits == 32;
  const bool is_int = format == kFormatPcm && (bits == 16 || bits == 24 || bits == 32);
  if (!is_float && !is_int)
    throw std::runtime_error("unsupported encoding (format " + std::to_string(format) + ", " +
                             std::to_string(bits) + " bit): " + path);

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * num_channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw std::runtime_error("zero-length stream: " + path);

  MultichannelRecording rec;
  rec.sample_rate = sample_rate;
  rec.channels.assign(num_channels, std::vector<double>(frames));
  for (int c = 0; c < num_channels; ++c)
    rec.channel_roles.push_back(c == 0 ? "close_mic" : "far_mic_" + std::to_string(c));

  const std::uint8_t* p = data.data() + data_offset;
  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < num_channels; ++c) {
      const std::uint8_t* s = p + i * frame_bytes + c * bytes_per_sample;
      double v;
      if (is_float) {
        float fv;
        std::memcpy(&fv, s, 4);
        v = fv;
      } else if (bits == 16) {
        std::int16_t iv = static_cast<std::int16_t>(read_u16(s));
        v = iv / 32768.0;
      } else if (bits == 24) {
        std::int32_t iv = std::int32_t(s[0]) | std::int32_t(s[1]) << 8 | std::int32_t(s[2]) << 16;
        if (iv & 0x800000) iv |= ~0xFFFFFF;  // sign extend
        v = iv / 8388608.0;
      } else {
        std::int32_t iv = static_cast<std::int32_t>(read_u32(s));
        v = iv / 2147483648.0;
      }
      rec.channels[c][i] = v;
    }
  }
  return rec;
}

void save_recording(const MultichannelRecording& rec, const std::string& path, SampleFormat format) {
  rec.validate();
  const int channels = static_cast<int>(rec.num_channels());
  const std::size_t frames = rec.num_frames();
  int bits = 0;
  std::uint16_t tag = kFormatPcm;
  switch (format) {
    case SampleFormat::Pcm16: bits = 16; break;
    case SampleFormat::Pcm24: bits = 24; break;
    case SampleFormat::Pcm32: bits = 32; break;
    case SampleFormat::Float32: bits = 32; tag = kFormatFloat; break;
  }
  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t data_bytes = frames * channels * bytes_per_sample;

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, tag);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(rec.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(rec.sample_rate * channels * bytes_per_sample));
  put_u16(out, static_cast<std::uint16_t>(channels * bytes_per_sample));
  put_u16(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, static_cast<std::uint32_t>(data_bytes));

  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const double v = rec.channels[c][i];
      switch (format) {
        case SampleFormat::Float32: {
          float fv = static_cast<float>(v);
          std::uint32_t u;
          std::memcpy(&u, &fv, 4);
          put_u32(out, u);
          break;
        }
        case SampleFormat::Pcm16: {
          long q = std::lround(v * 32768.0);
          q = std::clamp<long>(q, -32768, 32767);
          put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
          break;
        }
        case SampleFormat::Pcm24: {
          long q = std::lround(v * 8388608.0);
          q = std::clamp<long>(q, -8388608, 8388607);
          std::uint32_t u = static_cast<std::uint32_t>(static_cast<std::int32_t>(q));
          out.push_back(u & 0xff);
          out.push_back((u >> 8) & 0xff);
          out.push_back((u >> 16) & 0xff);
          break;
        }
        case SampleFormat::Pcm32: {
          double scaled = v * 2147483648.0;
          scaled = std::clamp(scaled, -2147483648.0, 2147483647.0);
          put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(std::llround(scaled))));
          break;
        }
      }
    }
  }
  write_file(path, out);
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetManifest load_manifest(const std::string& path, bool check_paths) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  DatasetManifest m;
  std::string line;
  bool header_done = false;
  std::set<std::string> seen_paths;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header_done) {
      // speakers=a,b,c;postures=x,y,z
      for (const std::string& field : split(line, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("manifest header field without '=': " + field);
        std::string key = trim(field.substr(0, eq));
        for (const std::string& tok : split(field.substr(eq + 1), ',')) {
          std::string t = trim(tok);
          if (t.empty()) continue;
          if (key == "speakers") {
            m.speaker_vocab.push_back(t);
          } else if (key == "postures") {
            if (!is_known_posture(t)) throw std::runtime_error("unknown posture token: " + t);
            m.posture_vocab.push_back(t);
          } else {
            throw std::runtime_error("unknown manifest header key: " + key);
          }
        }
      }
      if (m.speaker_vocab.empty() || m.posture_vocab.empty())
        throw std::runtime_error("manifest header must declare speakers and postures");
      header_done = true;
      continue;
    }
    auto fields = split(line, ',');
    if (fields.size() != 3)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 3 fields");
    ManifestEntry e;
    e.recording_path = trim(fields[0]);
    e.speaker_id = trim(fields[1]);
    e.posture_id = trim(fields[2]);
    if (e.recording_path.empty() || e.speaker_id.empty() || e.posture_id.empty())
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": missing field");
    if (std::find(m.speaker_vocab.begin(), m.speaker_vocab.end(), e.speaker_id) == m.speaker_vocab.end())
      throw std::runtime_error("unknown speaker token: " + e.speaker_id);
    if (std::find(m.posture_vocab.begin(), m.posture_vocab.end(), e.posture_id) == m.posture_vocab.end())
      throw std::runtime_error("unknown posture token: " + e.posture_id);
    if (!seen_paths.insert(e.recording_path).second)
      throw std::runtime_error("duplicate recording path: " + e.recording_path);
    fs::path rp(e.recording_path);
    e.resolved_path = (rp.is_absolute() ? rp : base / rp).lexically_normal().string();
    if (check_paths && !std::ifstream(e.resolved_path).good())
      throw std::runtime_error("recording not readable: " + e.resolved_path);
    m.entries.push_back(std::move(e));
  }
  if (!header_done) throw std::runtime_error("manifest has no header line: " + path);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open manifest for writing: " + path);
  f << "speakers=";
  for (std::size_t i = 0; i < manifest.speaker_vocab.size(); ++i)
    f << (i ? "," : "") << manifest.speaker_vocab[i];
  f << ";postures=";
  for (std::size_t i = 0; i < manifest.posture_vocab.size(); ++i)
    f << (i ? "," : "") << manifest.posture_vocab[i];
  f << "\n";
  for (const auto& e : manifest.entries)
    f << e.recording_path << "," << e.speaker_id << "," << e.posture_id << "\n";
  if (!f) throw std::runtime_error("manifest write failed: " + path);
}

namespace {

constexpr char kCacheMagic[4] = {'B', 'H', 'F', '1'};
constexpr int kCacheVersion = 1;

}  // namespace

std::size_t write_feature_cache(const std::vector<features::FeatureSeries>& instances,
                                const std::string& path) {
  using features::ConfigMode;
  ConfigMode mode = instances.empty() ? ConfigMode::Channel0 : instances[0].mode;
  int d = instances.empty() ? 0 : instances[0].dim();
  int k = instances.empty() ? 0 : instances[0].k_imfs;
  for (const auto& s : instances) {
    if (s.mode != mode || s.dim() != d || s.k_imfs != k)
      throw std::invalid_argument("feature cache: instances disagree on mode/dimension");
  }

  json meta;
  meta["version"] = kCacheVersion;
  meta["mode"] = features::to_string(mode);
  meta["q"] = 4;
  meta["k"] = k;
  meta["d"] = d;
  json inst = json::array();
  for (const auto& s : instances) {
    json j;
    j["id"] = s.instance_id;
    j["speaker"] = s.speaker_id;
    j["posture"] = s.posture_id;
    j["n"] = s.length();
    j["origin_channel"] = s.origin_channel;
    j["perm"] = s.permutation;
    inst.push_back(std::move(j));
  }
  meta["instances"] = std::move(inst);
  const std::string meta_str = meta.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCacheMagic, kCacheMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.insert(out.end(), meta_str.begin(), meta_str.end());
  for (const auto& s : instances) {
    const std::size_t nbytes = s.m.data.size() * sizeof(float);
    const std::size_t off = out.size();
    out.resize(off + nbytes);
    std::memcpy(out.data() + off, s.m.data.data(), nbytes);
  }
  write_file(path, out);
  return out.size();
}

std::vector<features::FeatureSeries> read_feature_cache(const std::string& path) {
  const auto data = read_file(path);
  if (data.size() < 8 || std::memcmp(data.data(), kCacheMagic, 4) != 0)
    throw std::runtime_error("not a feature cache (bad magic): " + path);
  const std::uint32_t meta_len = read_u32(data.data() + 4);
  if (8 + static_cast<std::size_t>(meta_len) > data.size())
    throw std::runtime_error("truncated cache metadata: " + path);
  json meta = json::parse(data.begin() + 8, data.begin() + 8 + meta_len);
  if (meta.at("version").get<int>() != kCacheVersion)
    throw std::runtime_error("unsupported cache version: " + path);
  const auto mode = features::parse_config_mode(meta.at("mode").get<std::string>());
  const int d = meta.at("d").get<int>();
  const int k = meta.at("k").get<int>();
  if (!meta.at("instances").empty() && d != features::feature_dim(mode, k))
    throw std::runtime_error("cache dimension inconsistent with mode: " + path);

  std::size_t payload_off = 8 + meta_len;
  std::size_t expected = 0;
  for (const auto& j : meta.at("instances"))
    expected += static_cast<std::size_t>(d) * j.at("n").get<int>() * sizeof(float);
  if (payload_off + expected != data.size())
    throw std::runtime_error("cache payload size mismatch (truncated?): " + path);

  std::vector<features::FeatureSeries> out;
  for (const auto& j : meta.at("instances")) {
    features::FeatureSeries s;
    s.instance_id = j.at("id").get<std::string>();
    s.speaker_id = j.at("speaker").get<std::string>();
    s.posture_id = j.at("posture").get<std::string>();
    s.mode = mode;
    s.k_imfs = k;
    s.origin_channel = j.at("origin_channel").get<int>();
    auto perm = j.at("perm").get<std::vector<int>>();
    std::copy_n(perm.begin(), 4, s.permutation.begin());
    const int n = j.at("n").get<int>();
    s.m = MatF(d, n);
    const std::size_t nbytes = s.m.data.size() * sizeof(float);
    std::memcpy(s.m.data.data(), data.data() + payload_off, nbytes);
    payload_off += nbytes;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace breathid::audio
