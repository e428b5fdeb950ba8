#pragma once

// Binary checkpoints.
//
//   "FFCK" | u32 version | u32 kind | u32 n | n bytes of config JSON
//   u32 count | count x (u32 name_len | name | u32 rows | u32 cols)
//   parameter values as little-endian float32, row-major, manifest order
//
// Loading rebuilds the model from the embedded config and requires the
// manifest to match its parameters name for name and shape for shape.

#include "flowfill/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace flowfill {

enum class ModelKind : std::uint32_t { audio = 1, duration_infill = 2, duration_prompted = 3, toy2d = 4 };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::audio: return "audio";
    case ModelKind::duration_infill: return "duration_infill";
    case ModelKind::duration_prompted: return "duration_prompted";
    case ModelKind::toy2d: return "toy2d";
  }
  return "unknown";
}

inline constexpr char kCheckpointMagic[4] = {'F', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError(std::string("truncated file reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f32(std::ostream& os, double v) { put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline double get_f32(std::istream& is, const char* what) {
  return static_cast<double>(std::bit_cast<float>(get_u32(is, what)));
}

inline void put_bytes(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_bytes(std::istream& is, const char* what, std::uint32_t limit = 1u << 26) {
  const std::uint32_t n = get_u32(is, what);
  if (n > limit) throw DataError(std::string("implausible length reading ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError(std::string("truncated file reading ") + what);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[4], const std::string& what) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) throw DataError(what + ": bad magic");
}

}  // namespace io

struct CheckpointData {
  ModelKind kind = ModelKind::audio;
  json config;
  std::vector<std::pair<std::string, Mat>> params;
};

inline void write_checkpoint(std::ostream& os, ModelKind kind, const json& config, const ParamStore& ps) {
  os.write(kCheckpointMagic, 4);
  io::put_u32(os, kCheckpointVersion);
  io::put_u32(os, static_cast<std::uint32_t>(kind));
  io::put_bytes(os, config.dump());
  io::put_u32(os, static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps.params()) {
    io::put_bytes(os, p.name);
    io::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
    io::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
  }
  for (const auto& p : ps.params())
    for (Eigen::Index i = 0; i < p.value.size(); ++i) io::put_f32(os, p.value.data()[i]);
  if (!os) throw DataError("checkpoint: write failed");
}

inline CheckpointData read_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic, "checkpoint");
  const std::uint32_t version = io::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointData d;
  const std::uint32_t kind = io::get_u32(is, "checkpoint kind");
  if (kind < 1 || kind > 4) throw DataError("checkpoint: unknown model kind " + std::to_string(kind));
  d.kind = static_cast<ModelKind>(kind);
  try {
    d.config = json::parse(io::get_bytes(is, "checkpoint config"));
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint: corrupt config: ") + e.what());
  }
  const std::uint32_t count = io::get_u32(is, "checkpoint manifest");
  if (count > 100000) throw DataError("checkpoint: implausible parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::get_bytes(is, "parameter name", 4096);
    const std::uint32_t r = io::get_u32(is, "parameter rows"), c = io::get_u32(is, "parameter cols");
    if (static_cast<std::uint64_t>(r) * c > (1ULL << 28)) throw DataError("checkpoint: implausible shape for " + name);
    d.params.emplace_back(std::move(name), Mat(r, c));
  }
  for (auto& [name, m] : d.params)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = io::get_f32(is, "parameter values");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return d;
}

inline void load_params(ParamStore& ps, const CheckpointData& d) {
  if (d.params.size() != ps.size())
    throw DataError("checkpoint: parameter count " + std::to_string(d.params.size()) + " != model " +
                    std::to_string(ps.size()));
  std::size_t i = 0;
  for (auto& p : ps.params()) {
    const auto& [name, m] = d.params[i++];
    if (name != p.name) throw DataError("checkpoint: parameter '" + name + "' where '" + p.name + "' expected");
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    p.value = m;
  }
}

inline void save_checkpoint(const std::string& path, ModelKind kind, const json& config, const ParamStore& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_checkpoint(os, kind, config, ps);
}

inline CheckpointData load_checkpoint(const std::string& path, ModelKind expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  CheckpointData d = read_checkpoint(is);
  if (d.kind != expected)
    throw DataError(path + ": checkpoint holds a " + to_string(d.kind) + " model, expected " + to_string(expected));
  return d;
}

template <typename Model, typename Config>
Model model_from_checkpoint(const CheckpointData& d) {
  Config cfg;
  try {
    cfg = d.config.get<Config>();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: invalid embedded config: ") + e.what());
  }
  Model m(cfg, 0);
  load_params(m.params(), d);
  return m;
}

inline void save_model(const std::string& path, const AudioModel& m) {
  save_checkpoint(path, ModelKind::audio, json(m.config()), m.params());
}
inline void save_model(const std::string& path, const DurationInfillModel& m) {
  save_checkpoint(path, ModelKind::duration_infill, json(m.config()), m.params());
}
inline void save_model(const std::string& path, const PromptedDurationModel& m) {
  save_checkpoint(path, ModelKind::duration_prompted, json(m.config()), m.params());
}

inline AudioModel load_audio_model(const std::string& path) {
  return model_from_checkpoint<AudioModel, AudioModelConfig>(load_checkpoint(path, ModelKind::audio));
}
inline DurationInfillModel load_duration_infill_model(const std::string& path) {
  return model_from_checkpoint<DurationInfillModel, DurInfillConfig>(load_checkpoint(path, ModelKind::duration_infill));
}
inline PromptedDurationModel load_duration_prompted_model(const std::string& path) {
  return model_from_checkpoint<PromptedDurationModel, PromptEncoderConfig>(
      load_checkpoint(path, ModelKind::duration_prompted));
}

}  // namespace flowfill
