#pragma once

// On-disk corpus layout:
//
//   <dir>/spec.json          SynthSpec (alphabet, prototypes, duration rule)
//   <dir>/<split>.tsv        id, speaker, text, mel path, durations, filter_state
//   <dir>/mels/<id>.melf     "MELF" | u32 version | u32 N | u32 F | N*F LE float32
//
// Mel paths in manifests are relative to <dir>.

#include "flowfill/checkpoint.hpp"
#include "flowfill/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace flowfill {

inline constexpr char kMelMagic[4] = {'M', 'E', 'L', 'F'};
inline constexpr std::uint32_t kMelVersion = 1;

inline void write_mel(std::ostream& os, const Mat& x) {
  os.write(kMelMagic, 4);
  io::put_u32(os, kMelVersion);
  io::put_u32(os, static_cast<std::uint32_t>(x.rows()));
  io::put_u32(os, static_cast<std::uint32_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.size(); ++i) io::put_f32(os, x.data()[i]);
  if (!os) throw DataError("mel blob: write failed");
}

inline Mat read_mel(std::istream& is) {
  io::expect_magic(is, kMelMagic, "mel blob");
  const std::uint32_t v = io::get_u32(is, "mel version");
  if (v != kMelVersion) throw DataError("mel blob: unsupported version " + std::to_string(v));
  const std::uint32_t n = io::get_u32(is, "mel rows"), f = io::get_u32(is, "mel cols");
  if (static_cast<std::uint64_t>(n) * f > (1ULL << 28)) throw DataError("mel blob: implausible shape");
  Mat x(n, f);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = io::get_f32(is, "mel values");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("mel blob: trailing bytes");
  return x;
}

inline void save_mel(const std::filesystem::path& path, const Mat& x) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_mel(os, x);
}

inline Mat load_mel(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open mel blob " + path.string());
  return read_mel(is);
}

// x holds float32-rounded values after a save/load round trip.
inline Mat round_to_f32(const Mat& x) { return x.cast<float>().cast<double>(); }

struct ManifestEntry {
  std::string id;
  int speaker = 0;
  std::string text;
  std::string mel_path;
  Durations l;
  FilterState filter_state = FilterState::kept;
};

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

inline void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& entries) {
  for (const auto& e : entries) {
    for (const std::string* f : {&e.id, &e.text, &e.mel_path})
      if (f->find_first_of("\t\n") != std::string::npos) throw DataError("manifest: field contains a tab or newline");
    os << e.id << '\t' << e.speaker << '\t' << e.text << '\t' << e.mel_path << '\t' << join_ints(e.l) << '\t'
       << to_string(e.filter_state) << '\n';
  }
}

inline std::vector<ManifestEntry> read_manifest(std::istream& is) {
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 6) throw DataError("manifest line " + std::to_string(lineno) + ": expected 6 tab-separated fields");
    ManifestEntry e;
    e.id = f[0];
    try {
      std::size_t pos = 0;
      e.speaker = std::stoi(f[1], &pos);
      if (pos != f[1].size()) throw std::invalid_argument("speaker");
      std::stringstream ds(f[4]);
      std::string d;
      while (std::getline(ds, d, ',')) {
        e.l.push_back(std::stoi(d, &pos));
        if (pos != d.size()) throw std::invalid_argument("duration");
      }
    } catch (const std::logic_error&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": malformed number");
    }
    e.text = f[2];
    e.mel_path = f[3];
    e.filter_state = parse_filter_state(f[5]);
    out.push_back(std::move(e));
  }
  return out;
}

// SynthSpec as JSON; prototypes as nested arrays.
inline json spec_to_json(const SynthSpec& s) {
  json j;
  j["alphabet"] = s.alphabet;
  j["mel_dim"] = s.mel_dim;
  j["noise_std"] = s.noise_std;
  j["frame_rate"] = s.frame_rate;
  j["base_durations"] = s.base_durations;
  j["speakers"] = json::array();
  for (const auto& sp : s.speakers) {
    json js;
    js["stretch"] = sp.stretch;
    std::vector<double> off(sp.offset.data(), sp.offset.data() + sp.offset.size());
    js["offset"] = off;
    json rows = json::array();
    for (Eigen::Index r = 0; r < sp.prototypes.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(sp.prototypes.cols()));
      for (Eigen::Index c = 0; c < sp.prototypes.cols(); ++c) row[static_cast<std::size_t>(c)] = sp.prototypes(r, c);
      rows.push_back(row);
    }
    js["prototypes"] = rows;
    j["speakers"].push_back(js);
  }
  return j;
}

inline SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.alphabet = j.at("alphabet").get<std::string>();
    s.mel_dim = j.at("mel_dim").get<int>();
    s.noise_std = j.at("noise_std").get<double>();
    s.frame_rate = j.at("frame_rate").get<int>();
    s.base_durations = j.at("base_durations").get<std::vector<int>>();
    for (const auto& js : j.at("speakers")) {
      SpeakerSpec sp;
      sp.stretch = js.at("stretch").get<double>();
      const auto off = js.at("offset").get<std::vector<double>>();
      sp.offset = Eigen::Map<const RowVec>(off.data(), static_cast<Eigen::Index>(off.size()));
      const auto rows = js.at("prototypes").get<std::vector<std::vector<double>>>();
      sp.prototypes.resize(static_cast<Eigen::Index>(rows.size()), s.mel_dim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(s.mel_dim)) throw DataError("spec: prototype width != mel_dim");
        for (int c = 0; c < s.mel_dim; ++c)
          sp.prototypes(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
      }
      s.speakers.push_back(std::move(sp));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("spec: ") + e.what());
  }
  try {
    validate(s);
  } catch (const ConfigError& e) {
    throw DataError(std::string("spec: ") + e.what());
  }
  return s;
}

inline void save_spec(const std::filesystem::path& path, const SynthSpec& s) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << spec_to_json(s).dump(2) << '\n';
}

inline SynthSpec load_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return spec_from_json(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void save_split(const std::filesystem::path& dir, const std::string& split,
                       const std::vector<UtteranceRecord>& records) {
  std::filesystem::create_directories(dir / "mels");
  std::vector<ManifestEntry> entries;
  for (const auto& r : records) {
    ManifestEntry e{r.id, r.speaker, r.text, "mels/" + r.id + ".melf", r.l, r.filter_state};
    save_mel(dir / e.mel_path, r.x);
    entries.push_back(std::move(e));
  }
  std::ofstream os(dir / (split + ".tsv"));
  if (!os) throw DataError("cannot write manifest in " + dir.string());
  write_manifest(os, entries);
}

inline std::vector<UtteranceRecord> load_split(const std::filesystem::path& dir, const std::string& split,
                                               const SynthSpec& spec) {
  std::ifstream is(dir / (split + ".tsv"));
  if (!is) throw DataError("cannot open manifest " + (dir / (split + ".tsv")).string());
  std::vector<UtteranceRecord> out;
  for (auto& e : read_manifest(is)) {
    const NormalizedText nt = normalize_text(e.text, spec.alphabet);
    if (!nt.accepted) throw DataError("manifest: record " + e.id + " has text outside the alphabet");
    UtteranceRecord r;
    r.id = e.id;
    r.speaker = e.speaker;
    r.text = e.text;
    r.y = nt.chars;
    r.l = e.l;
    r.filter_state = e.filter_state;
    r.x = load_mel(dir / e.mel_path);
    if (r.speaker < 0 || r.speaker >= static_cast<int>(spec.speakers.size()))
      throw DataError("manifest: record " + e.id + " names an unknown speaker");
    if (r.y.size() != r.l.size()) throw DataError("manifest: record " + e.id + " has " + std::to_string(r.y.size()) +
                                                  " chars but " + std::to_string(r.l.size()) + " durations");
    long total = 0;
    for (int d : r.l) {
      if (d < 1) throw DataError("manifest: record " + e.id + " has a duration < 1");
      total += d;
    }
    if (total != r.x.rows()) throw DataError("manifest: record " + e.id + " durations do not sum to its frame count");
    if (r.x.cols() != spec.mel_dim) throw DataError("manifest: record " + e.id + " has the wrong feature dimension");
    out.push_back(std::move(r));
  }
  return out;
}

inline const UtteranceRecord& find_record(const std::vector<UtteranceRecord>& recs, const std::string& id) {
  for (const auto& r : recs)
    if (r.id == id) return r;
  throw DataError("no utterance with id " + id);
}

}  // namespace flowfill
