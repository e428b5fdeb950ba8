#pragma once

// Synthetic speech-like corpora with exact alignments, text normalisation,
// an oracle transcriber standing in for ASR, monotone forced alignment, and
// the WER / alignment-score filtering protocol.
//
// Each synthetic speaker owns a prototype matrix (K x F: one spectral
// pattern per character = shared base + speaker offset) and a duration
// stretch. A frame is its character's prototype plus Gaussian noise.

#include "flowfill/core.hpp"
#include "flowfill/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace flowfill {

struct SpeakerConfig {
  double stretch = 1.0;
};

struct SynthConfig {
  std::string alphabet = "abcdef";
  int mel_dim = 16;
  double noise_std = 0.05;
  double prototype_scale = 1.0;
  double offset_scale = 0.75;
  int frame_rate = 10;
  std::vector<SpeakerConfig> speakers{SpeakerConfig{}};
  // Base duration per character id; empty means the rule 2 + (c mod 3).
  std::vector<int> base_durations;
  int num_utterances = 200;
  int min_chars = 8;
  int max_chars = 20;
  double test_fraction = 0.1;
};

struct SpeakerSpec {
  Mat prototypes;  // K x F
  RowVec offset;   // 1 x F, already included in prototypes
  double stretch = 1.0;
};

struct SynthSpec {
  std::string alphabet;
  int mel_dim = 16;
  double noise_std = 0.05;
  int frame_rate = 10;
  std::vector<int> base_durations;
  std::vector<SpeakerSpec> speakers;

  int vocab() const { return static_cast<int>(alphabet.size()); }
  const SpeakerSpec& speaker(int s) const {
    if (s < 0 || s >= static_cast<int>(speakers.size()))
      throw ContractError("unknown speaker id " + std::to_string(s));
    return speakers[static_cast<std::size_t>(s)];
  }
};

inline std::vector<int> default_base_durations(int k) {
  std::vector<int> d(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) d[static_cast<std::size_t>(c)] = 2 + c % 3;
  return d;
}

inline double min_prototype_gap(const Mat& protos) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < protos.rows(); ++i)
    for (Eigen::Index j = i + 1; j < protos.rows(); ++j)
      best = std::min(best, (protos.row(i) - protos.row(j)).norm());
  return best;
}

inline void validate(const SynthSpec& s) {
  if (s.alphabet.size() < 2) throw ConfigError("synth: alphabet needs at least 2 characters");
  if (s.speakers.empty()) throw ConfigError("synth: at least one speaker is required");
  if (s.noise_std < 0) throw ConfigError("synth: noise_std must be >= 0");
  if (static_cast<int>(s.base_durations.size()) != s.vocab())
    throw ConfigError("synth: base_durations must have one entry per character");
  for (int d : s.base_durations)
    if (d < 1) throw ConfigError("synth: base durations must be >= 1");
  for (const auto& sp : s.speakers) {
    if (!(sp.stretch > 0)) throw ConfigError("synth: speaker stretch must be > 0");
    if (sp.prototypes.rows() != s.vocab() || sp.prototypes.cols() != s.mel_dim)
      throw ConfigError("synth: prototype matrix shape mismatch");
    if (!(min_prototype_gap(sp.prototypes) > 4.0 * s.noise_std))
      throw ConfigError("synth: prototypes closer than 4 noise standard deviations");
  }
}

inline SynthSpec make_synth_spec(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  SynthSpec s;
  s.alphabet = cfg.alphabet;
  s.mel_dim = cfg.mel_dim;
  s.noise_std = cfg.noise_std;
  s.frame_rate = cfg.frame_rate;
  const int k = static_cast<int>(cfg.alphabet.size());
  s.base_durations = cfg.base_durations.empty() ? default_base_durations(k) : cfg.base_durations;
  const Mat base = rng.normal_matrix(k, cfg.mel_dim) * cfg.prototype_scale;
  for (const auto& sc : cfg.speakers) {
    SpeakerSpec sp;
    sp.offset = rng.normal_matrix(1, cfg.mel_dim) * cfg.offset_scale;
    sp.prototypes = base.rowwise() + sp.offset;
    sp.stretch = sc.stretch;
    s.speakers.push_back(std::move(sp));
  }
  validate(s);
  return s;
}

enum class FilterState { kept, dropped, restored };

inline std::string to_string(FilterState f) {
  switch (f) {
    case FilterState::kept: return "kept";
    case FilterState::dropped: return "dropped";
    case FilterState::restored: return "restored";
  }
  return "kept";
}

inline FilterState parse_filter_state(const std::string& s) {
  if (s == "kept") return FilterState::kept;
  if (s == "dropped") return FilterState::dropped;
  if (s == "restored") return FilterState::restored;
  throw DataError("unknown filter state: " + s);
}

struct UtteranceRecord {
  std::string id;
  int speaker = 0;
  std::string text;
  CharSeq y;
  Durations l;
  Mat x;
  FilterState filter_state = FilterState::kept;

  Eigen::Index frames() const { return x.rows(); }
};

// ---------------------------------------------------------------------------
// Text

struct NormalizedText {
  bool accepted = false;
  CharSeq chars;
  std::string reason;  // why it was rejected
};

// Drops punctuation and whitespace, then rejects the sentence if anything
// outside the alphabet remains (e.g. words in another script) or if nothing
// is left.
inline NormalizedText normalize_text(const std::string& s, const std::string& alphabet) {
  NormalizedText out;
  for (unsigned char ch : s) {
    if (std::ispunct(ch) || std::isspace(ch)) continue;
    const auto pos = alphabet.find(static_cast<char>(ch));
    if (pos == std::string::npos) {
      out.chars.clear();
      out.reason = "disallowed character";
      return out;
    }
    out.chars.push_back(static_cast<int>(pos));
  }
  if (out.chars.empty()) {
    out.reason = "too short";
    return out;
  }
  out.accepted = true;
  return out;
}

inline std::string chars_to_text(const CharSeq& y, const std::string& alphabet) {
  std::string s;
  for (int c : y) {
    if (c < 0 || c >= static_cast<int>(alphabet.size())) throw ContractError("char id outside alphabet");
    s.push_back(alphabet[static_cast<std::size_t>(c)]);
  }
  return s;
}

// z: each y_j repeated l_j times.
inline FrameTranscript durations_to_frame_transcript(const CharSeq& y, const Durations& l) {
  if (y.size() != l.size()) throw ContractError("frame transcript: y and l lengths differ");
  FrameTranscript z;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (l[j] < 1) throw ContractError("frame transcript: duration must be >= 1");
    z.insert(z.end(), static_cast<std::size_t>(l[j]), y[j]);
  }
  return z;
}

inline std::pair<CharSeq, Durations> run_length_decode(const std::vector<int>& z) {
  CharSeq y;
  Durations l;
  for (int c : z) {
    if (!y.empty() && y.back() == c)
      ++l.back();
    else {
      y.push_back(c);
      l.push_back(1);
    }
  }
  return {y, l};
}

// ---------------------------------------------------------------------------
// Synthesis

inline Durations speaker_durations(const SynthSpec& spec, int speaker, const CharSeq& y) {
  const SpeakerSpec& sp = spec.speaker(speaker);
  Durations l(y.size());
  for (std::size_t j = 0; j < y.size(); ++j)
    l[j] = std::max(1, static_cast<int>(std::lround(
                           spec.base_durations[static_cast<std::size_t>(y[j])] * sp.stretch)));
  return l;
}

// Random text over the alphabet with no character repeated back to back.
inline CharSeq random_text(int vocab, int length, Rng& rng) {
  CharSeq y;
  for (int i = 0; i < length; ++i) {
    int c = rng.uniform_int(0, vocab - 1);
    if (!y.empty() && c == y.back()) c = (c + 1 + rng.uniform_int(0, vocab - 2)) % vocab;
    y.push_back(c);
  }
  return y;
}

inline UtteranceRecord synth_utterance(const SynthSpec& spec, int speaker, const CharSeq& y, Rng& rng,
                                       std::string id = "utt") {
  require(!y.empty(), "synth_utterance: empty text");
  for (int c : y) require(c >= 0 && c < spec.vocab(), "synth_utterance: char outside alphabet");
  const SpeakerSpec& sp = spec.speaker(speaker);
  UtteranceRecord r;
  r.id = std::move(id);
  r.speaker = speaker;
  r.y = y;
  r.text = chars_to_text(y, spec.alphabet);
  r.l = speaker_durations(spec, speaker, y);
  const FrameTranscript z = durations_to_frame_transcript(r.y, r.l);
  r.x.resize(static_cast<Eigen::Index>(z.size()), spec.mel_dim);
  for (std::size_t i = 0; i < z.size(); ++i) r.x.row(static_cast<Eigen::Index>(i)) = sp.prototypes.row(z[i]);
  if (spec.noise_std > 0) r.x += rng.normal_matrix(r.x.rows(), r.x.cols()) * spec.noise_std;
  return r;
}

inline std::string utterance_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%05d", i);
  return buf;
}

// Speakers assigned round-robin; lengths uniform in [min_chars, max_chars].
inline std::vector<UtteranceRecord> synth_corpus(const SynthSpec& spec, int count, int min_chars,
                                                 int max_chars, Rng& rng, int first_index = 0) {
  require(1 <= min_chars && min_chars <= max_chars, "synth_corpus: invalid length range");
  std::vector<UtteranceRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  const int ns = static_cast<int>(spec.speakers.size());
  for (int i = 0; i < count; ++i) {
    const int len = rng.uniform_int(min_chars, max_chars);
    const CharSeq y = random_text(spec.vocab(), len, rng);
    out.push_back(synth_utterance(spec, i % ns, y, rng, utterance_id(first_index + i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle transcriber

struct Transcription {
  CharSeq chars;
  double score = 0.0;  // in [0, 1]
};

// Noise floor used as the confidence temperature when the corpus is noise-free.
inline constexpr double kMinConfidenceTau = 0.01;

// Nearest-prototype decoding per frame, run-length collapsed. Per-frame
// confidence = (posterior of the nearest prototype at temperature tau)
// * exp(-max(0, d^2/F - tau^2) / (2 tau^2)); the score is its frame mean.
inline Transcription oracle_transcribe(const Mat& x, const SynthSpec& spec, int speaker) {
  require(x.rows() >= 1, "oracle_transcribe: empty input");
  require(x.cols() == spec.mel_dim, "oracle_transcribe: feature dimension mismatch");
  const Mat& protos = spec.speaker(speaker).prototypes;
  const double tau = std::max(spec.noise_std, kMinConfidenceTau);
  const double f = static_cast<double>(x.cols());
  std::vector<int> best(static_cast<std::size_t>(x.rows()));
  double conf_sum = 0.0;
  Eigen::VectorXd d2(protos.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < protos.rows(); ++k) d2(k) = (x.row(i) - protos.row(k)).squaredNorm();
    Eigen::Index kmin = 0;
    const double dmin = d2.minCoeff(&kmin);
    best[static_cast<std::size_t>(i)] = static_cast<int>(kmin);
    double z = 0.0;
    for (Eigen::Index k = 0; k < protos.rows(); ++k) z += std::exp(-(d2(k) - dmin) / (2 * tau * tau));
    const double posterior = 1.0 / z;
    const double fit = std::exp(-std::max(0.0, dmin / f - tau * tau) / (2 * tau * tau));
    conf_sum += posterior * fit;
  }
  Transcription t;
  t.chars = run_length_decode(best).first;
  t.score = conf_sum / static_cast<double>(x.rows());
  return t;
}

// ---------------------------------------------------------------------------
// Forced alignment

// Monotone segmentation of the frames into len(y) non-empty runs, minimising
// the total squared distance of each frame to its character's prototype.
inline Durations align(const Mat& x, const CharSeq& y, const SynthSpec& spec, int speaker) {
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t m = y.size();
  if (m == 0) throw ContractError("align: empty transcript");
  if (n < m) throw ContractError("align: fewer frames (" + std::to_string(n) + ") than characters (" +
                                 std::to_string(m) + ")");
  const Mat& protos = spec.speaker(speaker).prototypes;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // cost[i][j]: best total for frames [0, i] with frame i assigned to char j.
  std::vector<double> cost(n * m, inf);
  std::vector<char> advanced(n * m, 0);
  auto at = [m](std::size_t i, std::size_t j) { return i * m + j; };
  auto frame_cost = [&](std::size_t i, std::size_t j) {
    return (x.row(static_cast<Eigen::Index>(i)) - protos.row(y[j])).squaredNorm();
  };
  cost[at(0, 0)] = frame_cost(0, 0);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t jlo = m > n - i ? m - (n - i) : 0;
    const std::size_t jhi = std::min(i, m - 1);
    for (std::size_t j = jlo; j <= jhi; ++j) {
      const double stay = cost[at(i - 1, j)];
      const double adv = j > 0 ? cost[at(i - 1, j - 1)] : inf;
      const bool take_adv = adv < stay;
      const double prev = take_adv ? adv : stay;
      if (prev == inf) continue;
      cost[at(i, j)] = prev + frame_cost(i, j);
      advanced[at(i, j)] = take_adv ? 1 : 0;
    }
  }
  Durations l(m, 0);
  std::size_t j = m - 1;
  for (std::size_t i = n; i-- > 0;) {
    ++l[j];
    if (i > 0 && advanced[at(i, j)]) --j;
  }
  return l;
}

// Total alignment cost of a given segmentation (used by tests and diagnostics).
inline double alignment_cost(const Mat& x, const CharSeq& y, const Durations& l, const SynthSpec& spec,
                             int speaker) {
  const FrameTranscript z = durations_to_frame_transcript(y, l);
  require(static_cast<Eigen::Index>(z.size()) == x.rows(), "alignment_cost: durations do not cover frames");
  const Mat& protos = spec.speaker(speaker).prototypes;
  double c = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    c += (x.row(static_cast<Eigen::Index>(i)) - protos.row(z[i])).squaredNorm();
  return c;
}

// ---------------------------------------------------------------------------
// Filtering

struct FilterThresholds {
  double wer = 0.2;
  double ctc = 0.9;
};

struct FilterOutcome {
  double wer = 0.0;
  double score = 0.0;
  FilterState state = FilterState::kept;
};

// Kept when wer <= th.wer; otherwise restored when score > th.ctc, else dropped.
inline FilterState classify_filter(double wer_value, double score, const FilterThresholds& th) {
  if (wer_value <= th.wer) return FilterState::kept;
  return score > th.ctc ? FilterState::restored : FilterState::dropped;
}

inline FilterOutcome filter_decision(const UtteranceRecord& r, const SynthSpec& spec,
                                     const FilterThresholds& th) {
  const Transcription tr = oracle_transcribe(r.x, spec, r.speaker);
  FilterOutcome o;
  o.wer = wer(r.y, tr.chars);
  o.score = tr.score;
  o.state = classify_filter(o.wer, o.score, th);
  return o;
}

// Drops records whose oracle WER exceeds th.wer, then restores dropped ones
// whose alignment score exceeds th.ctc.
inline std::vector<UtteranceRecord> filter_corpus(std::vector<UtteranceRecord> records, const SynthSpec& spec,
                                                  const FilterThresholds& th = {}) {
  if (!(0.0 <= th.wer && th.wer <= 1.0 && 0.0 <= th.ctc && th.ctc <= 1.0))
    throw ConfigError("filter thresholds must lie in [0, 1]");
  for (auto& r : records) r.filter_state = filter_decision(r, spec, th).state;
  return records;
}

inline bool usable(const UtteranceRecord& r) { return r.filter_state != FilterState::dropped; }

}  // namespace flowfill
