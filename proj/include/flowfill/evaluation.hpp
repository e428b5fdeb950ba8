#pragma once

// Inference-time infilling and the continuous sentence completion protocol:
// each test sentence is split at its middle character; the first half is the
// speaker prompt, the second half's text is the input, and the missing audio
// is generated once per duration source. Intelligibility is scored by the
// oracle transcriber (WER) and speaker similarity by Sim-o between the prompt
// and the generated half.

#include "flowfill/audio_model.hpp"
#include "flowfill/corpus.hpp"
#include "flowfill/duration_infill.hpp"
#include "flowfill/duration_prompted.hpp"
#include "flowfill/flow_matching.hpp"
#include "flowfill/masking.hpp"
#include "flowfill/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace flowfill {

enum class DurationSource { ground_truth, infill, prompted };

inline std::string to_string(DurationSource s) {
  switch (s) {
    case DurationSource::ground_truth: return "ground_truth";
    case DurationSource::infill: return "infill";
    case DurationSource::prompted: return "prompted";
  }
  return "ground_truth";
}

// Report column header.
inline std::string column_label(DurationSource s) {
  switch (s) {
    case DurationSource::ground_truth: return "GT";
    case DurationSource::infill: return "Infill";
    case DurationSource::prompted: return "Prompted";
  }
  return "GT";
}

inline DurationSource parse_duration_source(const std::string& s) {
  if (s == "ground_truth" || s == "gt" || s == "GT") return DurationSource::ground_truth;
  if (s == "infill" || s == "Infill") return DurationSource::infill;
  if (s == "prompted" || s == "Prompted") return DurationSource::prompted;
  throw ConfigError("unknown duration source: " + s);
}

inline const std::vector<DurationSource>& all_duration_sources() {
  static const std::vector<DurationSource> v{DurationSource::ground_truth, DurationSource::infill,
                                             DurationSource::prompted};
  return v;
}

struct OdeSettings {
  int steps = 32;
  OdeMethod method = OdeMethod::midpoint;
};

struct EvalConfig {
  OdeSettings ode;
  int min_dur = 1;
  std::uint64_t seed = 0;
  std::vector<DurationSource> sources = all_duration_sources();
  int max_utterances = 0;  // 0 = all
};

// Generates the masked frames of x. Every row starts from N(0, 1) noise and
// follows the learned field conditioned on x_ctx and z; the result keeps
// the context rows of x verbatim.
inline Mat infill_frames(AudioModel& model, const Mat& x, const FrameMask& mask, const FrameTranscript& z,
                         const OdeSettings& ode, Rng& rng) {
  require(static_cast<Eigen::Index>(z.size()) == x.rows(), "infill: transcript length != frame count");
  const Mat x_ctx = apply_context(x, mask);
  if (mask.none()) return x;
  const Mat x0 = rng.normal_matrix(x.rows(), x.cols());
  const VectorField field = [&](const Mat& xt, double t) { return model.predict(xt, x_ctx, z, t); };
  const Mat gen = integrate_flow(field, x0, ode.steps, ode.method);
  Mat out = x;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.row(static_cast<Eigen::Index>(i)) = gen.row(static_cast<Eigen::Index>(i));
  return out;
}

struct DurationModels {
  DurationInfillModel* infill = nullptr;
  PromptedDurationModel* prompted = nullptr;
};

// Audio prompt (with its characters and aligned durations) plus the text to
// continue with.
struct InfillRequest {
  Mat prompt_frames;
  CharSeq prompt_chars;
  Durations prompt_durations;
  CharSeq target_chars;
  Durations target_durations;  // required for DurationSource::ground_truth
  DurationSource source = DurationSource::ground_truth;
  OdeSettings ode;
  int min_dur = 1;
};

inline void validate(const InfillRequest& r) {
  if (r.target_chars.empty()) throw ContractError("infill request: empty target text");
  if (r.prompt_chars.size() != r.prompt_durations.size())
    throw ContractError("infill request: prompt chars and durations differ in length");
  long n = 0;
  for (int d : r.prompt_durations) n += d;
  if (n != r.prompt_frames.rows())
    throw ContractError("infill request: prompt durations do not cover the prompt frames");
}

inline Durations resolve_durations(const InfillRequest& r, const DurationModels& models, Rng& rng) {
  switch (r.source) {
    case DurationSource::ground_truth:
      if (r.target_durations.size() != r.target_chars.size())
        throw ContractError("ground-truth durations missing for the target text");
      return r.target_durations;
    case DurationSource::infill: {
      if (!models.infill) throw ConfigError("duration source 'infill' needs an infill duration checkpoint");
      CharSeq y = r.prompt_chars;
      y.insert(y.end(), r.target_chars.begin(), r.target_chars.end());
      Durations l = r.prompt_durations;
      l.insert(l.end(), r.target_chars.size(), 0);
      std::vector<bool> mask(r.prompt_chars.size(), false);
      mask.insert(mask.end(), r.target_chars.size(), true);
      const auto pred = models.infill->predict(y, l, mask);
      return realize_durations(std::span<const double>(pred).subspan(r.prompt_chars.size()), r.min_dur);
    }
    case DurationSource::prompted: {
      if (!models.prompted)
        throw ConfigError("duration source 'prompted' needs a prompted duration checkpoint");
      const FrameMask none(static_cast<std::size_t>(r.prompt_frames.rows()), false);
      const Mat x_p = sample_prompt(r.prompt_frames, none, models.prompted->config().prompt_frames, rng);
      return realize_durations(models.prompted->predict(x_p, r.target_chars), r.min_dur);
    }
  }
  throw ConfigError("unknown duration source");
}

struct CompletionResult {
  Mat full;       // prompt frames followed by generated frames
  Mat generated;  // generated frames only
  Durations target_durations;
};

inline CompletionResult complete_sentence(AudioModel& model, const InfillRequest& req,
                                          const DurationModels& models, Rng& rng) {
  validate(req);
  CompletionResult res;
  res.target_durations = resolve_durations(req, models, rng);
  long gen_frames = 0;
  for (int d : res.target_durations) gen_frames += d;
  const Eigen::Index np = req.prompt_frames.rows();
  Mat x = Mat::Zero(np + gen_frames, model.config().mel_dim);
  if (np > 0) x.topRows(np) = req.prompt_frames;
  FrameMask mask(static_cast<std::size_t>(np + gen_frames), false);
  for (Eigen::Index i = np; i < np + gen_frames; ++i) mask.bits[static_cast<std::size_t>(i)] = true;
  CharSeq y = req.prompt_chars;
  y.insert(y.end(), req.target_chars.begin(), req.target_chars.end());
  Durations l = req.prompt_durations;
  l.insert(l.end(), res.target_durations.begin(), res.target_durations.end());
  res.full = infill_frames(model, x, mask, durations_to_frame_transcript(y, l), req.ode, rng);
  res.generated = res.full.bottomRows(gen_frames);
  return res;
}

// Splits an utterance at its middle character into a completion request.
inline InfillRequest half_split_request(const UtteranceRecord& u, DurationSource src, const OdeSettings& ode,
                                        int min_dur) {
  require(u.y.size() >= 2, "completion: utterance needs at least 2 characters");
  const std::size_t h = u.y.size() / 2;
  InfillRequest r;
  long np = 0;
  for (std::size_t j = 0; j < h; ++j) np += u.l[j];
  r.prompt_frames = u.x.topRows(np);
  r.prompt_chars.assign(u.y.begin(), u.y.begin() + static_cast<long>(h));
  r.prompt_durations.assign(u.l.begin(), u.l.begin() + static_cast<long>(h));
  r.target_chars.assign(u.y.begin() + static_cast<long>(h), u.y.end());
  r.target_durations.assign(u.l.begin() + static_cast<long>(h), u.l.end());
  r.source = src;
  r.ode = ode;
  r.min_dur = min_dur;
  return r;
}

// ---------------------------------------------------------------------------
// Report

struct UtteranceEval {
  std::string id;
  int speaker = 0;
  DurationSource source = DurationSource::ground_truth;
  std::size_t ref_len = 0;
  std::size_t edits = 0;
  double wer = 0.0;
  double sim_o = 0.0;
  double sim_other = std::nan("");  // Sim-o(prompt, other-speaker reference)
  int generated_frames = 0;
};

struct SourceStats {
  std::size_t n = 0;
  double wer = 0.0;         // mean of per-utterance WER
  double wer_pooled = 0.0;  // total edits / total reference tokens
  double sim_o = 0.0;       // mean Sim-o
};

struct ReportRow {
  std::string dataset;
  std::map<DurationSource, SourceStats> stats;
};

struct EvalReport {
  std::vector<DurationSource> sources;
  std::vector<ReportRow> rows;  // one per dataset
  ReportRow overall;
  std::vector<UtteranceEval> details;
};

inline std::string dataset_name(int speaker) { return "spk" + std::to_string(speaker); }

inline ReportRow aggregate(const std::string& name, const std::vector<const UtteranceEval*>& items,
                           const std::vector<DurationSource>& sources) {
  ReportRow row;
  row.dataset = name;
  for (DurationSource s : sources) {
    SourceStats st;
    std::size_t edits = 0, ref = 0;
    for (const UtteranceEval* e : items) {
      if (e->source != s) continue;
      ++st.n;
      st.wer += e->wer;
      st.sim_o += e->sim_o;
      edits += e->edits;
      ref += e->ref_len;
    }
    if (st.n) {
      st.wer /= static_cast<double>(st.n);
      st.sim_o /= static_cast<double>(st.n);
    }
    st.wer_pooled = ref ? static_cast<double>(edits) / static_cast<double>(ref) : 0.0;
    row.stats[s] = st;
  }
  return row;
}

inline EvalReport build_report(std::vector<UtteranceEval> details, const std::vector<DurationSource>& sources) {
  EvalReport rep;
  rep.sources = sources;
  rep.details = std::move(details);
  std::map<int, std::vector<const UtteranceEval*>> by_speaker;
  std::vector<const UtteranceEval*> all;
  for (const auto& d : rep.details) {
    by_speaker[d.speaker].push_back(&d);
    all.push_back(&d);
  }
  for (const auto& [spk, items] : by_speaker) rep.rows.push_back(aggregate(dataset_name(spk), items, sources));
  rep.overall = aggregate("Overall", all, sources);
  return rep;
}

// Runs the completion protocol over `test` (dropped records are skipped).
inline EvalReport continuous_completion_protocol(const std::vector<UtteranceRecord>& test, const SynthSpec& spec,
                                                 AudioModel& model, const DurationModels& models,
                                                 const EvalConfig& cfg) {
  std::vector<const UtteranceRecord*> items;
  for (const auto& r : test)
    if (usable(r) && r.y.size() >= 4) items.push_back(&r);
  if (cfg.max_utterances > 0 && items.size() > static_cast<std::size_t>(cfg.max_utterances))
    items.resize(static_cast<std::size_t>(cfg.max_utterances));
  std::vector<UtteranceEval> details;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const UtteranceRecord& u = *items[k];
    const UtteranceRecord* other = nullptr;
    for (const auto* o : items)
      if (o->speaker != u.speaker) {
        other = o;
        break;
      }
    for (DurationSource src : cfg.sources) {
      Rng rng(cfg.seed * 1000003ULL + k * 7919ULL + static_cast<std::uint64_t>(src));
      const InfillRequest req = half_split_request(u, src, cfg.ode, cfg.min_dur);
      const CompletionResult res = complete_sentence(model, req, models, rng);
      UtteranceEval e;
      e.id = u.id;
      e.speaker = u.speaker;
      e.source = src;
      e.generated_frames = static_cast<int>(res.generated.rows());
      const Transcription tr = oracle_transcribe(res.generated, spec, u.speaker);
      e.ref_len = req.target_chars.size();
      e.edits = edit_distance(std::span<const int>(req.target_chars), std::span<const int>(tr.chars));
      e.wer = static_cast<double>(e.edits) / static_cast<double>(e.ref_len);
      const RowVec prompt_emb = speaker_embedding(req.prompt_frames);
      e.sim_o = res.generated.rows() >= 2 ? sim_o(prompt_emb, speaker_embedding(res.generated)) : 0.0;
      if (other) {
        const InfillRequest oreq = half_split_request(*other, src, cfg.ode, cfg.min_dur);
        long no = 0;
        for (int d : oreq.target_durations) no += d;
        e.sim_other = sim_o(prompt_emb, speaker_embedding(other->x.bottomRows(no)));
      }
      details.push_back(e);
    }
  }
  return build_report(std::move(details), cfg.sources);
}

inline std::string fmt_num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// CSV: dataset,source,n,wer,wer_pooled,sim_o
inline void write_report_csv(std::ostream& os, const EvalReport& rep) {
  os << "dataset,source,n,wer,wer_pooled,sim_o\n";
  auto emit = [&](const ReportRow& row) {
    for (DurationSource s : rep.sources) {
      const SourceStats& st = row.stats.at(s);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.9g,%.9g,%.9g\n", row.dataset.c_str(), to_string(s).c_str(), st.n,
                    st.wer, st.wer_pooled, st.sim_o);
      os << buf;
    }
  };
  for (const auto& r : rep.rows) emit(r);
  emit(rep.overall);
}

inline void write_details_csv(std::ostream& os, const EvalReport& rep) {
  os << "id,speaker,source,ref_len,edits,wer,sim_o,sim_other,generated_frames\n";
  for (const auto& e : rep.details) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%zu,%zu,%.9g,%.9g,%.9g,%d\n", e.id.c_str(), e.speaker,
                  to_string(e.source).c_str(), e.ref_len, e.edits, e.wer, e.sim_o, e.sim_other, e.generated_frames);
    os << buf;
  }
}

inline EvalReport read_report_csv(std::istream& is) {
  EvalReport rep;
  std::string line;
  if (!std::getline(is, line) || line != "dataset,source,n,wer,wer_pooled,sim_o")
    throw DataError("report: missing or malformed CSV header");
  std::map<std::string, ReportRow> rows;
  std::vector<std::string> order;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) throw DataError("report: malformed row: " + line);
    DurationSource src;
    try {
      src = parse_duration_source(f[1]);
    } catch (const ConfigError&) {
      throw DataError("report: unknown duration source in row: " + line);
    }
    SourceStats st;
    try {
      st.n = std::stoul(f[2]);
      st.wer = std::stod(f[3]);
      st.wer_pooled = std::stod(f[4]);
      st.sim_o = std::stod(f[5]);
    } catch (const std::exception&) {
      throw DataError("report: bad number in row: " + line);
    }
    if (!rows.count(f[0])) {
      order.push_back(f[0]);
      rows[f[0]].dataset = f[0];
    }
    rows[f[0]].stats[src] = st;
    if (std::find(rep.sources.begin(), rep.sources.end(), src) == rep.sources.end()) rep.sources.push_back(src);
  }
  for (const auto& name : order) {
    if (name == "Overall")
      rep.overall = rows[name];
    else
      rep.rows.push_back(rows[name]);
  }
  return rep;
}

// Aligned text tables: WER then Sim-o, one column per duration source.
inline void write_report_table(std::ostream& os, const EvalReport& rep) {
  auto table = [&](const std::string& title, auto value) {
    os << title << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "Dataset");
    os << buf;
    for (DurationSource s : rep.sources) {
      std::snprintf(buf, sizeof buf, " | %10s", column_label(s).c_str());
      os << buf;
    }
    os << "\n";
    auto line = [&](const ReportRow& row) {
      std::snprintf(buf, sizeof buf, "%-10s", row.dataset.c_str());
      os << buf;
      for (DurationSource s : rep.sources) {
        auto it = row.stats.find(s);
        std::snprintf(buf, sizeof buf, " | %10s", it == row.stats.end() ? "-" : fmt_num(value(it->second)).c_str());
        os << buf;
      }
      os << "\n";
    };
    for (const auto& r : rep.rows) line(r);
    line(rep.overall);
    os << "\n";
  };
  table("WER (generated half, oracle transcription)", [](const SourceStats& s) { return s.wer; });
  table("WER pooled (total edits / total reference characters)", [](const SourceStats& s) { return s.wer_pooled; });
  table("Sim-o (prompt vs generated half)", [](const SourceStats& s) { return s.sim_o; });
}

}  // namespace flowfill
