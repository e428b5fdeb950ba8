// flowfill command-line driver.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
// Failures print one line to stderr: "error code=<CODE> exit=<n>: <message>".

#include "flowfill/checkpoint.hpp"
#include "flowfill/config.hpp"
#include "flowfill/corpus_io.hpp"
#include "flowfill/evaluation.hpp"
#include "flowfill/toy2d.hpp"
#include "flowfill/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace flowfill;

namespace {

constexpr const char* kConfigDirEnv = "FLOWFILL_CONFIG_DIR";
constexpr const char* kDefaultConfigName = "flowfill.json";

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool verbose = false;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Config file resolution: --config as given, else relative to
// $FLOWFILL_CONFIG_DIR; without --config, $FLOWFILL_CONFIG_DIR/flowfill.json
// when present; otherwise built-in defaults.
std::optional<fs::path> locate_config(const std::string& requested) {
  const char* env = std::getenv(kConfigDirEnv);
  if (!requested.empty()) {
    const fs::path p(requested);
    if (fs::exists(p)) return p;
    if (env && p.is_relative() && fs::exists(fs::path(env) / p)) return fs::path(env) / p;
    throw ConfigError("config file not found: " + requested);
  }
  if (env && fs::exists(fs::path(env) / kDefaultConfigName)) return fs::path(env) / kDefaultConfigName;
  return std::nullopt;
}

RunConfig load_config(const CommonOptions& o) {
  RunConfig base;
  if (auto p = locate_config(o.config)) base = parse_json_text(read_file(*p), p->string()).get<RunConfig>();
  json j = base;
  for (const auto& a : o.overrides) apply_override(j, a);
  if (o.seed) j["seed"] = *o.seed;
  return run_config_from_json(j);
}

void prepare_out(const std::string& out, bool force) {
  if (out.empty()) throw ConfigError("--out is required");
  const fs::path p(out);
  if (fs::exists(p)) {
    if (!fs::is_directory(p)) throw ConfigError("output path exists and is not a directory: " + out);
    if (!fs::is_empty(p)) {
      if (!force) throw ConfigError("output directory " + out + " is not empty (use --force to overwrite)");
      fs::remove_all(p);
    }
  }
  fs::create_directories(p);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  os << s;
}

void write_resolved(const fs::path& dir, const RunConfig& c) {
  write_text(dir / "resolved_config.json", json(c).dump(2) + "\n");
}

void write_loss(const fs::path& p, const TrainResult& r) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  write_loss_csv(os, r.trace);
}

ProgressFn progress_printer(bool verbose, int total) {
  if (!verbose) return {};
  const int every = std::max(1, total / 20);
  return [every](const LossRecord& r) {
    if (r.step % every == 0) std::fprintf(stderr, "step %d lr %.3g loss %.6g\n", r.step, r.lr, r.loss);
  };
}

// Model vocabulary and feature width follow the corpus.
void adapt_to_spec(RunConfig& c, const SynthSpec& spec) {
  c.audio_model.vocab = c.dur_infill.vocab = c.dur_prompted.vocab = spec.vocab();
  c.audio_model.mel_dim = c.dur_prompted.mel_dim = spec.mel_dim;
}

std::string text_of(const CharSeq& y, const SynthSpec& spec) { return chars_to_text(y, spec.alphabet); }

// ---------------------------------------------------------------------------

void cmd_synth(const CommonOptions& o) {
  const RunConfig c = load_config(o);
  const SynthSpec spec = make_synth_spec(c.synth, derive_seed(c.seed, "synth_spec"));
  Rng rng(derive_seed(c.seed, "synth_corpus"));
  auto all = synth_corpus(spec, c.synth.num_utterances, c.synth.min_chars, c.synth.max_chars, rng);
  const auto n_test = static_cast<std::size_t>(std::lround(c.synth.test_fraction * static_cast<double>(all.size())));
  if (n_test >= all.size()) throw ConfigError("synth: test_fraction leaves no training utterances");
  std::vector<UtteranceRecord> test(all.end() - static_cast<long>(n_test), all.end());
  all.resize(all.size() - n_test);
  prepare_out(o.out, o.force);
  save_spec(fs::path(o.out) / "spec.json", spec);
  save_split(o.out, "train", all);
  save_split(o.out, "test", test);
  write_resolved(o.out, c);
  long frames = 0;
  for (const auto& r : all) frames += r.x.rows();
  std::printf("train: %zu utterances, %ld frames; test: %zu utterances\n", all.size(), frames, test.size());
}

void cmd_filter(const CommonOptions& o, const std::string& data) {
  const RunConfig c = load_config(o);
  const SynthSpec spec = load_spec(fs::path(data) / "spec.json");
  std::vector<std::pair<std::string, std::vector<UtteranceRecord>>> splits;
  for (const char* s : {"train", "test"}) splits.emplace_back(s, load_split(data, s, spec));
  prepare_out(o.out, o.force);
  std::ostringstream rep;
  rep << "split\tid\twer\tscore\tstate\n";
  std::size_t counts[3] = {0, 0, 0};
  for (auto& [name, recs] : splits) {
    for (auto& r : recs) {
      const FilterOutcome f = filter_decision(r, spec, c.filter);
      r.filter_state = f.state;
      if (usable(r)) r.l = align(r.x, r.y, spec, r.speaker);
      ++counts[static_cast<int>(f.state)];
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f\t%.6f", f.wer, f.score);
      rep << name << '\t' << r.id << '\t' << buf << '\t' << to_string(f.state) << '\n';
    }
    save_split(o.out, name, recs);
  }
  save_spec(fs::path(o.out) / "spec.json", spec);
  write_text(fs::path(o.out) / "filter_report.tsv", rep.str());
  write_resolved(o.out, c);
  std::printf("kept %zu, dropped %zu, restored %zu\n", counts[0], counts[1], counts[2]);
}

void cmd_train_audio(const CommonOptions& o, const std::string& data) {
  RunConfig c = load_config(o);
  const SynthSpec spec = load_spec(fs::path(data) / "spec.json");
  adapt_to_spec(c, spec);
  const auto train = load_split(data, "train", spec);
  if (usable_records(train).empty()) throw DataError("train-audio: no usable training utterances");
  prepare_out(o.out, o.force);
  AudioModel model(c.audio_model, derive_seed(c.seed, "audio_init"));
  const TrainResult r = train_audio(train, model, c.mask, c.path, c.loss_weights, c.train_audio,
                                    progress_printer(o.verbose, c.train_audio.total_steps));
  save_model((fs::path(o.out) / "audio.ckpt").string(), model);
  write_loss(fs::path(o.out) / "loss.csv", r);
  write_resolved(o.out, c);
  std::printf("final loss %.6g after %d steps\n", r.trace.back().loss, c.train_audio.total_steps);
}

void cmd_train_dur(const CommonOptions& o, const std::string& data, const std::string& style) {
  RunConfig c = load_config(o);
  if (style != "infill" && style != "prompted") throw ConfigError("--style must be infill or prompted");
  const SynthSpec spec = load_spec(fs::path(data) / "spec.json");
  adapt_to_spec(c, spec);
  const auto train = load_split(data, "train", spec);
  if (usable_records(train).empty()) throw DataError("train-dur: no usable training utterances");
  prepare_out(o.out, o.force);
  const ProgressFn prog = progress_printer(o.verbose, c.train_dur.total_steps);
  TrainResult r;
  if (style == "infill") {
    DurationInfillModel model(c.dur_infill, derive_seed(c.seed, "dur_infill_init"));
    r = train_duration_infill(train, model, c.mask, c.train_dur, prog);
    save_model((fs::path(o.out) / "dur_infill.ckpt").string(), model);
  } else {
    PromptedDurationModel model(c.dur_prompted, derive_seed(c.seed, "dur_prompted_init"));
    r = train_duration_prompted(train, model, c.duration_span, c.train_dur, prog);
    save_model((fs::path(o.out) / "dur_prompted.ckpt").string(), model);
  }
  write_loss(fs::path(o.out) / "loss.csv", r);
  write_resolved(o.out, c);
  std::printf("final loss %.6g after %d steps\n", r.trace.back().loss, c.train_dur.total_steps);
}

struct LoadedModels {
  std::optional<DurationInfillModel> infill;
  std::optional<PromptedDurationModel> prompted;
  DurationModels view() { return {infill ? &*infill : nullptr, prompted ? &*prompted : nullptr}; }
};

LoadedModels load_duration_models(const std::string& infill_path, const std::string& prompted_path) {
  LoadedModels m;
  if (!infill_path.empty()) m.infill.emplace(load_duration_infill_model(infill_path));
  if (!prompted_path.empty()) m.prompted.emplace(load_duration_prompted_model(prompted_path));
  return m;
}

void check_sources(const std::vector<DurationSource>& sources, const LoadedModels& m) {
  for (DurationSource s : sources) {
    if (s == DurationSource::infill && !m.infill)
      throw ConfigError("duration source 'infill' needs --dur-infill <checkpoint>");
    if (s == DurationSource::prompted && !m.prompted)
      throw ConfigError("duration source 'prompted' needs --dur-prompted <checkpoint>");
  }
}

struct InfillArgs {
  std::string data, audio, dur_infill, dur_prompted, utt, split = "test", source = "ground_truth";
  std::string text, text_from;
};

void cmd_infill(const CommonOptions& o, const InfillArgs& a) {
  const RunConfig c = load_config(o);
  const SynthSpec spec = load_spec(fs::path(a.data) / "spec.json");
  const auto recs = load_split(a.data, a.split, spec);
  const UtteranceRecord& u = find_record(recs, a.utt);
  AudioModel model = load_audio_model(a.audio);
  LoadedModels dm = load_duration_models(a.dur_infill, a.dur_prompted);
  const DurationSource src = parse_duration_source(a.source);
  check_sources({src}, dm);
  if (!a.text.empty() && !a.text_from.empty()) throw ConfigError("use only one of --text and --text-from");

  InfillRequest req;
  const bool cross = !a.text.empty() || !a.text_from.empty();
  if (cross) {
    // Cross-sentence: the whole utterance is the prompt for a new sentence.
    req.prompt_frames = u.x;
    req.prompt_chars = u.y;
    req.prompt_durations = u.l;
    if (!a.text.empty()) {
      const NormalizedText nt = normalize_text(a.text, spec.alphabet);
      if (!nt.accepted) throw DataError("--text rejected: " + nt.reason);
      req.target_chars = nt.chars;
    } else {
      req.target_chars = find_record(recs, a.text_from).y;
    }
    req.target_durations = speaker_durations(spec, u.speaker, req.target_chars);
    req.source = src;
    req.ode = c.eval.ode;
    req.min_dur = c.eval.min_dur;
  } else {
    req = half_split_request(u, src, c.eval.ode, c.eval.min_dur);
  }
  prepare_out(o.out, o.force);
  Rng rng(derive_seed(c.seed, "infill:" + a.utt));
  const CompletionResult res = complete_sentence(model, req, dm.view(), rng);
  save_mel(fs::path(o.out) / "generated.melf", res.generated);
  save_mel(fs::path(o.out) / "full.melf", res.full);
  const Transcription tr = oracle_transcribe(res.generated, spec, u.speaker);
  json j;
  j["utterance"] = u.id;
  j["mode"] = cross ? "cross_sentence" : "continuation";
  j["duration_source"] = to_string(src);
  j["prompt_text"] = text_of(req.prompt_chars, spec);
  j["target_text"] = text_of(req.target_chars, spec);
  j["durations"] = res.target_durations;
  j["generated_frames"] = res.generated.rows();
  j["transcript"] = text_of(tr.chars, spec);
  j["wer"] = wer(req.target_chars, tr.chars);
  if (req.prompt_frames.rows() >= 2 && res.generated.rows() >= 2)
    j["sim_o"] = sim_o(speaker_embedding(req.prompt_frames), speaker_embedding(res.generated));
  write_text(fs::path(o.out) / "result.json", j.dump(2) + "\n");
  write_resolved(o.out, c);
  std::printf("%s -> \"%s\" (wer %.4f)\n", u.id.c_str(), j["transcript"].get<std::string>().c_str(),
              j["wer"].get<double>());
}

std::vector<DurationSource> parse_sources(const std::string& list) {
  std::vector<DurationSource> out;
  std::stringstream ss(list);
  std::string s;
  while (std::getline(ss, s, ','))
    if (!s.empty()) out.push_back(parse_duration_source(s));
  if (out.empty()) throw ConfigError("--duration-source: empty list");
  return out;
}

void cmd_eval(const CommonOptions& o, const InfillArgs& a) {
  RunConfig c = load_config(o);
  if (!a.source.empty()) c.eval.sources = parse_sources(a.source);
  const SynthSpec spec = load_spec(fs::path(a.data) / "spec.json");
  const auto test = load_split(a.data, a.split, spec);
  AudioModel model = load_audio_model(a.audio);
  LoadedModels dm = load_duration_models(a.dur_infill, a.dur_prompted);
  check_sources(c.eval.sources, dm);
  prepare_out(o.out, o.force);
  const EvalReport rep = continuous_completion_protocol(test, spec, model, dm.view(), c.eval);
  std::ostringstream csv, details, table;
  write_report_csv(csv, rep);
  write_details_csv(details, rep);
  write_report_table(table, rep);
  write_text(fs::path(o.out) / "report.csv", csv.str());
  write_text(fs::path(o.out) / "details.csv", details.str());
  write_text(fs::path(o.out) / "report.txt", table.str());
  write_resolved(o.out, c);
  std::cout << table.str();
}

void cmd_toy2d(const CommonOptions& o) {
  const RunConfig c = load_config(o);
  prepare_out(o.out, o.force);
  Toy2dField field(c.toy2d, derive_seed(c.seed, "toy2d_init"));
  const TrainResult r = train_toy2d(field, progress_printer(o.verbose, c.toy2d.steps));
  Rng rng(derive_seed(c.seed, "toy2d_sample"));
  const Mat s = sample_toy2d(field, c.toy2d.samples, rng);
  const Toy2dStats st = mixture_stats(s, c.toy2d);
  std::ostringstream os;
  os << "x,y\n";
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", s(i, 0), s(i, 1));
    os << buf;
  }
  write_text(fs::path(o.out) / "samples.csv", os.str());
  json m;
  m["within_3sigma"] = st.within_3sigma;
  m["occupancy"] = st.occupancy;
  json means = json::array();
  for (std::size_t k = 0; k < st.mode_means.size(); ++k) {
    const double tx = c.toy2d.means[k][0], ty = c.toy2d.means[k][1];
    const double ex = st.mode_means[k](0) - tx, ey = st.mode_means[k](1) - ty;
    means.push_back({{"target", {tx, ty}},
                     {"sample", {st.mode_means[k](0), st.mode_means[k](1)}},
                     {"relative_error", std::sqrt(ex * ex + ey * ey) / std::max(1e-12, std::hypot(tx, ty))}});
  }
  m["modes"] = means;
  write_text(fs::path(o.out) / "moments.json", m.dump(2) + "\n");
  write_loss(fs::path(o.out) / "loss.csv", r);
  save_checkpoint((fs::path(o.out) / "toy2d.ckpt").string(), ModelKind::toy2d, json(c.toy2d), field.params());
  write_resolved(o.out, c);
  std::printf("within 3 sigma %.4f, occupancy", st.within_3sigma);
  for (double v : st.occupancy) std::printf(" %.4f", v);
  std::printf("\n");
}

void cmd_report(const std::string& in, const std::string& out, bool force) {
  std::ifstream is(in);
  if (!is) throw DataError("cannot open report " + in);
  const EvalReport rep = read_report_csv(is);
  std::ostringstream table;
  write_report_table(table, rep);
  if (out.empty()) {
    std::cout << table.str();
    return;
  }
  if (fs::exists(out) && !force) throw ConfigError(out + " exists (use --force to overwrite)");
  write_text(out, table.str());
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 4;
  return 3;
}

int fail(const char* code, int exit, const std::string& msg) {
  std::string m = msg;
  for (char& ch : m)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::fprintf(stderr, "error code=%s exit=%d: %s\n", code, exit, m.c_str());
  return exit;
}

void add_common(CLI::App* sub, CommonOptions& o, bool with_out = true) {
  sub->add_option("--config", o.config, "JSON config file (default: $FLOWFILL_CONFIG_DIR/flowfill.json)");
  sub->add_option("--set", o.overrides, "Override a config value, e.g. train_audio.total_steps=100");
  sub->add_option("--seed", o.seed, "Run seed");
  if (with_out) sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_flag("--force", o.force, "Replace a non-empty output directory");
  sub->add_flag("-v,--verbose", o.verbose, "Print training progress to stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowfill: flow-matching speech infilling on synthetic corpora"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string data, style, report_in, report_out;
  InfillArgs ia;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic corpus");
  add_common(synth, o);

  auto* filter = app.add_subcommand("filter", "Transcribe, filter and force-align a corpus");
  add_common(filter, o);
  filter->add_option("--data", data, "Corpus directory")->required();

  auto* ta = app.add_subcommand("train-audio", "Train the audio vector field");
  add_common(ta, o);
  ta->add_option("--data", data, "Corpus directory")->required();

  auto* td = app.add_subcommand("train-dur", "Train a duration predictor");
  add_common(td, o);
  td->add_option("--data", data, "Corpus directory")->required();
  td->add_option("--style", style, "infill or prompted")->required();

  auto add_models = [&](CLI::App* sub) {
    sub->add_option("--data", ia.data, "Corpus directory")->required();
    sub->add_option("--audio", ia.audio, "Audio model checkpoint")->required();
    sub->add_option("--dur-infill", ia.dur_infill, "Infill duration checkpoint");
    sub->add_option("--dur-prompted", ia.dur_prompted, "Prompted duration checkpoint");
    sub->add_option("--split", ia.split, "Manifest split (default test)");
  };

  auto* inf = app.add_subcommand("infill", "Complete one utterance, or speak new text in its voice");
  add_common(inf, o);
  add_models(inf);
  inf->add_option("--utt", ia.utt, "Utterance id")->required();
  inf->add_option("--duration-source", ia.source, "ground_truth, infill or prompted");
  inf->add_option("--text", ia.text, "Cross-sentence mode: text to speak after the whole utterance");
  inf->add_option("--text-from", ia.text_from, "Cross-sentence mode: take the text of this utterance id");

  std::string eval_sources;
  auto* ev = app.add_subcommand("eval", "Run the continuous sentence completion protocol");
  add_common(ev, o);
  add_models(ev);
  ev->add_option("--duration-source", eval_sources, "Comma-separated sources (default from config)");

  auto* toy = app.add_subcommand("toy2d", "Flow matching on a 2-D Gaussian mixture");
  add_common(toy, o);

  bool report_force = false;
  auto* rp = app.add_subcommand("report", "Render an evaluation report CSV as text tables");
  rp->add_option("--in", report_in, "report.csv")->required();
  rp->add_option("--out", report_out, "Write to this file instead of stdout");
  rp->add_flag("--force", report_force, "Overwrite --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return fail("USAGE", 2, e.what());
  }

  try {
    if (*synth) cmd_synth(o);
    else if (*filter) cmd_filter(o, data);
    else if (*ta) cmd_train_audio(o, data);
    else if (*td) cmd_train_dur(o, data, style);
    else if (*inf) cmd_infill(o, ia);
    else if (*ev) {
      ia.source = eval_sources;
      cmd_eval(o, ia);
    } else if (*toy) cmd_toy2d(o);
    else if (*rp) cmd_report(report_in, report_out, report_force);
  } catch (const Error& e) {
    return fail(e.code(), exit_code_for(e), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("IO", 3, e.what());
  } catch (const std::exception& e) {
    return fail("INTERNAL", 3, e.what());
  }
  return 0;
}
