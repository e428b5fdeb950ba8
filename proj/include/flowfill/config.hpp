#pragma once

// JSON (de)serialization of every configuration struct. Reading is strict:
// unknown keys and wrong types raise ConfigError naming the offending path.
// Missing keys keep their defaults.

#include "flowfill/audio_model.hpp"
#include "flowfill/corpus.hpp"
#include "flowfill/duration_infill.hpp"
#include "flowfill/duration_prompted.hpp"
#include "flowfill/evaluation.hpp"
#include "flowfill/flow_matching.hpp"
#include "flowfill/masking.hpp"
#include "flowfill/toy2d.hpp"
#include "flowfill/training.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace flowfill {

using json = nlohmann::ordered_json;

namespace detail {

class StrictReader {
 public:
  StrictReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }
  ~StrictReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }
  StrictReader(const StrictReader&) = delete;
  StrictReader& operator=(const StrictReader&) = delete;

  template <typename T>
  StrictReader& operator()(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void to_json(json& j, const OdeMethod& m) { j = to_string(m); }
inline void from_json(const json& j, OdeMethod& m) { m = parse_ode_method(j.get<std::string>()); }
inline void to_json(json& j, const DurationSource& s) { j = to_string(s); }
inline void from_json(const json& j, DurationSource& s) { s = parse_duration_source(j.get<std::string>()); }

inline void to_json(json& j, const SpeakerConfig& c) { j = json{{"stretch", c.stretch}}; }
inline void from_json(const json& j, SpeakerConfig& c) { detail::StrictReader(j, "speaker")("stretch", c.stretch); }

inline void to_json(json& j, const SynthConfig& c) {
  j = json{{"alphabet", c.alphabet},       {"mel_dim", c.mel_dim},
           {"noise_std", c.noise_std},     {"prototype_scale", c.prototype_scale},
           {"offset_scale", c.offset_scale}, {"frame_rate", c.frame_rate},
           {"speakers", c.speakers},       {"base_durations", c.base_durations},
           {"num_utterances", c.num_utterances}, {"min_chars", c.min_chars},
           {"max_chars", c.max_chars},     {"test_fraction", c.test_fraction}};
}
inline void from_json(const json& j, SynthConfig& c) {
  detail::StrictReader(j, "synth")("alphabet", c.alphabet)("mel_dim", c.mel_dim)("noise_std", c.noise_std)(
      "prototype_scale", c.prototype_scale)("offset_scale", c.offset_scale)("frame_rate", c.frame_rate)(
      "speakers", c.speakers)("base_durations", c.base_durations)("num_utterances", c.num_utterances)(
      "min_chars", c.min_chars)("max_chars", c.max_chars)("test_fraction", c.test_fraction);
}

inline void to_json(json& j, const FilterThresholds& c) { j = json{{"wer", c.wer}, {"ctc", c.ctc}}; }
inline void from_json(const json& j, FilterThresholds& c) {
  detail::StrictReader(j, "filter")("wer", c.wer)("ctc", c.ctc);
}

inline void to_json(json& j, const MaskPolicy& c) {
  j = json{{"p_random", c.p_random}, {"p_full", c.p_full}, {"p_none", c.p_none},
           {"r_low", c.r_low},       {"r_high", c.r_high}, {"scattered", c.scattered}};
}
inline void from_json(const json& j, MaskPolicy& c) {
  detail::StrictReader(j, "mask")("p_random", c.p_random)("p_full", c.p_full)("p_none", c.p_none)(
      "r_low", c.r_low)("r_high", c.r_high)("scattered", c.scattered);
}

inline void to_json(json& j, const OTPathConfig& c) { j = json{{"sigma_min", c.sigma_min}}; }
inline void from_json(const json& j, OTPathConfig& c) { detail::StrictReader(j, "path")("sigma_min", c.sigma_min); }

inline void to_json(json& j, const LossWeights& c) { j = json{{"masked", c.masked}, {"context", c.context}}; }
inline void from_json(const json& j, LossWeights& c) {
  detail::StrictReader(j, "loss_weights")("masked", c.masked)("context", c.context);
}

inline void to_json(json& j, const AudioModelConfig& c) {
  j = json{{"layers", c.layers},     {"heads", c.heads},         {"model_dim", c.model_dim},
           {"ffn_dim", c.ffn_dim},   {"mel_dim", c.mel_dim},     {"vocab", c.vocab},
           {"char_dim", c.char_dim}, {"rotary", c.rotary},       {"rms_norm", c.rms_norm},
           {"unet_skips", c.unet_skips}, {"time_scale", c.time_scale}};
}
inline void from_json(const json& j, AudioModelConfig& c) {
  detail::StrictReader(j, "audio_model")("layers", c.layers)("heads", c.heads)("model_dim", c.model_dim)(
      "ffn_dim", c.ffn_dim)("mel_dim", c.mel_dim)("vocab", c.vocab)("char_dim", c.char_dim)("rotary", c.rotary)(
      "rms_norm", c.rms_norm)("unet_skips", c.unet_skips)("time_scale", c.time_scale);
}

inline void to_json(json& j, const DurInfillConfig& c) {
  j = json{{"layers", c.layers},           {"heads", c.heads},         {"model_dim", c.model_dim},
           {"ffn_dim", c.ffn_dim},         {"conv_layers", c.conv_layers}, {"conv_kernel", c.conv_kernel},
           {"vocab", c.vocab},             {"embed_dim", c.embed_dim}, {"max_duration", c.max_duration},
           {"rotary", c.rotary},           {"rms_norm", c.rms_norm},   {"unet_skips", c.unet_skips}};
}
inline void from_json(const json& j, DurInfillConfig& c) {
  detail::StrictReader(j, "dur_infill")("layers", c.layers)("heads", c.heads)("model_dim", c.model_dim)(
      "ffn_dim", c.ffn_dim)("conv_layers", c.conv_layers)("conv_kernel", c.conv_kernel)("vocab", c.vocab)(
      "embed_dim", c.embed_dim)("max_duration", c.max_duration)("rotary", c.rotary)("rms_norm", c.rms_norm)(
      "unet_skips", c.unet_skips);
}

inline void to_json(json& j, const PromptEncoderConfig& c) {
  j = json{{"layers", c.layers},
           {"heads", c.heads},
           {"model_dim", c.model_dim},
           {"ffn_dim", c.ffn_dim},
           {"prenet_layers", c.prenet_layers},
           {"prenet_kernel", c.prenet_kernel},
           {"head_dim", c.head_dim},
           {"mel_dim", c.mel_dim},
           {"vocab", c.vocab},
           {"prompt_frames", c.prompt_frames},
           {"min_prompt_frames", c.min_prompt_frames},
           {"rms_norm", c.rms_norm},
           {"unet_skips", c.unet_skips},
           {"text_to_prompt_only", c.text_to_prompt_only},
           {"conv_head", c.conv_head}};
}
inline void from_json(const json& j, PromptEncoderConfig& c) {
  detail::StrictReader(j, "dur_prompted")("layers", c.layers)("heads", c.heads)("model_dim", c.model_dim)(
      "ffn_dim", c.ffn_dim)("prenet_layers", c.prenet_layers)("prenet_kernel", c.prenet_kernel)(
      "head_dim", c.head_dim)("mel_dim", c.mel_dim)("vocab", c.vocab)("prompt_frames", c.prompt_frames)(
      "min_prompt_frames", c.min_prompt_frames)("rms_norm", c.rms_norm)("unet_skips", c.unet_skips)(
      "text_to_prompt_only", c.text_to_prompt_only)("conv_head", c.conv_head);
}

inline void to_json(json& j, const DurationSpanConfig& c) {
  j = json{{"span_low", c.span_low}, {"span_high", c.span_high}, {"max_resample", c.max_resample}};
}
inline void from_json(const json& j, DurationSpanConfig& c) {
  detail::StrictReader(j, "duration_span")("span_low", c.span_low)("span_high", c.span_high)(
      "max_resample", c.max_resample);
}

// The seed is derived from the run seed and is not part of the section.
inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"total_steps", c.total_steps}, {"warmup_steps", c.warmup_steps}, {"peak_lr", c.peak_lr},
           {"batch_frames", c.batch_frames}, {"max_frames", c.max_frames},   {"weight_decay", c.weight_decay},
           {"beta1", c.beta1},             {"beta2", c.beta2},               {"eps", c.eps},
           {"clip_norm", c.clip_norm}};
}
inline void from_json(const json& j, TrainConfig& c) {
  detail::StrictReader(j, "train")("total_steps", c.total_steps)("warmup_steps", c.warmup_steps)(
      "peak_lr", c.peak_lr)("batch_frames", c.batch_frames)("max_frames", c.max_frames)(
      "weight_decay", c.weight_decay)("beta1", c.beta1)("beta2", c.beta2)("eps", c.eps)("clip_norm", c.clip_norm);
}

inline void to_json(json& j, const EvalConfig& c) {
  j = json{{"ode_steps", c.ode.steps},
           {"ode_method", c.ode.method},
           {"min_dur", c.min_dur},
           {"sources", c.sources},
           {"max_utterances", c.max_utterances}};
}
inline void from_json(const json& j, EvalConfig& c) {
  detail::StrictReader(j, "eval")("ode_steps", c.ode.steps)("ode_method", c.ode.method)("min_dur", c.min_dur)(
      "sources", c.sources)("max_utterances", c.max_utterances);
}

inline void validate(const EvalConfig& c) {
  if (c.ode.steps < 1) throw ConfigError("eval: ode_steps must be >= 1");
  if (c.min_dur < 1) throw ConfigError("eval: min_dur must be >= 1");
  if (c.sources.empty()) throw ConfigError("eval: at least one duration source required");
  if (c.max_utterances < 0) throw ConfigError("eval: max_utterances must be >= 0");
}

inline void to_json(json& j, const Toy2dConfig& c) {
  j = json{{"means", c.means},       {"mode_std", c.mode_std},   {"hidden", c.hidden},
           {"time_dim", c.time_dim}, {"time_scale", c.time_scale}, {"steps", c.steps},
           {"batch", c.batch},       {"peak_lr", c.peak_lr},     {"warmup", c.warmup},
           {"samples", c.samples},   {"ode_steps", c.ode_steps}, {"ode_method", c.ode_method},
           {"sigma_min", c.sigma_min}};
}
inline void from_json(const json& j, Toy2dConfig& c) {
  detail::StrictReader(j, "toy2d")("means", c.means)("mode_std", c.mode_std)("hidden", c.hidden)(
      "time_dim", c.time_dim)("time_scale", c.time_scale)("steps", c.steps)("batch", c.batch)("peak_lr", c.peak_lr)(
      "warmup", c.warmup)("samples", c.samples)("ode_steps", c.ode_steps)("ode_method", c.ode_method)(
      "sigma_min", c.sigma_min);
}

struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  FilterThresholds filter;
  MaskPolicy mask;
  OTPathConfig path;
  LossWeights loss_weights;
  AudioModelConfig audio_model;
  DurInfillConfig dur_infill;
  PromptEncoderConfig dur_prompted;
  DurationSpanConfig duration_span;
  TrainConfig train_audio;
  TrainConfig train_dur;
  EvalConfig eval;
  Toy2dConfig toy2d;
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"seed", c.seed},
           {"synth", c.synth},
           {"filter", c.filter},
           {"mask", c.mask},
           {"path", c.path},
           {"loss_weights", c.loss_weights},
           {"audio_model", c.audio_model},
           {"dur_infill", c.dur_infill},
           {"dur_prompted", c.dur_prompted},
           {"duration_span", c.duration_span},
           {"train_audio", c.train_audio},
           {"train_dur", c.train_dur},
           {"eval", c.eval},
           {"toy2d", c.toy2d}};
}
inline void from_json(const json& j, RunConfig& c) {
  detail::StrictReader(j, "config")("seed", c.seed)("synth", c.synth)("filter", c.filter)("mask", c.mask)(
      "path", c.path)("loss_weights", c.loss_weights)("audio_model", c.audio_model)("dur_infill", c.dur_infill)(
      "dur_prompted", c.dur_prompted)("duration_span", c.duration_span)("train_audio", c.train_audio)(
      "train_dur", c.train_dur)("eval", c.eval)("toy2d", c.toy2d);
}

// Independent stream per named component.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& component) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : component) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::mt19937_64 mix(seed ^ h);
  return mix();
}

// Fills derived seeds and checks every section.
inline RunConfig resolve(RunConfig c) {
  c.train_audio.seed = derive_seed(c.seed, "train_audio");
  c.train_dur.seed = derive_seed(c.seed, "train_dur");
  c.eval.seed = derive_seed(c.seed, "eval");
  c.toy2d.seed = derive_seed(c.seed, "toy2d");
  validate(c.mask);
  validate(c.path);
  validate(c.audio_model);
  validate(c.dur_infill);
  validate(c.dur_prompted);
  validate(c.duration_span);
  validate(c.train_audio);
  validate(c.train_dur);
  validate(c.eval);
  validate(c.toy2d);
  if (!(c.filter.wer >= 0 && c.filter.ctc >= 0 && c.filter.ctc <= 1))
    throw ConfigError("filter: thresholds must satisfy wer >= 0 and 0 <= ctc <= 1");
  if (!(c.loss_weights.masked >= 0 && c.loss_weights.context >= 0))
    throw ConfigError("loss_weights: weights must be non-negative");
  return c;
}

inline json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c = j.get<RunConfig>();
  return resolve(c);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(parse_json_text(ss.str(), path));
}

// Applies "a.b.c=value" to a JSON document; value is parsed as JSON when
// possible and taken as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path does not name an object: " + path);
    if (i + 1 == parts.size()) {
      if (!node->contains(parts[i])) throw ConfigError("override names an unknown key: " + path);
      (*node)[parts[i]] = value;
    } else {
      auto it = node->find(parts[i]);
      if (it == node->end()) throw ConfigError("override names an unknown key: " + path);
      node = &*it;
    }
  }
}

}  // namespace flowfill
