#pragma once

// Speaker-prompted duration predictor q(l_mis | y, x_ctx).
//
// A short mel prompt x_p cut from the unmasked context and the text are
// projected to a shared width, concatenated along the sequence axis, run
// through a residual convolutional prenet, split back, given absolute
// sinusoidal positions plus a learnable per-segment embedding, and encoded
// by a transformer attending over [prompt ; text]. The text-side states h_c
// go through a small head that emits one log duration per token. Forced
// alignments are only used as training targets.

#include "flowfill/autodiff.hpp"
#include "flowfill/duration_infill.hpp"
#include "flowfill/masking.hpp"
#include "flowfill/nn.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace flowfill {

struct PromptEncoderConfig {
  int layers = 2;
  int heads = 2;
  int model_dim = 32;
  int ffn_dim = 64;
  int prenet_layers = 3;
  int prenet_kernel = 3;
  int head_dim = 32;
  int mel_dim = 16;
  int vocab = 6;
  int prompt_frames = 30;      // 3 s at 10 frames per unit
  int min_prompt_frames = 20;  // 2 s floor
  bool rms_norm = true;
  bool unet_skips = true;
  bool text_to_prompt_only = false;  // text attends only to prompt; prompt only to itself
  bool conv_head = false;            // convolutional head instead of two feed-forward layers

  static PromptEncoderConfig paper_scale() {
    PromptEncoderConfig c;
    c.layers = 12;
    c.heads = 8;
    c.model_dim = 512;
    c.ffn_dim = 512;
    c.head_dim = 512;
    c.mel_dim = 80;
    return c;
  }

  TransformerConfig transformer() const {
    return {layers, heads, model_dim, ffn_dim, false, rms_norm, unet_skips};
  }
};

inline void validate(const PromptEncoderConfig& c) {
  validate(c.transformer());
  if (c.prenet_layers < 0 || c.prenet_kernel < 1 || c.prenet_kernel % 2 == 0)
    throw ConfigError("prompt encoder: prenet_kernel must be odd and positive");
  if (c.model_dim % 2 != 0) throw ConfigError("prompt encoder: model_dim must be even");
  if (c.prompt_frames < 1 || c.min_prompt_frames < 1 || c.min_prompt_frames > c.prompt_frames)
    throw ConfigError("prompt encoder: need 1 <= min_prompt_frames <= prompt_frames");
  if (c.head_dim < 1 || c.mel_dim < 1 || c.vocab < 1)
    throw ConfigError("prompt encoder: head_dim, mel_dim and vocab must be positive");
}

struct FrameRun {
  std::size_t start = 0;
  std::size_t length = 0;
};

inline std::vector<FrameRun> unmasked_runs(const FrameMask& mask) {
  std::vector<FrameRun> runs;
  std::size_t i = 0;
  while (i < mask.size()) {
    if (mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < mask.size() && !mask[j]) ++j;
    runs.push_back({i, j - i});
    i = j;
  }
  return runs;
}

// Start frame of the chosen prompt window, and its length.
inline FrameRun sample_prompt_window(const FrameMask& mask, int prompt_frames, Rng& rng) {
  require(prompt_frames >= 1, "sample_prompt: prompt_frames must be >= 1");
  const auto runs = unmasked_runs(mask);
  if (runs.empty()) throw ContractError("sample_prompt: no unmasked frames to draw a prompt from");
  const auto p = static_cast<std::size_t>(prompt_frames);
  std::size_t total = 0;
  for (const auto& r : runs)
    if (r.length >= p) total += r.length - p + 1;
  if (total == 0) {
    FrameRun best = runs[0];
    for (const auto& r : runs)
      if (r.length > best.length) best = r;
    return best;
  }
  auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(total - 1)));
  for (const auto& r : runs) {
    if (r.length < p) continue;
    const std::size_t n = r.length - p + 1;
    if (k < n) return {r.start + k, p};
    k -= n;
  }
  return {runs[0].start, p};  // unreachable
}

// Contiguous window of prompt_frames unmasked frames, uniformly positioned;
// the longest unmasked run when no run is long enough.
inline Mat sample_prompt(const Mat& x_ctx, const FrameMask& mask, int prompt_frames, Rng& rng) {
  require(static_cast<std::size_t>(x_ctx.rows()) == mask.size(), "sample_prompt: mask length mismatch");
  const FrameRun w = sample_prompt_window(mask, prompt_frames, rng);
  return x_ctx.middleRows(static_cast<Eigen::Index>(w.start), static_cast<Eigen::Index>(w.length));
}

// (1/N) sum_i (pred_i - ln d_i)^2 over all tokens.
inline double dur_loss(std::span<const double> pred_log, const Durations& target) {
  require(pred_log.size() == target.size(), "dur_loss: length mismatch");
  if (target.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 1) throw ContractError("dur_loss: target duration < 1");
    const double e = pred_log[i] - std::log(static_cast<double>(target[i]));
    s += e * e;
  }
  return s / static_cast<double>(target.size());
}

inline Var dur_loss(const Var& pred_log, const Durations& target) {
  require(static_cast<std::size_t>(pred_log.rows()) == target.size(), "dur_loss: length mismatch");
  for (int d : target)
    if (d < 1) throw ContractError("dur_loss: target duration < 1");
  std::vector<double> w(target.size(), 1.0 / static_cast<double>(std::max<std::size_t>(1, target.size())));
  return log_duration_loss(pred_log, target, w);
}

class PromptedDurationModel {
 public:
  PromptedDurationModel(const PromptEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
    validate(cfg);
    mel_proj_ = Linear(params_, "mel_proj", cfg.mel_dim, cfg.model_dim);
    text_embed_ = params_.add_normal("text_embed", cfg.vocab, cfg.model_dim, 1.0);
    for (int i = 0; i < cfg.prenet_layers; ++i)
      prenet_.emplace_back(params_, "prenet" + std::to_string(i), cfg.model_dim, cfg.model_dim,
                           cfg.prenet_kernel);
    segment_ = params_.add_normal("segment_embed", 2, cfg.model_dim, 1.0);
    encoder_ = Transformer(params_, "encoder", cfg.transformer());
    if (cfg.conv_head)
      head_conv_ = Conv1d(params_, "head.conv", cfg.model_dim, cfg.head_dim, 3);
    else
      head1_ = Linear(params_, "head.ff1", cfg.model_dim, cfg.head_dim);
    head2_ = Linear(params_, "head.ff2", cfg.head_dim, 1);
  }

  const PromptEncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // h_c: M x D text-side hidden states.
  Var encode(Tape& t, const Mat& x_p, const CharSeq& y) {
    if (y.empty()) throw ContractError("encode_prompted: empty text");
    if (x_p.rows() < 1) throw ContractError("encode_prompted: empty prompt");
    if (x_p.cols() != cfg_.mel_dim) throw ContractError("encode_prompted: prompt feature dimension mismatch");
    for (int c : y)
      if (c < 0 || c >= cfg_.vocab) throw ContractError("encode_prompted: char id outside vocabulary");
    const Eigen::Index p = x_p.rows(), m = static_cast<Eigen::Index>(y.size());
    Var prompt = mel_proj_(t, params_, t.constant(x_p));
    Var text = ad::gather_rows(t.param(params_, text_embed_), y);
    Var h = ad::concat_rows({prompt, text});
    for (const Conv1d& c : prenet_) h = ad::add(h, ad::gelu(c(t, params_, h)));
    Var seg = t.param(params_, segment_);
    Var hp = ad::add_row(ad::add(ad::slice_rows(h, 0, p), t.constant(sinusoidal_table(static_cast<int>(p), cfg_.model_dim))),
                         ad::slice_rows(seg, 0, 1));
    Var ht = ad::add_row(ad::add(ad::slice_rows(h, p, m), t.constant(sinusoidal_table(static_cast<int>(m), cfg_.model_dim))),
                         ad::slice_rows(seg, 1, 1));
    h = ad::concat_rows({hp, ht});
    Mat mask;
    if (cfg_.text_to_prompt_only) {
      mask = Mat::Zero(p + m, p + m);
      mask.rightCols(m).setConstant(-1e9);
    }
    const std::vector<int> pos = iota_positions(static_cast<std::size_t>(p + m));
    h = encoder_(t, params_, h, pos, mask, "prompt encoder");
    return ad::slice_rows(h, p, m);
  }

  // M x 1 log durations from h_c.
  Var head(Tape& t, const Var& h_c) {
    Var z = cfg_.conv_head ? head_conv_(t, params_, h_c) : head1_(t, params_, h_c);
    Var out = head2_(t, params_, ad::gelu(z));
    check_finite(out, "prompted duration output");
    return out;
  }

  Var forward(Tape& t, const Mat& x_p, const CharSeq& y) { return head(t, encode(t, x_p, y)); }

  std::vector<double> predict(const Mat& x_p, const CharSeq& y) {
    Tape t(false);
    return column_to_vector(forward(t, x_p, y).value());
  }

 private:
  PromptEncoderConfig cfg_;
  ParamStore params_;
  Linear mel_proj_;
  std::size_t text_embed_ = 0, segment_ = 0;
  std::vector<Conv1d> prenet_;
  Transformer encoder_;
  Linear head1_;
  Conv1d head_conv_;
  Linear head2_;
};

}  // namespace flowfill
