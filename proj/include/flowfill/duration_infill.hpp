#pragma once

// Infilling duration predictor q(l_mis | y, l_ctx).
//
// Character embeddings and context-duration embeddings are concatenated per
// character, projected to the model width, passed through a residual 1-D
// convolution stack and a transformer, and a scalar head emits one log
// duration per character. Trained by MSE on log durations over masked
// characters.

#include "flowfill/autodiff.hpp"
#include "flowfill/nn.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace flowfill {

struct DurInfillConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 32;
  int ffn_dim = 64;
  int conv_layers = 2;
  int conv_kernel = 3;
  int vocab = 6;
  int embed_dim = 16;
  int max_duration = 64;  // duration ids are clamped to [0, max_duration]; 0 = masked
  bool rotary = true;
  bool rms_norm = true;
  bool unet_skips = true;

  static DurInfillConfig paper_scale() {
    DurInfillConfig c;
    c.layers = 12;
    c.heads = 16;
    c.model_dim = 512;
    c.ffn_dim = 512;
    c.embed_dim = 512;
    return c;
  }

  TransformerConfig transformer() const {
    return {layers, heads, model_dim, ffn_dim, rotary, rms_norm, unet_skips};
  }
};

inline void validate(const DurInfillConfig& c) {
  validate(c.transformer());
  if (c.conv_layers < 0 || c.conv_kernel < 1 || c.conv_kernel % 2 == 0)
    throw ConfigError("duration infill: conv_kernel must be odd and positive");
  if (c.vocab < 1 || c.embed_dim < 1 || c.max_duration < 1)
    throw ConfigError("duration infill: vocab, embed_dim and max_duration must be positive");
}

// Duration ids fed as context: masked characters get 0, others their
// duration clamped to [1, max_duration].
inline std::vector<int> context_duration_ids(const Durations& l, const std::vector<bool>& char_mask,
                                             int max_duration) {
  require(l.size() == char_mask.size(), "context durations: length mismatch");
  std::vector<int> ids(l.size());
  for (std::size_t j = 0; j < l.size(); ++j)
    ids[j] = char_mask[j] ? 0 : std::clamp(l[j], 1, max_duration);
  return ids;
}

// mean over masked positions of (pred - ln target)^2; 0 when nothing is masked.
inline double masked_log_mse(std::span<const double> pred_log, const Durations& target,
                             const std::vector<bool>& char_mask) {
  require(pred_log.size() == target.size() && target.size() == char_mask.size(),
          "masked_log_mse: length mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (!char_mask[j]) continue;
    if (target[j] < 1) throw ContractError("masked_log_mse: masked target duration < 1");
    const double e = pred_log[j] - std::log(static_cast<double>(target[j]));
    s += e * e;
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

// Differentiable form of a per-position weighted log-duration MSE.
inline Var log_duration_loss(const Var& pred_log, const Durations& target,
                             std::span<const double> weights) {
  Mat tgt(static_cast<Eigen::Index>(target.size()), 1);
  for (std::size_t j = 0; j < target.size(); ++j)
    tgt(static_cast<Eigen::Index>(j), 0) =
        weights[j] != 0.0 ? std::log(static_cast<double>(target[j])) : 0.0;
  return ad::weighted_sq_err(pred_log, tgt, weights);
}

inline Var masked_log_mse(const Var& pred_log, const Durations& target,
                          const std::vector<bool>& char_mask) {
  require(static_cast<std::size_t>(pred_log.rows()) == target.size() &&
              target.size() == char_mask.size(),
          "masked_log_mse: length mismatch");
  const auto n = static_cast<double>(std::count(char_mask.begin(), char_mask.end(), true));
  std::vector<double> w(target.size(), 0.0);
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (!char_mask[j]) continue;
    if (target[j] < 1) throw ContractError("masked_log_mse: masked target duration < 1");
    w[j] = 1.0 / n;
  }
  return log_duration_loss(pred_log, target, w);
}

inline std::vector<double> column_to_vector(const Mat& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

class DurationInfillModel {
 public:
  DurationInfillModel(const DurInfillConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
    validate(cfg);
    char_embed_ = params_.add_normal("char_embed", cfg.vocab, cfg.embed_dim, 1.0);
    dur_embed_ = params_.add_normal("dur_embed", cfg.max_duration + 1, cfg.embed_dim, 1.0);
    in_proj_ = Linear(params_, "in_proj", 2 * cfg.embed_dim, cfg.model_dim);
    for (int i = 0; i < cfg.conv_layers; ++i)
      convs_.emplace_back(params_, "conv" + std::to_string(i), cfg.model_dim, cfg.model_dim,
                          cfg.conv_kernel);
    encoder_ = Transformer(params_, "encoder", cfg.transformer());
    head_ = Linear(params_, "head", cfg.model_dim, 1);
  }

  const DurInfillConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // M x (2 * embed_dim): [char embedding ; context-duration embedding].
  Var build_inputs(Tape& t, const CharSeq& y, const Durations& l, const std::vector<bool>& char_mask) {
    if (y.size() != l.size() || y.size() != char_mask.size())
      throw ContractError("build_duration_inputs: y, l and mask lengths differ");
    if (y.empty()) return t.constant(Mat(0, 2 * cfg_.embed_dim));
    for (int c : y)
      if (c < 0 || c >= cfg_.vocab) throw ContractError("build_duration_inputs: char id outside vocabulary");
    const std::vector<int> dur_ids = context_duration_ids(l, char_mask, cfg_.max_duration);
    Var ce = ad::gather_rows(t.param(params_, char_embed_), y);
    Var de = ad::gather_rows(t.param(params_, dur_embed_), dur_ids);
    return ad::concat_cols({ce, de});
  }

  // M x 1 log durations.
  Var forward(Tape& t, const CharSeq& y, const Durations& l, const std::vector<bool>& char_mask) {
    require(!y.empty(), "predict_log_durations_infill: empty character sequence");
    Var h = in_proj_(t, params_, build_inputs(t, y, l, char_mask));
    for (const Conv1d& c : convs_) h = ad::add(h, ad::gelu(c(t, params_, h)));
    const std::vector<int> pos = iota_positions(y.size());
    h = encoder_(t, params_, h, pos, Mat(), "duration infill");
    Var out = head_(t, params_, h);
    check_finite(out, "duration infill output");
    return out;
  }

  std::vector<double> predict(const CharSeq& y, const Durations& l, const std::vector<bool>& char_mask) {
    Tape t(false);
    return column_to_vector(forward(t, y, l, char_mask).value());
  }

 private:
  DurInfillConfig cfg_;
  ParamStore params_;
  std::size_t char_embed_ = 0, dur_embed_ = 0;
  Linear in_proj_;
  std::vector<Conv1d> convs_;
  Transformer encoder_;
  Linear head_;
};

}  // namespace flowfill
