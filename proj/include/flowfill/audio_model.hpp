#pragma once

// Transformer vector field v_t(x_t, x_ctx, z; theta).
//
// Input assembly: [x_t ; x_ctx ; z_emb] concatenated along features and
// projected to the model width (H_c, N x D), then the sinusoidal time
// embedding h_t is appended as one extra sequence position, giving an
// (N+1) x D sequence. The time position takes rotary index N. The output
// drops the time position and projects each frame back to F features.

#include "flowfill/autodiff.hpp"
#include "flowfill/nn.hpp"

#include <string>

namespace flowfill {

struct AudioModelConfig {
  int layers = 4;
  int heads = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int mel_dim = 16;
  int vocab = 6;
  int char_dim = 32;
  bool rotary = true;
  bool rms_norm = true;
  bool unet_skips = true;
  double time_scale = 1000.0;  // t is multiplied by this before the sinusoid

  static AudioModelConfig paper_scale() {
    AudioModelConfig c;
    c.layers = 12;
    c.heads = 16;
    c.model_dim = 512;
    c.ffn_dim = 512;
    c.mel_dim = 80;
    c.char_dim = 512;
    return c;
  }

  TransformerConfig transformer() const {
    return {layers, heads, model_dim, ffn_dim, rotary, rms_norm, unet_skips};
  }
};

inline void validate(const AudioModelConfig& c) {
  validate(c.transformer());
  if (c.mel_dim < 1 || c.vocab < 1 || c.char_dim < 1)
    throw ConfigError("audio model: mel_dim, vocab and char_dim must be positive");
  if (c.model_dim % 2 != 0) throw ConfigError("audio model: model_dim must be even");
}

inline RowVec time_embedding(double t, int dim, double time_scale = 1000.0) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time_embedding: t outside [0, 1]");
  if (dim % 2 != 0) throw ContractError("time_embedding: dim must be even");
  return sinusoidal(t * time_scale, dim);
}

class AudioModel {
 public:
  AudioModel(const AudioModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
    validate(cfg);
    char_embed_ = params_.add_normal("char_embed", cfg.vocab, cfg.char_dim, 1.0);
    in_proj_ = Linear(params_, "in_proj", 2 * cfg.mel_dim + cfg.char_dim, cfg.model_dim);
    encoder_ = Transformer(params_, "encoder", cfg.transformer());
    out_proj_ = Linear(params_, "out_proj", cfg.model_dim, cfg.mel_dim);
  }

  const AudioModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Var embed_transcript(Tape& t, const FrameTranscript& z) {
    if (z.empty()) return t.constant(Mat(0, cfg_.char_dim));
    for (int id : z)
      if (id < 0 || id >= cfg_.vocab)
        throw ContractError("embed_transcript: char id " + std::to_string(id) + " outside vocabulary");
    return ad::gather_rows(t.param(params_, char_embed_), z);
  }

  // (N+1) x D: projected frames followed by the time position.
  Var assemble_input(Tape& t, const Mat& x_t, const Mat& x_ctx, const Var& z_emb, double time) {
    const Eigen::Index n = x_t.rows();
    if (x_ctx.rows() != n || z_emb.rows() != n)
      throw ContractError("assemble_input: sequence lengths differ (x_t " + std::to_string(n) +
                          ", x_ctx " + std::to_string(x_ctx.rows()) + ", z " +
                          std::to_string(z_emb.rows()) + ")");
    if (x_t.cols() != cfg_.mel_dim || x_ctx.cols() != cfg_.mel_dim)
      throw ContractError("assemble_input: feature dimension mismatch");
    Var feats = ad::concat_cols({t.constant(x_t), t.constant(x_ctx), z_emb});
    Var hc = in_proj_(t, params_, feats);
    Var ht = t.constant(time_embedding(time, cfg_.model_dim, cfg_.time_scale));
    return ad::concat_rows({hc, ht});
  }

  // N x F vector field.
  Var forward(Tape& t, const Mat& x_t, const Mat& x_ctx, const FrameTranscript& z, double time) {
    require(static_cast<Eigen::Index>(z.size()) == x_t.rows(),
            "forward_vector_field: transcript length != frame count");
    Var h = assemble_input(t, x_t, x_ctx, embed_transcript(t, z), time);
    const auto n = static_cast<std::size_t>(x_t.rows());
    std::vector<int> pos = iota_positions(n + 1);
    h = encoder_(t, params_, h, pos, Mat(), "audio model");
    Var v = out_proj_(t, params_, ad::slice_rows(h, 0, x_t.rows()));
    check_finite(v, "audio model output");
    return v;
  }

  Mat predict(const Mat& x_t, const Mat& x_ctx, const FrameTranscript& z, double time) {
    Tape t(false);
    return forward(t, x_t, x_ctx, z, time).value();
  }

  // Scalar count of the U-Net recombination projections.
  std::size_t skip_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_.params())
      if (p.name.find(".skip.") != std::string::npos) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 private:
  AudioModelConfig cfg_;
  ParamStore params_;
  std::size_t char_embed_ = 0;
  Linear in_proj_;
  Transformer encoder_;
  Linear out_proj_;
};

}  // namespace flowfill
