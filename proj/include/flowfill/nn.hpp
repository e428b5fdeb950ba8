#pragma once

// Layers shared by the vector-field model and both duration predictors.

#include "flowfill/autodiff.hpp"

#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace flowfill {

// Sinusoidal encoding of a scalar position, interleaved: [2i] = sin, [2i+1] = cos,
// at frequencies base^(-2i/dim).
inline RowVec sinusoidal(double position, int dim, double base = 10000.0) {
  if (dim <= 0 || dim % 2 != 0) throw ContractError("sinusoidal: dim must be positive and even");
  RowVec out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(base, -2.0 * i / static_cast<double>(dim));
    out(2 * i) = std::sin(position * freq);
    out(2 * i + 1) = std::cos(position * freq);
  }
  return out;
}

inline Mat sinusoidal_table(int length, int dim) {
  Mat m(length, dim);
  for (int i = 0; i < length; ++i) m.row(i) = sinusoidal(static_cast<double>(i), dim);
  return m;
}

inline void check_finite(const Var& v, const std::string& where) {
  if (!v.value().allFinite()) throw NumericError("non-finite activation in " + where);
}

// y = x W + b
struct Linear {
  std::size_t weight = 0, bias = 0;
  bool has_bias = true;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, bool with_bias = true)
      : has_bias(with_bias) {
    weight = ps.add_normal(name + ".weight", in, out, 1.0 / std::sqrt(static_cast<double>(in)));
    if (has_bias) bias = ps.add_normal(name + ".bias", 1, out, 0.0);
  }

  Var operator()(Tape& t, ParamStore& ps, const Var& x) const {
    Var y = ad::matmul(x, t.param(ps, weight));
    if (has_bias) y = ad::add_row(y, t.param(ps, bias));
    return y;
  }
};

struct RmsNorm {
  std::size_t gain = 0;
  bool enabled = true;

  RmsNorm() = default;
  RmsNorm(ParamStore& ps, const std::string& name, int dim, bool on) : enabled(on) {
    if (enabled) gain = ps.add_constant(name + ".gain", 1, dim, 1.0);
  }
  Var operator()(Tape& t, ParamStore& ps, const Var& x) const {
    return enabled ? ad::rms_norm(x, t.param(ps, gain)) : x;
  }
};

// "Same"-padded 1-D convolution along the sequence axis.
struct Conv1d {
  Linear proj;
  int kernel = 3;

  Conv1d() = default;
  Conv1d(ParamStore& ps, const std::string& name, int in, int out, int k)
      : proj(ps, name, in * k, out), kernel(k) {}
  Var operator()(Tape& t, ParamStore& ps, const Var& x) const {
    return proj(t, ps, ad::unfold_rows(x, kernel));
  }
};

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int dim = 64;
  int ffn_dim = 128;
  bool rotary = true;
  bool rms_norm = true;
  bool unet_skips = true;
};

inline void validate(const TransformerConfig& c) {
  if (c.layers < 1 || c.heads < 1 || c.dim < 1 || c.ffn_dim < 1)
    throw ConfigError("transformer: sizes must be positive");
  if (c.dim % c.heads != 0) throw ConfigError("transformer: dim must be divisible by heads");
  if (c.rotary && (c.dim / c.heads) % 2 != 0)
    throw ConfigError("transformer: rotary encoding needs an even head dimension");
  if (c.unet_skips && c.layers % 2 != 0)
    throw ConfigError("transformer: U-Net skips need an even layer count");
}

// Pre-norm transformer encoder with bidirectional multi-head self-attention,
// optional rotary positions, RMS normalisation and U-Net skip pairing:
// the output of layer i < L/2 is concatenated with the input of layer
// L-1-i and linearly projected back to `dim`.
class Transformer {
 public:
  Transformer() = default;
  Transformer(ParamStore& ps, const std::string& name, const TransformerConfig& cfg) : cfg_(cfg) {
    validate(cfg);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string p = name + ".layer" + std::to_string(i);
      Block b;
      if (cfg.unet_skips && i >= cfg.layers / 2)
        b.skip = Linear(ps, p + ".skip", 2 * cfg.dim, cfg.dim);
      b.norm1 = RmsNorm(ps, p + ".norm1", cfg.dim, cfg.rms_norm);
      b.qkv = Linear(ps, p + ".qkv", cfg.dim, 3 * cfg.dim);
      b.out = Linear(ps, p + ".attn_out", cfg.dim, cfg.dim);
      b.norm2 = RmsNorm(ps, p + ".norm2", cfg.dim, cfg.rms_norm);
      b.ff1 = Linear(ps, p + ".ff1", cfg.dim, cfg.ffn_dim);
      b.ff2 = Linear(ps, p + ".ff2", cfg.ffn_dim, cfg.dim);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = RmsNorm(ps, name + ".final_norm", cfg.dim, cfg.rms_norm);
  }

  const TransformerConfig& config() const { return cfg_; }

  // positions: rotary position index per row (ignored without rotary).
  // attn_mask: optional additive (rows x rows) mask, 0 = attend.
  Var operator()(Tape& t, ParamStore& ps, Var h, std::span<const int> positions,
                 const Mat& attn_mask = Mat(), const std::string& where = "transformer") const {
    std::vector<Var> skips;
    const int L = cfg_.layers;
    for (int i = 0; i < L; ++i) {
      const Block& b = blocks_[static_cast<std::size_t>(i)];
      if (b.skip) h = (*b.skip)(t, ps, ad::concat_cols({h, skips[static_cast<std::size_t>(L - 1 - i)]}));
      h = ad::add(h, attention(t, ps, b, b.norm1(t, ps, h), positions, attn_mask));
      Var f = b.norm2(t, ps, h);
      h = ad::add(h, b.ff2(t, ps, ad::gelu(b.ff1(t, ps, f))));
      check_finite(h, where + " layer " + std::to_string(i));
      if (cfg_.unet_skips && i < L / 2) skips.push_back(h);
    }
    return final_norm_(t, ps, h);
  }

 private:
  struct Block {
    std::optional<Linear> skip;
    RmsNorm norm1, norm2;
    Linear qkv, out, ff1, ff2;
  };

  Var attention(Tape& t, ParamStore& ps, const Block& b, const Var& x,
                std::span<const int> positions, const Mat& mask) const {
    const int d = cfg_.dim, nh = cfg_.heads, hd = d / nh;
    Var qkv = b.qkv(t, ps, x);
    Var q = ad::slice_cols(qkv, 0, d);
    Var k = ad::slice_cols(qkv, d, d);
    Var v = ad::slice_cols(qkv, 2 * d, d);
    if (cfg_.rotary) {
      q = ad::rope(q, nh, positions);
      k = ad::rope(k, nh, positions);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(nh));
    for (int h = 0; h < nh; ++h) {
      Var qh = ad::slice_cols(q, h * hd, hd);
      Var kh = ad::slice_cols(k, h * hd, hd);
      Var vh = ad::slice_cols(v, h * hd, hd);
      Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), mask);
      heads.push_back(ad::matmul(p, vh));
    }
    Var o = nh == 1 ? heads[0] : ad::concat_cols(std::span<const Var>(heads));
    return b.out(t, ps, o);
  }

  TransformerConfig cfg_;
  std::vector<Block> blocks_;
  RmsNorm final_norm_;
};

inline std::vector<int> iota_positions(std::size_t n, int start = 0) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), start);
  return p;
}

}  // namespace flowfill
