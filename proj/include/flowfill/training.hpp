#pragma once

// Optimisation loop: warmup/decay schedule, AdamW with decoupled weight
// decay, random chunking of long utterances, frame-budget batching, and the
// training loops for the audio model and both duration predictors.

#include "flowfill/audio_model.hpp"
#include "flowfill/corpus.hpp"
#include "flowfill/duration_infill.hpp"
#include "flowfill/duration_prompted.hpp"
#include "flowfill/flow_matching.hpp"
#include "flowfill/masking.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace flowfill {

struct TrainConfig {
  int total_steps = 2000;
  int warmup_steps = 100;
  double peak_lr = 1e-3;
  int batch_frames = 1000;
  int max_frames = 1000;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping

  static TrainConfig paper_audio() {
    TrainConfig c;
    c.total_steps = 750000;
    c.warmup_steps = 5000;
    c.peak_lr = 2e-4;
    c.batch_frames = 256000;
    c.max_frames = 1000;
    return c;
  }
  static TrainConfig paper_duration() {
    TrainConfig c = paper_audio();
    c.total_steps = 200000;
    c.batch_frames = 200000;
    return c;
  }
};

inline void validate(const TrainConfig& c) {
  if (c.total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
  if (c.warmup_steps < 0 || c.warmup_steps >= c.total_steps)
    throw ConfigError("train: need 0 <= warmup_steps < total_steps");
  if (!(c.peak_lr > 0)) throw ConfigError("train: peak_lr must be > 0");
  if (c.batch_frames < 1 || c.max_frames < 1) throw ConfigError("train: frame budgets must be >= 1");
  if (c.weight_decay < 0 || c.clip_norm < 0) throw ConfigError("train: negative weight_decay or clip_norm");
  if (!(0 <= c.beta1 && c.beta1 < 1 && 0 <= c.beta2 && c.beta2 < 1 && c.eps > 0))
    throw ConfigError("train: invalid optimizer constants");
}

// Linear warmup to peak_lr, then linear decay to 0 at total_steps.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw ContractError("lr_at: step outside [0, total_steps]");
  if (step <= cfg.warmup_steps)
    return cfg.warmup_steps == 0 ? cfg.peak_lr
                                 : cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

class AdamW {
 public:
  AdamW(ParamStore& params, const TrainConfig& cfg)
      : params_(params), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps), wd_(cfg.weight_decay) {
    for (const auto& p : params.params()) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    std::size_t i = 0;
    for (auto& p : params_.params()) {
      Mat& m = m_[i];
      Mat& v = v_[i];
      m = b1_ * m + (1.0 - b1_) * p.grad;
      v = b2_ * v + (1.0 - b2_) * p.grad.cwiseAbs2();
      p.value *= 1.0 - lr * wd_;
      p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
      ++i;
    }
  }

  int steps_taken() const { return t_; }

 private:
  ParamStore& params_;
  double b1_, b2_, eps_, wd_;
  int t_ = 0;
  std::deque<Mat> m_, v_;
};

// ---------------------------------------------------------------------------
// Data

// Uniformly placed window of max_frames frames with the characters it
// touches; edge characters keep only their in-window frames.
inline UtteranceRecord chunk_utterance(const UtteranceRecord& rec, int max_frames, Rng& rng) {
  require(max_frames >= 1, "chunk_utterance: max_frames must be >= 1");
  if (rec.frames() <= max_frames) return rec;
  const int n = static_cast<int>(rec.frames());
  const int start = rng.uniform_int(0, n - max_frames);
  const int end = start + max_frames;
  UtteranceRecord out;
  out.id = rec.id;
  out.speaker = rec.speaker;
  out.filter_state = rec.filter_state;
  out.x = rec.x.middleRows(start, max_frames);
  int pos = 0;
  for (std::size_t j = 0; j < rec.y.size(); ++j) {
    const int a = pos, b = pos + rec.l[j];
    pos = b;
    const int lo = std::max(a, start), hi = std::min(b, end);
    if (hi <= lo) continue;
    out.y.push_back(rec.y[j]);
    out.l.push_back(hi - lo);
  }
  return out;
}

// Shuffled epochs; a batch holds whole (chunked) utterances up to
// batch_frames, except that a single oversized utterance forms its own batch.
class Batcher {
 public:
  Batcher(const std::vector<const UtteranceRecord*>& records, int batch_frames, int max_frames, Rng& rng)
      : records_(records), batch_frames_(batch_frames), max_frames_(max_frames), rng_(rng) {
    require(!records_.empty(), "training corpus is empty");
  }

  std::vector<UtteranceRecord> next() {
    std::vector<UtteranceRecord> batch;
    long total = 0;
    for (;;) {
      if (!carry_) carry_ = chunk_utterance(*records_[take_index()], max_frames_, rng_);
      const long len = carry_->frames();
      if (!batch.empty() && total + len > batch_frames_) break;
      total += len;
      batch.push_back(std::move(*carry_));
      carry_.reset();
      if (total >= batch_frames_) break;
    }
    return batch;
  }

 private:
  std::size_t take_index() {
    if (order_.empty()) {
      std::vector<std::size_t> idx(records_.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng_.shuffle(idx);
      order_.assign(idx.begin(), idx.end());
    }
    const std::size_t i = order_.front();
    order_.pop_front();
    return i;
  }

  const std::vector<const UtteranceRecord*>& records_;
  int batch_frames_, max_frames_;
  Rng& rng_;
  std::deque<std::size_t> order_;
  std::optional<UtteranceRecord> carry_;
};

inline std::vector<const UtteranceRecord*> usable_records(const std::vector<UtteranceRecord>& recs) {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : recs)
    if (usable(r)) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------------------
// Loops

struct LossRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double masked_loss = 0.0;
  double ctx_loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> trace;
};

inline void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& trace) {
  os << "step,lr,loss,masked_loss,ctx_loss\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr, r.loss, r.masked_loss,
                  r.ctx_loss);
    os << buf;
  }
}

using ProgressFn = std::function<void(const LossRecord&)>;

namespace detail {

inline void finish_step(ParamStore& params, AdamW& opt, const TrainConfig& cfg, int step,
                        LossRecord& rec, TrainResult& result, const ProgressFn& progress) {
  if (!std::isfinite(rec.loss))
    throw TrainingError("training diverged: non-finite loss at step " + std::to_string(step), step);
  if (cfg.clip_norm > 0) {
    const double gn = params.grad_norm();
    if (gn > cfg.clip_norm) params.scale_grad(cfg.clip_norm / gn);
  }
  rec.lr = lr_at(step, cfg);
  opt.step(rec.lr);
  if (!params.all_finite())
    throw TrainingError("training diverged: non-finite parameters at step " + std::to_string(step), step);
  result.trace.push_back(rec);
  if (progress) progress(rec);
}

}  // namespace detail

// Masked, weighted CFM training of the audio vector field.
inline TrainResult train_audio(const std::vector<UtteranceRecord>& corpus, AudioModel& model,
                               const MaskPolicy& policy, const OTPathConfig& path,
                               const LossWeights& weights, const TrainConfig& cfg,
                               const ProgressFn& progress = {}) {
  validate(cfg);
  validate(policy);
  validate(path);
  const auto recs = usable_records(corpus);
  Rng rng(cfg.seed);
  Batcher batcher(recs, cfg.batch_frames, cfg.max_frames, rng);
  AdamW opt(model.params(), cfg);
  TrainResult result;
  const Eigen::Index feat = model.config().mel_dim;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const auto batch = batcher.next();
    model.params().zero_grad();
    LossRecord rec;
    rec.step = step;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& u : batch) {
      require(u.x.cols() == feat, "train_audio: corpus feature dimension does not match the model");
      const FrameMask mask = sample_mask(static_cast<std::size_t>(u.frames()), policy, rng);
      const double t = rng.uniform();
      const ConditionalSample cs = sample_conditional(u.x, t, path, rng);
      const Mat target = target_field(cs.x_t, u.x, t, path);
      const Mat x_ctx = apply_context(u.x, mask);
      Tape tape;
      Var v = model.forward(tape, cs.x_t, x_ctx, durations_to_frame_transcript(u.y, u.l), t);
      std::vector<double> rw = masked_loss_row_weights(mask, feat, weights);
      for (double& w : rw) w *= inv_b;
      Var loss = ad::weighted_sq_err(v, target, rw);
      tape.backward(loss);
      const MaskedLoss parts = masked_cfm_components(v.value(), target, mask, weights);
      rec.loss += parts.total * inv_b;
      rec.masked_loss += parts.masked * inv_b;
      rec.ctx_loss += parts.context * inv_b;
    }
    detail::finish_step(model.params(), opt, cfg, step, rec, result, progress);
  }
  return result;
}

// Infill-style duration predictor: masks are drawn over characters with the
// same three-way policy as the audio model.
inline TrainResult train_duration_infill(const std::vector<UtteranceRecord>& corpus,
                                         DurationInfillModel& model, const MaskPolicy& policy,
                                         const TrainConfig& cfg, const ProgressFn& progress = {}) {
  validate(cfg);
  validate(policy);
  const auto recs = usable_records(corpus);
  Rng rng(cfg.seed);
  Batcher batcher(recs, cfg.batch_frames, cfg.max_frames, rng);
  AdamW opt(model.params(), cfg);
  TrainResult result;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const auto batch = batcher.next();
    model.params().zero_grad();
    LossRecord rec;
    rec.step = step;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& u : batch) {
      const FrameMask cm = sample_mask(u.y.size(), policy, rng);
      if (cm.none()) continue;
      Tape tape;
      Var pred = model.forward(tape, u.y, u.l, cm.bits);
      Var loss = masked_log_mse(pred, u.l, cm.bits);
      rec.loss += loss.scalar() * inv_b;
      tape.backward(ad::scale(loss, inv_b));
    }
    rec.masked_loss = rec.loss;
    detail::finish_step(model.params(), opt, cfg, step, rec, result, progress);
  }
  return result;
}

// Contiguous masked character span covering span_low..span_high percent of
// the characters, always leaving at least one character on each side.
struct DurationSpanConfig {
  double span_low = 30.0;
  double span_high = 70.0;
  int max_resample = 8;
};

inline void validate(const DurationSpanConfig& c) {
  if (!(0 <= c.span_low && c.span_low <= c.span_high && c.span_high <= 100))
    throw ConfigError("duration span: need 0 <= span_low <= span_high <= 100");
  if (c.max_resample < 1) throw ConfigError("duration span: max_resample must be >= 1");
}

inline std::vector<bool> sample_char_span(std::size_t m, const DurationSpanConfig& c, Rng& rng) {
  require(m >= 2, "sample_char_span: need at least 2 characters");
  const double r = rng.uniform(c.span_low, c.span_high);
  const auto count = std::clamp<long>(std::lround(r * static_cast<double>(m) / 100.0), 1,
                                      static_cast<long>(m) - 1);
  const int start = rng.uniform_int(0, static_cast<int>(m) - static_cast<int>(count));
  std::vector<bool> mask(m, false);
  for (long i = 0; i < count; ++i) mask[static_cast<std::size_t>(start + i)] = true;
  return mask;
}

inline FrameMask frames_from_char_mask(const std::vector<bool>& char_mask, const Durations& l) {
  require(char_mask.size() == l.size(), "frames_from_char_mask: length mismatch");
  FrameMask m;
  for (std::size_t j = 0; j < l.size(); ++j) m.bits.insert(m.bits.end(), static_cast<std::size_t>(l[j]), char_mask[j]);
  return m;
}

template <typename T>
std::vector<T> select(const std::vector<T>& v, const std::vector<bool>& keep) {
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (keep[i]) out.push_back(v[i]);
  return out;
}

// Speaker-prompted predictor: the prompt is cut from the unmasked frames,
// the text is the masked span, and the loss covers every text token.
inline TrainResult train_duration_prompted(const std::vector<UtteranceRecord>& corpus,
                                           PromptedDurationModel& model, const DurationSpanConfig& span,
                                           const TrainConfig& cfg, const ProgressFn& progress = {}) {
  validate(cfg);
  validate(span);
  const auto recs = usable_records(corpus);
  Rng rng(cfg.seed);
  Batcher batcher(recs, cfg.batch_frames, cfg.max_frames, rng);
  AdamW opt(model.params(), cfg);
  TrainResult result;
  const PromptEncoderConfig& mc = model.config();
  for (int step = 1; step <= cfg.total_steps; ++step) {
    const auto batch = batcher.next();
    model.params().zero_grad();
    LossRecord rec;
    rec.step = step;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& u : batch) {
      if (u.y.size() < 2) continue;
      std::vector<bool> cm;
      FrameMask fm;
      for (int attempt = 0; attempt < span.max_resample; ++attempt) {
        cm = sample_char_span(u.y.size(), span, rng);
        fm = frames_from_char_mask(cm, u.l);
        std::size_t longest = 0;
        for (const auto& r : unmasked_runs(fm)) longest = std::max(longest, r.length);
        if (longest >= static_cast<std::size_t>(mc.min_prompt_frames)) break;
      }
      const Mat prompt = sample_prompt(apply_context(u.x, fm), fm, mc.prompt_frames, rng);
      const CharSeq text = select(u.y, cm);
      const Durations target = select(u.l, cm);
      Tape tape;
      Var pred = model.forward(tape, prompt, text);
      Var loss = dur_loss(pred, target);
      rec.loss += loss.scalar() * inv_b;
      tape.backward(ad::scale(loss, inv_b));
    }
    rec.masked_loss = rec.loss;
    detail::finish_step(model.params(), opt, cfg, step, rec, result, progress);
  }
  return result;
}

}  // namespace flowfill
