#pragma once

// Objective metrics: word error rate, speaker embedding and Sim-o, and the
// rounding of predicted log durations to frame counts.

#include "flowfill/core.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <span>
#include <vector>

namespace flowfill {

// Unit-cost Levenshtein distance.
template <typename T>
std::size_t edit_distance(std::span<const T> ref, std::span<const T> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

template <typename T>
double wer(std::span<const T> ref, std::span<const T> hyp) {
  if (ref.empty()) throw ContractError("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

inline double wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return wer(std::span<const int>(ref), std::span<const int>(hyp));
}

// [mean ; std ; mean |x_{i+1} - x_i|] per feature, L2-normalised (3F values).
inline RowVec speaker_embedding(const Mat& x) {
  if (x.rows() < 2) throw ContractError("speaker_embedding: need at least 2 frames");
  const Eigen::Index f = x.cols();
  const double n = static_cast<double>(x.rows());
  RowVec mean = x.colwise().mean();
  RowVec sd = ((x.rowwise() - mean).array().square().colwise().sum() / n).sqrt().matrix();
  RowVec delta = (x.bottomRows(x.rows() - 1) - x.topRows(x.rows() - 1)).cwiseAbs().colwise().mean();
  RowVec e(3 * f);
  e << mean, sd, delta;
  const double norm = e.norm();
  if (norm > 0.0) e /= norm;
  return e;
}

inline double sim_o(const RowVec& a, const RowVec& b) {
  if (a.size() != b.size()) throw ContractError("sim_o: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ContractError("sim_o: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// round(exp(pred)) with ties to even, clamped below at min_dur. Values
// within 1e-9 of a half-integer count as ties, so exp(ln 2.5) rounds to 2.
inline Durations realize_durations(std::span<const double> pred_log, int min_dur = 1) {
  Durations out(pred_log.size());
  for (std::size_t i = 0; i < pred_log.size(); ++i) {
    if (!std::isfinite(pred_log[i])) throw NumericError("realize_durations: non-finite log duration");
    const double v = std::exp(std::min(pred_log[i], 20.0));
    const double fl = std::floor(v);
    double r;
    if (std::abs(v - fl - 0.5) < 1e-9)
      r = std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
    else
      r = std::round(v);
    out[i] = std::max(min_dur, static_cast<int>(r));
  }
  return out;
}

}  // namespace flowfill
