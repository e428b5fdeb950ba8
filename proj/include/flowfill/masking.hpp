#pragma once

// Training masks: which frames the audio model must predict, and the
// context / missing views derived from a mask.

#include "flowfill/core.hpp"

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace flowfill {

// true = frame to predict (missing), false = context.
struct FrameMask {
  std::vector<bool> bits;

  FrameMask() = default;
  explicit FrameMask(std::size_t n, bool value = false) : bits(n, value) {}
  explicit FrameMask(std::vector<bool> b) : bits(std::move(b)) {}

  std::size_t size() const { return bits.size(); }
  bool operator[](std::size_t i) const { return bits[i]; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
  }
  bool all() const { return count() == size(); }
  bool none() const { return count() == 0; }
  bool operator==(const FrameMask&) const = default;
};

enum class MaskBranch { random_span, full, none };

// Three-way masking mixture. The random branch masks r% of the frames,
// r ~ U[r_low, r_high].
struct MaskPolicy {
  double p_random = 0.50;
  double p_full = 0.45;
  double p_none = 0.05;
  double r_low = 30.0;
  double r_high = 100.0;
  bool scattered = false;  // random branch picks scattered frames instead of one span
};

inline void validate(const MaskPolicy& p) {
  if (p.p_random < 0 || p.p_full < 0 || p.p_none < 0)
    throw ConfigError("mask policy: negative probability");
  if (std::abs(p.p_random + p.p_full + p.p_none - 1.0) > 1e-9)
    throw ConfigError("mask policy: probabilities must sum to 1");
  if (!(0.0 <= p.r_low && p.r_low <= p.r_high && p.r_high <= 100.0))
    throw ConfigError("mask policy: need 0 <= r_low <= r_high <= 100");
}

inline FrameMask sample_mask_branch(std::size_t n, const MaskPolicy& policy, MaskBranch branch,
                                    Rng& rng) {
  switch (branch) {
    case MaskBranch::full:
      return FrameMask(n, true);
    case MaskBranch::none:
      return FrameMask(n, false);
    case MaskBranch::random_span:
      break;
  }
  const double r = rng.uniform(policy.r_low, policy.r_high);
  const auto count = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::llround(r * static_cast<double>(n) / 100.0)));
  FrameMask m(n, false);
  if (policy.scattered) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    for (std::size_t i = 0; i < count; ++i) m.bits[idx[i]] = true;
  } else {
    const int start = rng.uniform_int(0, static_cast<int>(n - count));
    for (std::size_t i = 0; i < count; ++i) m.bits[static_cast<std::size_t>(start) + i] = true;
  }
  return m;
}

inline std::pair<FrameMask, MaskBranch> sample_mask_with_branch(std::size_t n,
                                                                const MaskPolicy& policy,
                                                                Rng& rng) {
  require(n >= 1, "sample_mask: n must be >= 1");
  const double u = rng.uniform();
  MaskBranch b = MaskBranch::none;
  if (u < policy.p_random)
    b = MaskBranch::random_span;
  else if (u < policy.p_random + policy.p_full)
    b = MaskBranch::full;
  return {sample_mask_branch(n, policy, b, rng), b};
}

inline FrameMask sample_mask(std::size_t n, const MaskPolicy& policy, Rng& rng) {
  return sample_mask_with_branch(n, policy, rng).first;
}

// x_ctx: masked rows zeroed.
inline Mat apply_context(const Mat& x, const FrameMask& mask) {
  if (static_cast<std::size_t>(x.rows()) != mask.size())
    throw ContractError("apply_context: mask length " + std::to_string(mask.size()) +
                        " != frame count " + std::to_string(x.rows()));
  Mat out = x;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.row(static_cast<Eigen::Index>(i)).setZero();
  return out;
}

// Character j is masked iff at least half of its frames are masked.
inline std::vector<bool> char_mask_from_frames(const FrameMask& mask, const Durations& l) {
  long total = 0;
  for (int d : l) total += d;
  if (total != static_cast<long>(mask.size()))
    throw ContractError("char_mask_from_frames: durations sum " + std::to_string(total) +
                        " != mask length " + std::to_string(mask.size()));
  std::vector<bool> out(l.size(), false);
  std::size_t pos = 0;
  for (std::size_t j = 0; j < l.size(); ++j) {
    int masked = 0;
    for (int k = 0; k < l[j]; ++k) masked += mask[pos + static_cast<std::size_t>(k)] ? 1 : 0;
    out[j] = 2 * masked >= l[j];
    pos += static_cast<std::size_t>(l[j]);
  }
  return out;
}

}  // namespace flowfill
