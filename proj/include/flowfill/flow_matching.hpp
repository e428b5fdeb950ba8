#pragma once

// Optimal-transport conditional flow matching:
//   p_t(x | x1) = N(t x1, (1 - (1 - sigma_min) t)^2 I)
//   u_t(x | x1) = (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t)
// plus the regression losses and a fixed-grid ODE integrator for sampling.

#include "flowfill/core.hpp"
#include "flowfill/masking.hpp"

#include <functional>
#include <string>
#include <vector>

namespace flowfill {

struct OTPathConfig {
  double sigma_min = 1e-5;
};

inline void validate(const OTPathConfig& c) {
  if (!(c.sigma_min >= 0.0 && c.sigma_min < 1.0))
    throw ConfigError("ot path: sigma_min must lie in [0, 1)");
}

inline double path_std(double t, const OTPathConfig& cfg) {
  return 1.0 - (1.0 - cfg.sigma_min) * t;
}

inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("flow time t=" + std::to_string(t) + " outside [0, 1]");
}

// psi_t(x0) = (1 - (1 - sigma_min) t) x0 + t x1
inline Mat path_point(const Mat& x0, const Mat& x1, double t, const OTPathConfig& cfg) {
  check_time(t);
  return path_std(t, cfg) * x0 + t * x1;
}

struct ConditionalSample {
  Mat x_t;
  Mat x0;
};

inline ConditionalSample sample_conditional(const Mat& x1, double t, const OTPathConfig& cfg,
                                            Rng& rng) {
  check_time(t);
  Mat x0 = rng.normal_matrix(x1.rows(), x1.cols());
  Mat xt = path_point(x0, x1, t, cfg);
  return {std::move(xt), std::move(x0)};
}

inline Mat target_field(const Mat& x, const Mat& x1, double t, const OTPathConfig& cfg) {
  if (x.rows() != x1.rows() || x.cols() != x1.cols())
    throw ContractError("target_field: shape mismatch");
  const double denom = path_std(t, cfg);
  if (!(denom > 0.0)) throw DomainError("target_field: 1 - (1 - sigma_min) t must be > 0");
  return (x1 - (1.0 - cfg.sigma_min) * x) / denom;
}

inline double cfm_loss(const Mat& v_pred, const Mat& u_target) {
  if (v_pred.rows() != u_target.rows() || v_pred.cols() != u_target.cols())
    throw ContractError("cfm_loss: shape mismatch");
  if (v_pred.size() == 0) return 0.0;
  return (v_pred - u_target).squaredNorm() / static_cast<double>(v_pred.size());
}

struct LossWeights {
  double masked = 0.9;
  double context = 0.1;
};

struct MaskedLoss {
  double total = 0.0;
  double masked = 0.0;   // mean squared error over masked frames
  double context = 0.0;  // mean squared error over context frames
};

inline MaskedLoss masked_cfm_components(const Mat& v_pred, const Mat& u_target,
                                        const FrameMask& mask, const LossWeights& w) {
  if (v_pred.rows() != u_target.rows() || v_pred.cols() != u_target.cols())
    throw ContractError("masked_audio_cfm_loss: shape mismatch");
  if (mask.size() != static_cast<std::size_t>(v_pred.rows()))
    throw ContractError("masked_audio_cfm_loss: mask length mismatch");
  if (w.masked < 0 || w.context < 0) throw ContractError("masked_audio_cfm_loss: negative weight");
  double sm = 0, sc = 0;
  std::size_t nm = 0, nc = 0;
  for (Eigen::Index i = 0; i < v_pred.rows(); ++i) {
    const double e = (v_pred.row(i) - u_target.row(i)).squaredNorm();
    if (mask[static_cast<std::size_t>(i)]) {
      sm += e;
      ++nm;
    } else {
      sc += e;
      ++nc;
    }
  }
  const double f = static_cast<double>(v_pred.cols());
  MaskedLoss out;
  out.masked = nm ? sm / (static_cast<double>(nm) * f) : 0.0;
  out.context = nc ? sc / (static_cast<double>(nc) * f) : 0.0;
  out.total = w.masked * out.masked + w.context * out.context;
  return out;
}

inline double masked_audio_cfm_loss(const Mat& v_pred, const Mat& u_target, const FrameMask& mask,
                                    double w_mask = 0.9, double w_ctx = 0.1) {
  return masked_cfm_components(v_pred, u_target, mask, {w_mask, w_ctx}).total;
}

// Per-row weights such that sum_i w_i ||v_i - u_i||^2 equals the masked loss.
inline std::vector<double> masked_loss_row_weights(const FrameMask& mask, Eigen::Index feat_dim,
                                                   const LossWeights& w) {
  const std::size_t nm = mask.count(), nc = mask.size() - nm;
  const double f = static_cast<double>(feat_dim);
  std::vector<double> rw(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    rw[i] = mask[i] ? w.masked / (static_cast<double>(nm) * f)
                    : w.context / (static_cast<double>(nc) * f);
  return rw;
}

enum class OdeMethod { euler, midpoint };

inline OdeMethod parse_ode_method(const std::string& s) {
  if (s == "euler") return OdeMethod::euler;
  if (s == "midpoint") return OdeMethod::midpoint;
  throw ConfigError("unknown ODE method: " + s);
}
inline std::string to_string(OdeMethod m) { return m == OdeMethod::euler ? "euler" : "midpoint"; }

using VectorField = std::function<Mat(const Mat& x, double t)>;

// Solves dx/dt = field(x, t) from t = 0 to t = 1 on a uniform grid.
inline Mat integrate_flow(const VectorField& field, const Mat& x0, int steps,
                          OdeMethod method = OdeMethod::midpoint) {
  if (steps < 1) throw ContractError("integrate_flow: steps must be >= 1");
  const double h = 1.0 / steps;
  Mat x = x0;
  auto eval = [&](const Mat& at, double t, int step) {
    Mat v = field(at, t);
    if (v.rows() != x.rows() || v.cols() != x.cols())
      throw ContractError("integrate_flow: field returned wrong shape");
    if (!v.allFinite())
      throw IntegrationError("integrate_flow: non-finite field value at step " + std::to_string(step),
                             step);
    return v;
  };
  for (int s = 0; s < steps; ++s) {
    const double t = s * h;
    if (method == OdeMethod::euler) {
      x += h * eval(x, t, s);
    } else {
      Mat mid = x + 0.5 * h * eval(x, t, s);
      x += h * eval(mid, t + 0.5 * h, s);
    }
  }
  return x;
}

}  // namespace flowfill
