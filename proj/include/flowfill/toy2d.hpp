#pragma once

// Flow matching on a 2-D Gaussian mixture with a small MLP vector field.
// Used as a sanity check of the CFM objective and the ODE sampler in
// isolation from the speech models.

#include "flowfill/autodiff.hpp"
#include "flowfill/flow_matching.hpp"
#include "flowfill/nn.hpp"
#include "flowfill/training.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace flowfill {

struct Toy2dConfig {
  std::vector<std::array<double, 2>> means{{-2.0, 0.0}, {2.0, 0.0}};
  double mode_std = 0.3;
  int hidden = 64;
  int time_dim = 16;
  double time_scale = 100.0;
  int steps = 3000;
  int batch = 256;
  double peak_lr = 3e-3;
  int warmup = 100;
  int samples = 2000;
  int ode_steps = 64;
  OdeMethod ode_method = OdeMethod::midpoint;
  double sigma_min = 1e-5;
  std::uint64_t seed = 0;
};

inline void validate(const Toy2dConfig& c) {
  if (c.means.empty()) throw ConfigError("toy2d: need at least one mode");
  if (!(c.mode_std > 0)) throw ConfigError("toy2d: mode_std must be positive");
  if (c.hidden < 1 || c.time_dim < 2 || c.time_dim % 2 != 0)
    throw ConfigError("toy2d: hidden >= 1 and an even time_dim >= 2 required");
  if (c.steps < 1 || c.batch < 1 || c.samples < 1 || c.ode_steps < 1)
    throw ConfigError("toy2d: steps, batch, samples and ode_steps must be >= 1");
  if (c.warmup < 0 || c.warmup >= c.steps) throw ConfigError("toy2d: need 0 <= warmup < steps");
  validate(OTPathConfig{c.sigma_min});
}

// Equal-weight mixture sample, n x 2.
inline Mat sample_mixture(const Toy2dConfig& c, int n, Rng& rng) {
  Mat x(n, 2);
  const int k = static_cast<int>(c.means.size());
  for (int i = 0; i < n; ++i) {
    const auto& m = c.means[static_cast<std::size_t>(rng.uniform_int(0, k - 1))];
    x(i, 0) = m[0] + c.mode_std * rng.normal();
    x(i, 1) = m[1] + c.mode_std * rng.normal();
  }
  return x;
}

class Toy2dField {
 public:
  Toy2dField(const Toy2dConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
    validate(cfg);
    l1_ = Linear(params_, "ff1", 2 + cfg.time_dim, cfg.hidden);
    l2_ = Linear(params_, "ff2", cfg.hidden, cfg.hidden);
    l3_ = Linear(params_, "ff3", cfg.hidden, 2);
  }

  const Toy2dConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // One time value per row.
  Var forward(Tape& t, const Mat& x, const std::vector<double>& times) {
    require(x.cols() == 2, "toy2d: input must have 2 columns");
    require(static_cast<std::size_t>(x.rows()) == times.size(), "toy2d: one time per row required");
    Mat te(x.rows(), cfg_.time_dim);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      te.row(i) = sinusoidal(times[static_cast<std::size_t>(i)] * cfg_.time_scale, cfg_.time_dim);
    Mat in(x.rows(), 2 + cfg_.time_dim);
    in << x, te;
    Var h = ad::gelu(l1_(t, params_, t.constant(in)));
    h = ad::gelu(l2_(t, params_, h));
    Var v = l3_(t, params_, h);
    check_finite(v, "toy2d field");
    return v;
  }

  Mat predict(const Mat& x, double time) {
    Tape t(false);
    return forward(t, x, std::vector<double>(static_cast<std::size_t>(x.rows()), time)).value();
  }

 private:
  Toy2dConfig cfg_;
  ParamStore params_;
  Linear l1_, l2_, l3_;
};

inline TrainResult train_toy2d(Toy2dField& field, const ProgressFn& progress = {}) {
  const Toy2dConfig& c = field.config();
  TrainConfig tc;
  tc.total_steps = c.steps;
  tc.warmup_steps = c.warmup;
  tc.peak_lr = c.peak_lr;
  tc.weight_decay = 0.0;
  tc.seed = c.seed;
  AdamW opt(field.params(), tc);
  Rng rng(c.seed);
  TrainResult result;
  for (int step = 1; step <= c.steps; ++step) {
    const Mat x1 = sample_mixture(c, c.batch, rng);
    const Mat x0 = rng.normal_matrix(c.batch, 2);
    std::vector<double> times(static_cast<std::size_t>(c.batch));
    Mat xt(c.batch, 2), u(c.batch, 2);
    for (int i = 0; i < c.batch; ++i) {
      const double t = rng.uniform();
      times[static_cast<std::size_t>(i)] = t;
      const double a = 1.0 - (1.0 - c.sigma_min) * t;
      xt.row(i) = a * x0.row(i) + t * x1.row(i);
      u.row(i) = x1.row(i) - (1.0 - c.sigma_min) * x0.row(i);
    }
    field.params().zero_grad();
    Tape tape;
    Var v = field.forward(tape, xt, times);
    Var loss = ad::weighted_sq_err(v, u, std::vector<double>(static_cast<std::size_t>(c.batch), 1.0 / (2.0 * c.batch)));
    tape.backward(loss);
    LossRecord rec;
    rec.step = step;
    rec.loss = loss.scalar();
    detail::finish_step(field.params(), opt, tc, step, rec, result, progress);
  }
  return result;
}

inline Mat sample_toy2d(Toy2dField& field, int n, Rng& rng) {
  const Toy2dConfig& c = field.config();
  const Mat x0 = rng.normal_matrix(n, 2);
  const VectorField f = [&](const Mat& x, double t) { return field.predict(x, t); };
  return integrate_flow(f, x0, c.ode_steps, c.ode_method);
}

struct Toy2dStats {
  double within_3sigma = 0.0;      // fraction within 3 mode_std of the nearest mode
  std::vector<double> occupancy;   // fraction assigned to each mode
  std::vector<RowVec> mode_means;  // sample mean per assigned mode
};

inline Toy2dStats mixture_stats(const Mat& samples, const Toy2dConfig& c) {
  require(samples.cols() == 2 && samples.rows() > 0, "mixture_stats: need n x 2 samples");
  const std::size_t k = c.means.size();
  Toy2dStats s;
  s.occupancy.assign(k, 0.0);
  s.mode_means.assign(k, RowVec::Zero(2));
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < k; ++m) {
      const double dx = samples(i, 0) - c.means[m][0], dy = samples(i, 1) - c.means[m][1];
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < bd) {
        bd = d;
        best = m;
      }
    }
    if (bd <= 3.0 * c.mode_std) ++inside;
    s.occupancy[best] += 1.0;
    s.mode_means[best] += samples.row(i);
  }
  const double n = static_cast<double>(samples.rows());
  for (std::size_t m = 0; m < k; ++m) {
    if (s.occupancy[m] > 0) s.mode_means[m] /= s.occupancy[m];
    s.occupancy[m] /= n;
  }
  s.within_3sigma = static_cast<double>(inside) / n;
  return s;
}

}  // namespace flowfill
