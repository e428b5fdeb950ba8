#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//
// A Tape records every operation of one forward pass. Values live in the
// tape; a Var is a handle (tape pointer + node index). Calling
// Tape::backward(loss) on a 1x1 Var propagates gradients in reverse order
// and accumulates the gradients of parameter leaves into their ParamStore
// buffers.

#include "flowfill/core.hpp"

#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flowfill {

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::string name;
  Mat value;
  Mat grad;
};

// Named parameters with same-shaped gradient buffers. Insertion order is the
// manifest order used by checkpoints.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  // Adds a parameter initialised N(0, scale^2). scale == 0 gives zeros.
  std::size_t add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                         double scale) {
    Mat v = scale == 0.0 ? Mat::Zero(rows, cols) : Mat(rng_.normal_matrix(rows, cols) * scale);
    return add(name, std::move(v));
  }
  std::size_t add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                           double value) {
    return add(name, Mat::Constant(rows, cols, value));
  }
  std::size_t add(const std::string& name, Mat value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Param p{name, std::move(value), Mat()};
    p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    index_[name] = params_.size() - 1;
    return params_.size() - 1;
  }

  Param& at(std::size_t i) { return params_.at(i); }
  const Param& at(std::size_t i) const { return params_.at(i); }
  Param& at(const std::string& name) { return params_.at(find(name)); }
  const Param& at(const std::string& name) const { return params_.at(find(name)); }
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }
  std::deque<Param>& params() { return params_; }
  const std::deque<Param>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }
  void scale_grad(double s) {
    for (auto& p : params_) p.grad *= s;
  }
  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) s += p.grad.squaredNorm();
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

 private:
  std::deque<Param> params_;
  std::map<std::string, std::size_t> index_;
  Rng rng_{0};
};

// ---------------------------------------------------------------------------
// Tape

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const {
    require(rows() == 1 && cols() == 1, "scalar() on non 1x1 value");
    return value()(0, 0);
  }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad)>;

  // With grad disabled, no backward closures are recorded and parameters are
  // treated as constants (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat value) { return push(std::move(value), false, nullptr); }

  Var param(ParamStore& store, std::size_t index) {
    Param& p = store.at(index);
    Var v = push(p.value, grad_enabled_, nullptr);
    if (grad_enabled_) nodes_[v.id()].param = &p;
    return v;
  }
  Var param(ParamStore& store, const std::string& name) { return param(store, store.find(name)); }

  // Records an op result. `back` receives this node's gradient and must
  // accumulate into parents via accumulate().
  Var record(Mat value, std::initializer_list<Var> parents, Backward back) {
    bool needs = false;
    if (grad_enabled_)
      for (const Var& p : parents) needs = needs || nodes_.at(p.id()).needs_grad;
    return push(std::move(value), needs, needs ? std::move(back) : Backward{});
  }
  Var record(Mat value, std::span<const Var> parents, Backward back) {
    bool needs = false;
    if (grad_enabled_)
      for (const Var& p : parents) needs = needs || nodes_.at(p.id()).needs_grad;
    return push(std::move(value), needs, needs ? std::move(back) : Backward{});
  }

  const Mat& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool needs_grad(const Var& v) const { return nodes_.at(v.id()).needs_grad; }

  template <typename Expr>
  void accumulate(const Var& v, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Gradient of the last backward() w.r.t. v (empty if unreached).
  const Mat& grad(const Var& v) const { return nodes_.at(v.id()).grad; }

  void backward(const Var& loss) {
    require(loss.valid() && loss.tape() == this, "backward: loss does not belong to this tape");
    require(!nodes_.empty(), "backward before forward");
    require(!consumed_, "backward called twice on the same tape");
    require(grad_enabled_, "backward on a tape with gradients disabled");
    const Mat& lv = value(loss.id());
    require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be a 1x1 scalar");
    consumed_ = true;
    Node& root = nodes_[static_cast<std::size_t>(loss.id())];
    if (!root.needs_grad) return;
    root.grad = Mat::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0) continue;
      if (n.back) n.back(*this, n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    Param* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs, Backward back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

inline const Mat& Var::value() const {
  require(valid(), "use of an empty Var");
  return tape_->value(id_);
}

// ---------------------------------------------------------------------------
// Operations

namespace ad {

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch");
}

inline Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * b.value());
    if (tp.needs_grad(b)) tp.accumulate(b, g.transpose() * a.value());
  });
}

inline Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& tp, const Mat& g) {
                            if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
                            if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

inline Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

// a (R x C) + row (1 x C) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape mismatch");
  Mat v = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(v), {a, row}, [a, row](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

inline Var sum(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->record(std::move(v), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    offsets.push_back(c);
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(v), parts, [ps, offsets](Tape& tp, const Mat& g) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (tp.needs_grad(ps[i])) tp.accumulate(ps[i], g.middleCols(offsets[i], ps[i].cols()));
  });
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column count mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    offsets.push_back(r);
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(v), parts, [ps, offsets](Tape& tp, const Mat& g) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (tp.needs_grad(ps[i])) tp.accumulate(ps[i], g.middleRows(offsets[i], ps[i].rows()));
  });
}
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Mat v = a.value().middleRows(start, count);
  return a.tape()->record(std::move(v), {a}, [a, start, count](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    tp.accumulate(a, full);
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Mat v = a.value().middleCols(start, count);
  return a.tape()->record(std::move(v), {a}, [a, start, count](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    tp.accumulate(a, full);
  });
}

// Row gather: out[i] = table[ids[i]].
inline Var gather_rows(const Var& table, std::span<const int> ids) {
  const Eigen::Index k = table.rows();
  Mat v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= k)
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range [0, " +
                          std::to_string(k) + ")");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape()->record(std::move(v), {table}, [table, idv](Tape& tp, const Mat& g) {
    Mat full = Mat::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idv.size(); ++i)
      full.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, full);
  });
}

// Row-wise softmax of (a + additive_mask). The mask, when non-empty, holds 0
// for allowed and a large negative number for blocked entries.
inline Var softmax_rows(const Var& a, const Mat& additive_mask = Mat()) {
  Mat x = a.value();
  if (additive_mask.size() != 0) {
    require(additive_mask.rows() == x.rows() && additive_mask.cols() == x.cols(),
            "softmax_rows: mask shape mismatch");
    x += additive_mask;
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - m).exp();
    x.row(i) /= x.row(i).sum();
  }
  Mat s = x;
  return a.tape()->record(std::move(x), {a}, [a, s](Tape& tp, const Mat& g) {
    Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
    Mat gx = s.cwiseProduct(g - dot.replicate(1, g.cols()));
    tp.accumulate(a, gx);
  });
}

// y = a / rms(a) * gain, per row; rms = sqrt(mean(a^2) + eps).
inline Var rms_norm(const Var& a, const Var& gain, double eps = 1e-6) {
  require(gain.rows() == 1 && gain.cols() == a.cols(), "rms_norm: gain shape mismatch");
  const Eigen::Index c = a.cols();
  Eigen::VectorXd inv_rms(a.rows());
  Mat normed(a.rows(), c);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    inv_rms(i) = 1.0 / std::sqrt(a.value().row(i).squaredNorm() / static_cast<double>(c) + eps);
    normed.row(i) = a.value().row(i) * inv_rms(i);
  }
  Mat v = normed.array().rowwise() * gain.value().row(0).array();
  return a.tape()->record(
      std::move(v), {a, gain}, [a, gain, normed, inv_rms, c](Tape& tp, const Mat& g) {
        if (tp.needs_grad(gain)) tp.accumulate(gain, g.cwiseProduct(normed).colwise().sum());
        if (tp.needs_grad(a)) {
          Mat dn = g.array().rowwise() * gain.value().row(0).array();
          Mat ga(a.rows(), c);
          for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double m = dn.row(i).dot(normed.row(i)) / static_cast<double>(c);
            ga.row(i) = (dn.row(i) - normed.row(i) * m) * inv_rms(i);
          }
          tp.accumulate(a, ga);
        }
      });
}

// GELU, tanh approximation.
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC = 0.044715;

inline Var gelu(const Var& a) {
  constexpr double k = kGeluK;
  constexpr double c = kGeluC;
  const Mat& x = a.value();
  Mat th = (k * (x.array() + c * x.array().cube())).tanh().matrix();
  Mat v = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return a.tape()->record(std::move(v), {a}, [a, th](Tape& tp, const Mat& g) {
    constexpr double k = kGeluK;
    constexpr double c = kGeluC;
    const auto xa = a.value().array();
    auto d = 0.5 * (1.0 + th.array()) +
             0.5 * xa * (1.0 - th.array().square()) * k * (1.0 + 3.0 * c * xa.square());
    tp.accumulate(a, (g.array() * d).matrix());
  });
}

inline Var relu(const Var& a) {
  Mat v = a.value().cwiseMax(0.0);
  return a.tape()->record(std::move(v), {a}, [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

// Rotary position embedding applied independently to each head block of
// width cols/heads. Pair (2i, 2i+1) of a row at position p is rotated by
// p * base^(-2i/head_dim).
inline Mat rope_rotate(const Mat& x, int heads, std::span<const int> positions, double sign,
                       double base = 10000.0) {
  const Eigen::Index hd = x.cols() / heads;
  Mat out = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double pos = positions[static_cast<std::size_t>(r)];
    for (Eigen::Index i = 0; i < hd / 2; ++i) {
      const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double cs = std::cos(theta), sn = sign * std::sin(theta);
      for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = h * hd + 2 * i;
        const double x0 = x(r, c0), x1 = x(r, c0 + 1);
        out(r, c0) = x0 * cs - x1 * sn;
        out(r, c0 + 1) = x0 * sn + x1 * cs;
      }
    }
  }
  return out;
}

inline Var rope(const Var& a, int heads, std::span<const int> positions) {
  require(heads > 0 && a.cols() % heads == 0 && (a.cols() / heads) % 2 == 0,
          "rope: head dimension must be even");
  require(static_cast<Eigen::Index>(positions.size()) == a.rows(), "rope: positions length");
  std::vector<int> pos(positions.begin(), positions.end());
  return a.tape()->record(rope_rotate(a.value(), heads, pos, 1.0), {a},
                          [a, heads, pos](Tape& tp, const Mat& g) {
                            tp.accumulate(a, rope_rotate(g, heads, pos, -1.0));
                          });
}

// Zero-padded neighbourhood unfold along rows ("same" 1-D convolution input):
// out[n, j*C:(j+1)*C] = a[n + j - kernel/2] (zero outside).
inline Var unfold_rows(const Var& a, int kernel) {
  require(kernel >= 1 && kernel % 2 == 1, "unfold_rows: kernel must be odd");
  const Eigen::Index n = a.rows(), c = a.cols();
  const int half = kernel / 2;
  Mat v = Mat::Zero(n, c * kernel);
  for (int j = 0; j < kernel; ++j) {
    const int off = j - half;
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index src = r + off;
      if (src >= 0 && src < n) v.block(r, j * c, 1, c) = a.value().row(src);
    }
  }
  return a.tape()->record(std::move(v), {a}, [a, kernel, half](Tape& tp, const Mat& g) {
    const Eigen::Index n = a.rows(), c = a.cols();
    Mat ga = Mat::Zero(n, c);
    for (int j = 0; j < kernel; ++j) {
      const int off = j - half;
      for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index src = r + off;
        if (src >= 0 && src < n) ga.row(src) += g.block(r, j * c, 1, c);
      }
    }
    tp.accumulate(a, ga);
  });
}

// sum_i w_i * sum_c (pred(i,c) - target(i,c))^2, as a 1x1 Var.
inline Var weighted_sq_err(const Var& pred, const Mat& target, std::span<const double> row_weights) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          "weighted_sq_err: shape mismatch");
  require(static_cast<Eigen::Index>(row_weights.size()) == pred.rows(),
          "weighted_sq_err: weight length mismatch");
  Mat diff = pred.value() - target;
  Eigen::VectorXd w(pred.rows());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = row_weights[static_cast<std::size_t>(i)];
  Mat v(1, 1);
  v(0, 0) = diff.rowwise().squaredNorm().dot(w);
  return pred.tape()->record(std::move(v), {pred}, [pred, diff, w](Tape& tp, const Mat& g) {
    Mat gp = (diff.array().colwise() * (2.0 * g(0, 0) * w.array())).matrix();
    tp.accumulate(pred, gp);
  });
}

}  // namespace ad
}  // namespace flowfill
