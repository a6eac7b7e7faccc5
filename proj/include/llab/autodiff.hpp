#ifndef LLAB_AUTODIFF_HPP
#define LLAB_AUTODIFF_HPP

// Exact gradients and Hessian-vector products of the regularized
// cross-entropy loss of a ReLU multilayer perceptron.
//
// The network is hard-wired:  a_0 = X,  z_l = a_{l-1} W_l^T + b_l,
// a_l = relu(z_l) for hidden layers, logits = z_L.  The loss is
//
//   L(theta) = (1/B) sum_n [logsumexp(z_L[n]) - z_L[n, y_n]] + wd * |theta|^2.
//
// hvp() applies the R-operator (directional derivative along v) to every
// quantity of the forward and backward pass, so Hv is exact up to rounding.
// ReLU has zero second derivative everywhere, including at the kink.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "llab/error.hpp"
#include "llab/numcore.hpp"

namespace llab {

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;
  std::size_t num_classes = 2;

  std::size_t num_layers() const noexcept { return hidden_widths.size() + 1; }

  /// (fan_in, fan_out) of layer l, 0-based.
  std::pair<std::size_t, std::size_t> layer_dims(std::size_t l) const {
    const std::size_t in = l == 0 ? input_dim : hidden_widths[l - 1];
    const std::size_t out = l == hidden_widths.size() ? num_classes : hidden_widths[l];
    return {in, out};
  }

  std::size_t parameter_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const auto [in, out] = layer_dims(l);
      p += out * in + out;
    }
    return p;
  }

  void validate() const {
    if (input_dim < 1) throw ParameterError("model: input_dim must be >= 1");
    if (num_classes < 2) throw ParameterError("model: num_classes must be >= 2");
    for (std::size_t w : hidden_widths)
      if (w < 1) throw ParameterError("model: hidden widths must be >= 1");
  }

  bool operator==(const ModelSpec&) const = default;
};

enum class TensorRole { weight, bias };

struct TensorSlot {
  std::size_t layer = 0;
  TensorRole role = TensorRole::weight;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const TensorSlot&) const = default;
};

/// Ordered tensor slots; per layer the weight (out x in, row-major) then the bias.
class ParamLayout {
 public:
  ParamLayout() = default;

  static ParamLayout for_model(const ModelSpec& spec) {
    spec.validate();
    ParamLayout layout;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const auto [in, out] = spec.layer_dims(l);
      layout.push({l, TensorRole::weight, out, in, 0});
      layout.push({l, TensorRole::bias, 1, out, 0});
    }
    return layout;
  }

  /// A single untyped block of n values; used for analytic test objectives.
  static ParamLayout flat(std::size_t n) {
    ParamLayout layout;
    layout.push({0, TensorRole::weight, 1, n, 0});
    return layout;
  }

  const std::vector<TensorSlot>& slots() const noexcept { return slots_; }
  std::size_t total() const noexcept { return total_; }

  const TensorSlot& slot(std::size_t layer, TensorRole role) const {
    for (const auto& s : slots_)
      if (s.layer == layer && s.role == role) return s;
    throw DimensionError("layout has no tensor for layer " + std::to_string(layer));
  }

  bool operator==(const ParamLayout&) const = default;

 private:
  void push(TensorSlot s) {
    s.offset = total_;
    total_ += s.size();
    slots_.push_back(s);
  }

  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

/// Flattened model parameters plus the layout that gives them meaning.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ParamLayout layout)
      : layout_(std::move(layout)), values_(layout_.total(), 0.0) {}
  ParamVector(ParamLayout layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_.total())
      throw DimensionError("parameter vector length " + std::to_string(values_.size()) +
                           " != layout total " + std::to_string(layout_.total()));
  }

  static ParamVector zeros_like(const ParamVector& p) { return ParamVector(p.layout()); }

  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> tensor(std::size_t layer, TensorRole role) {
    const auto& s = layout_.slot(layer, role);
    return {values_.data() + s.offset, s.size()};
  }
  std::span<const double> tensor(std::size_t layer, TensorRole role) const {
    const auto& s = layout_.slot(layer, role);
    return {values_.data() + s.offset, s.size()};
  }

  bool operator==(const ParamVector&) const = default;

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

inline void require_same_layout(const ParamVector& a, const ParamVector& b, const char* where) {
  if (!(a.layout() == b.layout())) throw DimensionError(std::string(where) + ": layout mismatch");
}

/// One matrix per layout slot (biases as 1 x n).
inline std::vector<Matrix> unflatten(const ParamVector& p) {
  std::vector<Matrix> out;
  for (const auto& s : p.layout().slots()) {
    std::vector<double> block(p.values().begin() + static_cast<std::ptrdiff_t>(s.offset),
                              p.values().begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
    out.emplace_back(s.rows, s.cols, std::move(block));
  }
  return out;
}

inline ParamVector flatten(const ParamLayout& layout, const std::vector<Matrix>& tensors) {
  if (tensors.size() != layout.slots().size()) throw DimensionError("flatten: tensor count");
  ParamVector p(layout);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& s = layout.slots()[k];
    if (tensors[k].rows() != s.rows || tensors[k].cols() != s.cols)
      throw DimensionError("flatten: tensor shape");
    std::copy(tensors[k].data().begin(), tensors[k].data().end(),
              p.values().begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return p;
}

/// y += a * x
inline void axpy(double a, const ParamVector& x, ParamVector& y) {
  require_same_layout(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "dot");
  return dot(std::span<const double>(a.values()), std::span<const double>(b.values()));
}

inline double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

struct Batch {
  Matrix X;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

/// Which loss terms are active; `none` leaves only the weight-decay penalty.
enum class DataTerm { cross_entropy, none };

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

namespace detail {

inline void check_theta(const ModelSpec& spec, const ParamVector& theta) {
  if (!(theta.layout() == ParamLayout::for_model(spec)))
    throw DimensionError("parameter layout does not match model spec");
}

inline void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw ParameterError("empty batch");
  if (batch.X.rows() != batch.y.size()) throw DimensionError("batch: rows != labels");
  if (batch.X.cols() != spec.input_dim) throw DimensionError("batch: column count != input_dim");
  for (int c : batch.y)
    if (c < 0 || static_cast<std::size_t>(c) >= spec.num_classes)
      throw ParameterError("batch: label out of range");
}

// out(n, o) = sum_i a(n, i) W(o, i) + b(o)   (b may be empty)
inline void affine(const Matrix& a, std::span<const double> W, std::span<const double> b,
                   std::size_t out_dim, Matrix& out) {
  const std::size_t in = a.cols();
  out = Matrix(a.rows(), out_dim);
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const double* an = a.data().data() + n * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wo = W.data() + o * in;
      double s = b.empty() ? 0.0 : b[o];
      for (std::size_t i = 0; i < in; ++i) s += an[i] * wo[i];
      out(n, o) = s;
    }
  }
}

// acc(n, o) += sum_i a(n, i) W(o, i)
inline void affine_accumulate(const Matrix& a, std::span<const double> W, Matrix& acc) {
  const std::size_t in = a.cols();
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const double* an = a.data().data() + n * in;
    for (std::size_t o = 0; o < acc.cols(); ++o) {
      const double* wo = W.data() + o * in;
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += an[i] * wo[i];
      acc(n, o) += s;
    }
  }
}

// dW(o, i) += sum_n g(n, o) a(n, i);  db(o) += sum_n g(n, o)
inline void outer_accumulate(const Matrix& g, const Matrix& a, std::span<double> dW,
                             std::span<double> db) {
  const std::size_t in = a.cols();
  for (std::size_t n = 0; n < g.rows(); ++n) {
    for (std::size_t o = 0; o < g.cols(); ++o) {
      const double gno = g(n, o);
      if (!db.empty()) db[o] += gno;
      if (gno == 0.0) continue;
      double* dwo = dW.data() + o * in;
      const double* an = a.data().data() + n * in;
      for (std::size_t i = 0; i < in; ++i) dwo[i] += gno * an[i];
    }
  }
}

// out(n, i) = sum_o g(n, o) W(o, i)
inline void backprop_input(const Matrix& g, std::span<const double> W, std::size_t in,
                           Matrix& out) {
  out = Matrix(g.rows(), in);
  for (std::size_t n = 0; n < g.rows(); ++n) {
    double* on = out.data().data() + n * in;
    for (std::size_t o = 0; o < g.cols(); ++o) {
      const double gno = g(n, o);
      if (gno == 0.0) continue;
      const double* wo = W.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) on[i] += gno * wo[i];
    }
  }
}

inline void relu_mask(Matrix& m, const Matrix& pre) {
  for (std::size_t k = 0; k < m.size(); ++k)
    if (!(pre.data()[k] > 0.0)) m.data()[k] = 0.0;
}

struct Tape {
  std::vector<Matrix> pre;  // z_l
  std::vector<Matrix> act;  // act[0] = X, act[l] = relu(z_l) for hidden l
};

inline Tape run_forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& X) {
  Tape t;
  const std::size_t L = spec.num_layers();
  t.pre.resize(L);
  t.act.reserve(L);
  t.act.push_back(X);
  for (std::size_t l = 0; l < L; ++l) {
    const auto out = spec.layer_dims(l).second;
    affine(t.act[l], theta.tensor(l, TensorRole::weight), theta.tensor(l, TensorRole::bias), out,
           t.pre[l]);
    if (l + 1 < L) {
      Matrix a = t.pre[l];
      for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
      t.act.push_back(std::move(a));
    }
  }
  return t;
}

// Row-wise softmax with max subtraction; also returns per-row logsumexp.
inline Matrix softmax_rows(const Matrix& z, std::vector<double>* lse = nullptr) {
  Matrix p(z.rows(), z.cols());
  if (lse) lse->assign(z.rows(), 0.0);
  for (std::size_t n = 0; n < z.rows(); ++n) {
    const auto row = z.row(n);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      p(n, c) = std::exp(row[c] - m);
      s += p(n, c);
    }
    for (std::size_t c = 0; c < z.cols(); ++c) p(n, c) /= s;
    if (lse) (*lse)[n] = m + std::log(s);
  }
  return p;
}

inline double cross_entropy(const Matrix& logits, const std::vector<int>& y, Matrix* probs) {
  std::vector<double> lse;
  Matrix p = softmax_rows(logits, &lse);
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows(); ++n)
    total += lse[n] - logits(n, static_cast<std::size_t>(y[n]));
  if (probs) *probs = std::move(p);
  return total / static_cast<double>(logits.rows());
}

inline double squared_norm(const ParamVector& theta) {
  double s = 0.0;
  for (double v : theta.values()) s += v * v;
  return s;
}

}  // namespace detail

/// Logits of the MLP, B x num_classes.
inline Matrix forward(const ModelSpec& spec, const ParamVector& theta, const Matrix& X) {
  detail::check_theta(spec, theta);
  if (X.cols() != spec.input_dim) throw DimensionError("forward: column count != input_dim");
  auto tape = detail::run_forward(spec, theta, X);
  return std::move(tape.pre.back());
}

/// Row-wise softmax probabilities of a logit matrix.
inline Matrix softmax(const Matrix& logits) { return detail::softmax_rows(logits); }

/// Regularized loss without gradient.
inline double loss_value(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                         double wd, DataTerm term = DataTerm::cross_entropy) {
  detail::check_theta(spec, theta);
  if (wd < 0.0) throw ParameterError("weight decay must be >= 0");
  double loss = wd * detail::squared_norm(theta);
  if (term == DataTerm::cross_entropy) {
    detail::check_batch(spec, batch);
    const auto tape = detail::run_forward(spec, theta, batch.X);
    loss += detail::cross_entropy(tape.pre.back(), batch.y, nullptr);
  }
  return loss;
}

inline LossGrad loss_grad(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                          double wd, DataTerm term = DataTerm::cross_entropy) {
  detail::check_theta(spec, theta);
  if (wd < 0.0) throw ParameterError("weight decay must be >= 0");
  LossGrad out{wd * detail::squared_norm(theta), ParamVector::zeros_like(theta)};
  ParamVector& grad = out.grad;

  if (term == DataTerm::cross_entropy) {
    detail::check_batch(spec, batch);
    const std::size_t L = spec.num_layers();
    const auto tape = detail::run_forward(spec, theta, batch.X);
    Matrix g;
    out.loss += detail::cross_entropy(tape.pre.back(), batch.y, &g);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t n = 0; n < g.rows(); ++n) {
      g(n, static_cast<std::size_t>(batch.y[n])) -= 1.0;
      for (std::size_t c = 0; c < g.cols(); ++c) g(n, c) *= inv_b;
    }
    for (std::size_t l = L; l-- > 0;) {
      detail::outer_accumulate(g, tape.act[l], grad.tensor(l, TensorRole::weight),
                               grad.tensor(l, TensorRole::bias));
      if (l == 0) break;
      Matrix ga;
      detail::backprop_input(g, theta.tensor(l, TensorRole::weight), spec.layer_dims(l).first,
                             ga);
      detail::relu_mask(ga, tape.pre[l - 1]);
      g = std::move(ga);
    }
  }
  for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += 2.0 * wd * theta[i];
  return out;
}

/// Exact Hessian-vector product (forward-over-reverse R-operator).
inline ParamVector hvp(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                       double wd, const ParamVector& v, DataTerm term = DataTerm::cross_entropy) {
  detail::check_theta(spec, theta);
  require_same_layout(theta, v, "hvp");
  if (wd < 0.0) throw ParameterError("weight decay must be >= 0");
  ParamVector hv = ParamVector::zeros_like(theta);

  if (term == DataTerm::cross_entropy) {
    detail::check_batch(spec, batch);
    const std::size_t L = spec.num_layers();
    const auto tape = detail::run_forward(spec, theta, batch.X);

    // Forward R-pass: r_pre[l] = R(z_l), r_act[l] = R(a_l), R(a_0) = 0.
    std::vector<Matrix> r_pre(L);
    std::vector<Matrix> r_act(L);
    r_act[0] = Matrix(batch.X.rows(), batch.X.cols());
    for (std::size_t l = 0; l < L; ++l) {
      const auto [in, out] = spec.layer_dims(l);
      detail::affine(tape.act[l], v.tensor(l, TensorRole::weight),
                     v.tensor(l, TensorRole::bias), out, r_pre[l]);
      if (l > 0) detail::affine_accumulate(r_act[l], theta.tensor(l, TensorRole::weight), r_pre[l]);
      if (l + 1 < L) {
        r_act[l + 1] = r_pre[l];
        detail::relu_mask(r_act[l + 1], tape.pre[l]);
      }
    }

    // Output error and its R-derivative.
    const Matrix& z = tape.pre.back();
    const Matrix p = detail::softmax_rows(z);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Matrix g = p;
    Matrix rg(p.rows(), p.cols());
    for (std::size_t n = 0; n < p.rows(); ++n) {
      g(n, static_cast<std::size_t>(batch.y[n])) -= 1.0;
      double pr = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) pr += p(n, c) * r_pre[L - 1](n, c);
      for (std::size_t c = 0; c < p.cols(); ++c) {
        g(n, c) *= inv_b;
        rg(n, c) = p(n, c) * (r_pre[L - 1](n, c) - pr) * inv_b;
      }
    }

    // Backward R-pass.
    for (std::size_t l = L; l-- > 0;) {
      auto dW = hv.tensor(l, TensorRole::weight);
      auto db = hv.tensor(l, TensorRole::bias);
      detail::outer_accumulate(rg, tape.act[l], dW, db);
      if (l > 0) detail::outer_accumulate(g, r_act[l], dW, {});
      if (l == 0) break;
      const std::size_t in = spec.layer_dims(l).first;
      Matrix ga;
      Matrix rga;
      detail::backprop_input(g, theta.tensor(l, TensorRole::weight), in, ga);
      detail::backprop_input(rg, theta.tensor(l, TensorRole::weight), in, rga);
      Matrix gv;
      detail::backprop_input(g, v.tensor(l, TensorRole::weight), in, gv);
      for (std::size_t k = 0; k < rga.size(); ++k) rga.data()[k] += gv.data()[k];
      detail::relu_mask(ga, tape.pre[l - 1]);
      detail::relu_mask(rga, tape.pre[l - 1]);
      g = std::move(ga);
      rg = std::move(rga);
    }
  }
  for (std::size_t i = 0; i < v.size(); ++i) hv[i] += 2.0 * wd * v[i];
  return hv;
}

inline constexpr std::size_t kExactHessianMaxParams = 2000;

/// Dense P x P Hessian, column j = hvp(e_j).
inline Matrix exact_hessian(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                            double wd, DataTerm term = DataTerm::cross_entropy) {
  const std::size_t P = theta.size();
  if (P > kExactHessianMaxParams)
    throw SizeError("exact_hessian: " + std::to_string(P) + " parameters exceeds guard of " +
                    std::to_string(kExactHessianMaxParams));
  Matrix H(P, P);
  ParamVector e = ParamVector::zeros_like(theta);
  for (std::size_t j = 0; j < P; ++j) {
    e[j] = 1.0;
    const ParamVector col = hvp(spec, theta, batch, wd, e, term);
    for (std::size_t i = 0; i < P; ++i) H(i, j) = col[i];
    e[j] = 0.0;
  }
  return H;
}

/// He-normal weights N(0, 2/fan_in), zero biases.
inline ParamVector he_init(const ModelSpec& spec, Rng& rng) {
  ParamVector theta(ParamLayout::for_model(spec));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(spec.layer_dims(l).first));
    for (double& w : theta.tensor(l, TensorRole::weight)) w = sd * rng.normal();
  }
  return theta;
}

}  // namespace llab

#endif  // LLAB_AUTODIFF_HPP
