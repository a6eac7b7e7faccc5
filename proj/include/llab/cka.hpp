#ifndef LLAB_CKA_HPP
#define LLAB_CKA_HPP

// Linear centered kernel alignment between model outputs.
//
//   Cov(X, Y) = (m-1)^-2 tr(X X^T H Y Y^T H),  H = I - 11^T/m
//   CKA(X, Y) = Cov(X, Y) / sqrt(Cov(X, X) Cov(Y, Y))
//
// With column-centered Xc = H X and Yc = H Y the trace equals |Xc^T Yc|_F^2,
// which needs only d x d' work instead of m x m.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "llab/autodiff.hpp"
#include "llab/data.hpp"
#include "llab/error.hpp"
#include "llab/numcore.hpp"

namespace llab {

/// Post-softmax outputs of one model on a probe set (m x num_classes).
struct OutputMatrix {
  Matrix F;
};

inline OutputMatrix softmax_outputs(const ModelSpec& spec, const ParamVector& theta,
                                    const ProbeSet& probes) {
  if (probes.X.cols() != spec.input_dim)
    throw DimensionError("softmax_outputs: probe dim != input_dim");
  return OutputMatrix{softmax(forward(spec, theta, probes.X))};
}

inline Matrix center_columns(const Matrix& X) {
  Matrix c = X;
  const double m = static_cast<double>(X.rows());
  for (std::size_t j = 0; j < X.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < X.rows(); ++i) mean += X(i, j);
    mean /= m;
    for (std::size_t i = 0; i < X.rows(); ++i) c(i, j) -= mean;
  }
  return c;
}

inline double hsic_cov(const Matrix& X, const Matrix& Y) {
  if (X.rows() != Y.rows()) throw DimensionError("hsic_cov: row counts differ");
  if (X.rows() < 2) throw ParameterError("hsic_cov: need at least 2 rows");
  const Matrix xc = center_columns(X);
  const Matrix yc = center_columns(Y);
  std::vector<double> squares;
  squares.reserve(X.cols() * Y.cols());
  for (std::size_t a = 0; a < X.cols(); ++a) {
    for (std::size_t b = 0; b < Y.cols(); ++b) {
      double cross = 0.0;
      for (std::size_t i = 0; i < X.rows(); ++i) cross += xc(i, a) * yc(i, b);
      squares.push_back(cross * cross);
    }
  }
  // Summing in sorted order makes hsic_cov(X, Y) == hsic_cov(Y, X) bit for bit.
  std::sort(squares.begin(), squares.end());
  double s = 0.0;
  for (double v : squares) s += v;
  const double m1 = static_cast<double>(X.rows() - 1);
  return s / (m1 * m1);
}

inline double cka(const Matrix& a, const Matrix& b) {
  const double xy = hsic_cov(a, b);
  const double xx = hsic_cov(a, a);
  const double yy = hsic_cov(b, b);
  if (!(xx > 0.0) || !(yy > 0.0))
    throw DegenerateError("cka: representation has zero self-covariance");
  return xy / std::sqrt(xx * yy);
}

inline double cka(const OutputMatrix& a, const OutputMatrix& b) { return cka(a.F, b.F); }

inline double cka_between_models(const ModelSpec& spec, const ParamVector& theta_a,
                                 const ParamVector& theta_b, const ProbeSet& probes) {
  return cka(softmax_outputs(spec, theta_a, probes), softmax_outputs(spec, theta_b, probes));
}

}  // namespace llab

#endif  // LLAB_CKA_HPP
