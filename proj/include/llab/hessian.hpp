#ifndef LLAB_HESSIAN_HPP
#define LLAB_HESSIAN_HPP

// Local curvature summaries built on Hessian-vector products: the dominant
// eigenvalue by power iteration and the trace by Hutchinson's estimator.
// Both are templates over any symmetric linear operator ParamVector -> ParamVector;
// the MLP overloads bind the operator to hvp() on a frozen batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "llab/autodiff.hpp"
#include "llab/data.hpp"
#include "llab/error.hpp"
#include "llab/numcore.hpp"

namespace llab {

struct CurvatureConfig {
  std::size_t max_iter = 100;
  double rtol = 1e-3;
  std::size_t metric_batch = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iter < 1) throw ConfigError("metrics.max_iter must be >= 1");
    if (!(rtol > 0.0)) throw ConfigError("metrics.rtol must be > 0");
    if (metric_batch < 1) throw ConfigError("metrics.metric_batch must be >= 1");
  }
};

struct EigenEstimate {
  double lambda_max = 0.0;
  std::size_t iters = 0;
  bool degenerate = false;       // Hv was exactly zero
  std::vector<double> rayleigh;  // quotient at every iteration
};

struct TraceEstimate {
  double trace = 0.0;
  std::size_t probes_used = 0;
  std::vector<double> samples;  // z^T H z per probe
};

inline bool relative_change_below(double current, double previous, double rtol) {
  return std::abs(current - previous) / (std::abs(previous) + 1e-12) < rtol;
}

/// The batch shared by every curvature metric of one model:
/// min(metric_batch, n) rows drawn without replacement from the metric seed.
inline Batch metric_batch(const Dataset& ds, const CurvatureConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, stream_id("metric_batch")));
  auto rows = sample_without_replacement(ds.size(), std::min(cfg.metric_batch, ds.size()), rng);
  std::sort(rows.begin(), rows.end());
  return ds.batch(rows);
}

/// Power iteration from a unit Gaussian start; returns the signed Rayleigh
/// quotient of the dominant-magnitude eigenvalue.
template <class LinearOp>
EigenEstimate power_iteration(LinearOp&& apply, const ParamLayout& layout,
                              const CurvatureConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, stream_id("power_iteration")));
  ParamVector v(layout);
  for (double& x : v.values()) x = rng.normal();
  const double n0 = norm2(v);
  for (double& x : v.values()) x /= n0;

  EigenEstimate est;
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    ParamVector hv = apply(v);
    const double lambda = dot(v, hv);
    est.rayleigh.push_back(lambda);
    est.iters = it;
    const double hn = norm2(hv);
    if (hn == 0.0) {
      est.lambda_max = 0.0;
      est.degenerate = true;
      return est;
    }
    for (double& x : hv.values()) x /= hn;
    v = std::move(hv);
    est.lambda_max = lambda;
    if (it > 1 && relative_change_below(lambda, est.rayleigh[it - 2], cfg.rtol)) break;
  }
  return est;
}

/// z^T A z for `count` Rademacher probes drawn from `rng`.
template <class LinearOp>
std::vector<double> hutchinson_samples(LinearOp&& apply, const ParamLayout& layout,
                                       std::size_t count, Rng& rng) {
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const ParamVector z(layout, rademacher(layout.total(), rng));
    out.push_back(dot(z, apply(z)));
  }
  return out;
}

/// Running mean of z^T A z, stopped on relative change below rtol or at max_iter probes.
template <class LinearOp>
TraceEstimate hutchinson_trace(LinearOp&& apply, const ParamLayout& layout,
                               const CurvatureConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, stream_id("hutchinson")));
  TraceEstimate est;
  double sum = 0.0;
  double previous = 0.0;
  for (std::size_t k = 1; k <= cfg.max_iter; ++k) {
    const double s = hutchinson_samples(apply, layout, 1, rng).front();
    est.samples.push_back(s);
    sum += s;
    const double mean = sum / static_cast<double>(k);
    est.trace = mean;
    est.probes_used = k;
    if (k > 1 && relative_change_below(mean, previous, cfg.rtol)) break;
    previous = mean;
  }
  return est;
}

inline auto hessian_operator(const ModelSpec& spec, const ParamVector& theta, const Batch& batch,
                             double wd, DataTerm term = DataTerm::cross_entropy) {
  return [&spec, &theta, &batch, wd, term](const ParamVector& v) {
    return hvp(spec, theta, batch, wd, v, term);
  };
}

inline EigenEstimate top_eigenvalue(const ModelSpec& spec, const ParamVector& theta,
                                    const Batch& batch, double wd, const CurvatureConfig& cfg,
                                    DataTerm term = DataTerm::cross_entropy) {
  return power_iteration(hessian_operator(spec, theta, batch, wd, term), theta.layout(), cfg);
}

inline TraceEstimate trace_hutchinson(const ModelSpec& spec, const ParamVector& theta,
                                      const Batch& batch, double wd, const CurvatureConfig& cfg,
                                      DataTerm term = DataTerm::cross_entropy) {
  return hutchinson_trace(hessian_operator(spec, theta, batch, wd, term), theta.layout(), cfg);
}

}  // namespace llab

#endif  // LLAB_HESSIAN_HPP
