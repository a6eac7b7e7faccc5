#ifndef LLAB_MODECONN_HPP
#define LLAB_MODECONN_HPP

// Bezier-curve mode connectivity.
//
// gamma(t) = sum_j C(k,j) (1-t)^(k-j) t^j theta_j, with theta_0 and theta_k
// frozen at the two trained models. Training samples one t per minibatch and
// moves each interior bend by its Bernstein weight times dL/dgamma(t).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llab/autodiff.hpp"
#include "llab/data.hpp"
#include "llab/error.hpp"
#include "llab/numcore.hpp"
#include "llab/trainer.hpp"

namespace llab {

struct BezierCurve {
  ParamVector start;                // theta_0
  ParamVector end;                  // theta_k
  std::vector<ParamVector> bends;   // theta_1 .. theta_{k-1}

  std::size_t degree() const noexcept { return bends.size() + 1; }

  const ParamVector& control_point(std::size_t j) const {
    if (j == 0) return start;
    if (j == degree()) return end;
    return bends.at(j - 1);
  }
};

inline const std::vector<double>& default_t_grid() {
  static const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  return grid;
}

struct CurveTrainConfig {
  std::size_t epochs = 50;
  double lr = 0.01;
  LinearDecay schedule{25, 45, 0.01};
  std::size_t batch_size = 128;
  double weight_decay = 5e-4;
  std::size_t bends = 2;  // Bezier degree k
  std::vector<double> t_grid = default_t_grid();
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("curve.epochs must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("curve.lr must be >= 0");
    if (batch_size < 1) throw ConfigError("curve.batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("curve.weight_decay must be >= 0");
    if (bends < 1) throw ConfigError("curve.bends must be >= 1");
    if (schedule.start_epoch >= schedule.end_epoch)
      throw ConfigError("curve.schedule: start_epoch must be < end_epoch");
  }
};

struct CurveProfile {
  std::vector<double> t;
  std::vector<double> error;          // 0-1 training error, percent
  std::vector<double> cross_entropy;  // mean cross-entropy
};

enum class ProfileMetric { error01, cross_entropy };

inline double binomial(std::size_t n, std::size_t k) {
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

inline double bernstein(std::size_t k, std::size_t j, double t) {
  return binomial(k, j) * std::pow(1.0 - t, static_cast<double>(k - j)) *
         std::pow(t, static_cast<double>(j));
}

inline ParamVector curve_point(const BezierCurve& curve, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("curve_point: t outside [0,1]");
  if (t == 0.0) return curve.start;
  if (t == 1.0) return curve.end;
  const std::size_t k = curve.degree();
  ParamVector p = ParamVector::zeros_like(curve.start);
  for (std::size_t j = 0; j <= k; ++j) axpy(bernstein(k, j, t), curve.control_point(j), p);
  return p;
}

/// Interior bends on the straight segment: theta_j = theta_0 + (j/k)(theta_k - theta_0).
inline BezierCurve init_curve(const ParamVector& theta_a, const ParamVector& theta_b,
                              std::size_t k = 2) {
  require_same_layout(theta_a, theta_b, "init_curve");
  if (k < 1) throw ParameterError("init_curve: degree must be >= 1");
  BezierCurve curve{theta_a, theta_b, {}};
  for (std::size_t j = 1; j < k; ++j) {
    const double s = static_cast<double>(j) / static_cast<double>(k);
    ParamVector bend = theta_a;
    for (std::size_t i = 0; i < bend.size(); ++i) bend[i] += s * (theta_b[i] - theta_a[i]);
    curve.bends.push_back(std::move(bend));
  }
  return curve;
}

/// Curve training against an arbitrary objective(point, rows) -> LossGrad
/// over `n` training examples. Endpoints are never written.
template <class Objective>
BezierCurve train_curve_with(BezierCurve curve, std::size_t n, const CurveTrainConfig& cfg,
                             Objective&& objective) {
  cfg.validate();
  for (const auto& b : curve.bends) require_same_layout(curve.start, b, "train_curve");
  require_same_layout(curve.start, curve.end, "train_curve");
  const std::size_t k = curve.degree();
  Rng shuffle_rng(derive_seed(cfg.seed, stream_id("curve_shuffle")));
  Rng t_rng(derive_seed(cfg.seed, stream_id("curve_t")));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = linear_decay_lr(epoch, cfg.lr, cfg.schedule);
    for (const auto& rows : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
      const double t = t_rng.uniform();
      const LossGrad lg = objective(curve_point(curve, t), rows);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch + 1, "non-finite curve loss");
      if (lr == 0.0) continue;
      for (std::size_t j = 1; j < k; ++j) axpy(-lr * bernstein(k, j, t), lg.grad, curve.bends[j - 1]);
    }
  }
  return curve;
}

inline BezierCurve train_curve(const ModelSpec& spec, const BezierCurve& curve, const Dataset& ds,
                               const CurveTrainConfig& cfg) {
  detail::check_theta(spec, curve.start);
  return train_curve_with(curve, ds.size(), cfg,
                          [&](const ParamVector& point, const std::vector<std::size_t>& rows) {
                            return loss_grad(spec, point, ds.batch(rows), cfg.weight_decay);
                          });
}

inline CurveProfile curve_profile(const ModelSpec& spec, const BezierCurve& curve,
                                  const Dataset& ds,
                                  const std::vector<double>& t_grid = default_t_grid()) {
  const bool has0 = std::find(t_grid.begin(), t_grid.end(), 0.0) != t_grid.end();
  const bool has1 = std::find(t_grid.begin(), t_grid.end(), 1.0) != t_grid.end();
  if (!has0 || !has1) throw ParameterError("curve_profile: t grid must contain 0 and 1");
  CurveProfile prof;
  std::vector<double> ts = t_grid;
  std::sort(ts.begin(), ts.end());
  for (double t : ts) {
    const Evaluation e = evaluate(spec, curve_point(curve, t), ds);
    prof.t.push_back(t);
    prof.error.push_back(e.err01);
    prof.cross_entropy.push_back(e.loss);
  }
  return prof;
}

/// mc = b - L(t*), b = (L(0) + L(1)) / 2, t* = argmax_t |b - L(t)| (ties: smallest t).
inline double mode_connectivity(const CurveProfile& profile,
                                ProfileMetric metric = ProfileMetric::error01) {
  const auto& values = metric == ProfileMetric::error01 ? profile.error : profile.cross_entropy;
  if (profile.t.empty() || values.size() != profile.t.size())
    throw ParameterError("mode_connectivity: malformed profile");
  std::vector<std::size_t> order(profile.t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return profile.t[a] < profile.t[b]; });
  if (profile.t[order.front()] != 0.0 || profile.t[order.back()] != 1.0)
    throw ParameterError("mode_connectivity: profile must include t=0 and t=1");
  const double base = 0.5 * (values[order.front()] + values[order.back()]);
  std::size_t best = order.front();
  double best_dev = -1.0;
  for (std::size_t i : order) {
    const double dev = std::abs(base - values[i]);
    if (dev > best_dev) {
      best_dev = dev;
      best = i;
    }
  }
  return base - values[best];
}

inline nlohmann::json profile_to_json(const CurveProfile& p) {
  return {{"t", p.t},
          {"error", p.error},
          {"cross_entropy", p.cross_entropy},
          {"mc", mode_connectivity(p)},
          {"mc_cross_entropy", mode_connectivity(p, ProfileMetric::cross_entropy)}};
}

inline CurveProfile profile_from_json(const nlohmann::json& j) {
  CurveProfile p;
  try {
    p.t = j.at("t").get<std::vector<double>>();
    p.error = j.at("error").get<std::vector<double>>();
    if (j.contains("cross_entropy")) p.cross_entropy = j.at("cross_entropy").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("curve profile JSON: ") + e.what());
  }
  if (p.error.size() != p.t.size()) throw FormatError("curve profile JSON: length mismatch");
  if (p.cross_entropy.empty()) p.cross_entropy.assign(p.t.size(), 0.0);
  return p;
}

}  // namespace llab

#endif  // LLAB_MODECONN_HPP
