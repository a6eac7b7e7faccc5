#ifndef LLAB_SWEEP_HPP
#define LLAB_SWEEP_HPP

// Load x temperature grid: R replicates per cell, per-replicate curvature and
// accuracy, disjoint replicate pairs for CKA / mode connectivity / distance,
// aggregated into one CSV row per cell.
//
// Every seed is keyed by (axis values, replicate) rather than grid indices, so
// adding a row or column never changes the cells already present.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "llab/autodiff.hpp"
#include "llab/cka.hpp"
#include "llab/data.hpp"
#include "llab/error.hpp"
#include "llab/hessian.hpp"
#include "llab/modeconn.hpp"
#include "llab/numcore.hpp"
#include "llab/trainer.hpp"

namespace llab {

inline constexpr const char* kVersion = "0.3.0";

enum class LoadKind { width, n_samples, noise_frac, pixel_noise };
enum class TempKind { batch_size, lr, weight_decay };

inline const char* to_string(LoadKind k) {
  switch (k) {
    case LoadKind::width: return "width";
    case LoadKind::n_samples: return "n_samples";
    case LoadKind::noise_frac: return "noise_frac";
    case LoadKind::pixel_noise: return "pixel_noise";
  }
  return "?";
}

inline const char* to_string(TempKind k) {
  switch (k) {
    case TempKind::batch_size: return "batch_size";
    case TempKind::lr: return "lr";
    case TempKind::weight_decay: return "weight_decay";
  }
  return "?";
}

inline std::optional<LoadKind> parse_load_kind(const std::string& s) {
  for (auto k : {LoadKind::width, LoadKind::n_samples, LoadKind::noise_frac, LoadKind::pixel_noise})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline std::optional<TempKind> parse_temp_kind(const std::string& s) {
  for (auto k : {TempKind::batch_size, TempKind::lr, TempKind::weight_decay})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// How a cell's training and test sets are produced.
struct DataRecipe {
  std::string kind = "blobs";  // blobs | spirals | csv
  std::size_t n_train = 1000;
  std::size_t n_test = 500;
  std::size_t num_classes = 4;
  std::size_t dim = 8;
  double spread = 0.5;       // blobs
  double noise = 0.05;       // spirals
  std::string path;          // csv
  std::string test_path;     // csv; empty means evaluate on the training file
  std::size_t n_keep = 0;    // 0 keeps every training row
  double label_noise = 0.0;  // fraction of randomized labels
  double pixel_noise = 0.0;  // Uniform[0, u] feature noise

  std::size_t input_dim() const { return kind == "spirals" ? 2 : dim; }
};

/// Base (unperturbed) training and test sets.
inline std::pair<Dataset, Dataset> make_base_datasets(const DataRecipe& r, std::uint64_t seed) {
  const std::uint64_t s_train = derive_seed(seed, stream_id("data_train"));
  const std::uint64_t s_test = derive_seed(seed, stream_id("data_test"));
  if (r.kind == "blobs")
    return {gen_blobs(r.n_train, r.num_classes, r.dim, r.spread, s_train),
            gen_blobs(r.n_test, r.num_classes, r.dim, r.spread, s_test)};
  if (r.kind == "spirals")
    return {gen_spirals(r.n_train, r.num_classes, r.noise, s_train),
            gen_spirals(r.n_test, r.num_classes, r.noise, s_test)};
  if (r.kind == "csv") {
    Dataset train = load_csv(r.path);
    Dataset test = r.test_path.empty() ? train : load_csv(r.test_path);
    return {std::move(train), std::move(test)};
  }
  throw ConfigError("data.kind must be blobs, spirals or csv (got '" + r.kind + "')");
}

/// Fixed pipeline: subsample -> randomize labels -> additive feature noise.
inline Dataset perturb_training_set(const Dataset& base, std::size_t n_keep, double label_noise,
                                    double pixel_noise, std::uint64_t seed) {
  Dataset ds = base;
  if (n_keep != 0 && n_keep != ds.size()) ds = subsample(ds, n_keep, derive_seed(seed, stream_id("subsample")));
  if (label_noise > 0.0) ds = randomize_labels(ds, label_noise, derive_seed(seed, stream_id("labels")));
  if (pixel_noise > 0.0) ds = perturb_uniform(ds, pixel_noise, derive_seed(seed, stream_id("pixels")));
  return ds;
}

struct ProbeConfig {
  ProbeSource::Kind source = ProbeSource::Kind::mixup;
  std::size_t m = kDefaultProbeCount;
  double alpha = kDefaultMixupAlpha;
  double noise = 0.0;  // for pixel_noise probes
};

inline ProbeSet make_probes(const Dataset& ds, const ProbeConfig& cfg, std::uint64_t seed) {
  switch (cfg.source) {
    case ProbeSource::Kind::mixup: return mixup_probes(ds, cfg.m, cfg.alpha, seed);
    case ProbeSource::Kind::pixel_noise: return noise_probes(ds, cfg.m, cfg.noise, seed);
    case ProbeSource::Kind::raw: return raw_probes(ds, cfg.m, seed);
  }
  throw ConfigError("unknown probe source");
}

template <class Kind>
struct Axis {
  Kind kind{};
  std::vector<double> values;
};

struct GridSpec {
  Axis<LoadKind> load{LoadKind::width, {}};
  Axis<TempKind> temp{TempKind::batch_size, {}};
  std::size_t replicates = 5;
  ModelSpec model;
  TrainConfig train;
  DataRecipe data;
  CurvatureConfig metrics;
  CurveTrainConfig curve;
  ProbeConfig probes;
  std::uint64_t seed = 0;

  void validate() const {
    if (replicates < 2) throw ConfigError("grid.replicates must be >= 2");
    auto monotone = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw ConfigError(std::string(name) + " must not be empty");
      const bool up = v.size() < 2 || v[1] > v[0];
      for (std::size_t i = 1; i < v.size(); ++i)
        if (up ? !(v[i] > v[i - 1]) : !(v[i] < v[i - 1]))
          throw ConfigError(std::string(name) + " must be strictly monotone");
    };
    monotone(load.values, "grid.load.values");
    monotone(temp.values, "grid.temp.values");
    auto integral = [](double v) { return v >= 1.0 && std::floor(v) == v; };
    for (double v : load.values) {
      if ((load.kind == LoadKind::width || load.kind == LoadKind::n_samples) && !integral(v))
        throw ConfigError("grid.load.values: width / n_samples must be positive integers");
      if (load.kind == LoadKind::noise_frac && !(v >= 0.0 && v <= 1.0))
        throw ConfigError("grid.load.values: noise_frac must lie in [0,1]");
      if (load.kind == LoadKind::pixel_noise && !(v >= 0.0))
        throw ConfigError("grid.load.values: pixel_noise must be >= 0");
    }
    for (double v : temp.values) {
      if (temp.kind == TempKind::batch_size && !integral(v))
        throw ConfigError("grid.temp.values: batch sizes must be positive integers");
      if (temp.kind != TempKind::batch_size && !(v >= 0.0))
        throw ConfigError("grid.temp.values must be >= 0");
    }
    model.validate();
    train.validate();
    metrics.validate();
    curve.validate();
  }
};

/// Resolved per-cell configuration.
struct CellSetup {
  ModelSpec model;
  TrainConfig train;
  CurveTrainConfig curve;
  std::size_t n_keep = 0;
  double label_noise = 0.0;
  double pixel_noise = 0.0;
};

inline CellSetup cell_setup(const GridSpec& g, double load, double temp) {
  CellSetup c{g.model, g.train, g.curve, g.data.n_keep, g.data.label_noise, g.data.pixel_noise};
  switch (g.load.kind) {
    case LoadKind::width:
      for (auto& w : c.model.hidden_widths) w = static_cast<std::size_t>(load);
      break;
    case LoadKind::n_samples: c.n_keep = static_cast<std::size_t>(load); break;
    case LoadKind::noise_frac: c.label_noise = load; break;
    case LoadKind::pixel_noise: c.pixel_noise = load; break;
  }
  switch (g.temp.kind) {
    case TempKind::batch_size: c.train.batch_size = static_cast<std::size_t>(temp); break;
    case TempKind::lr: c.train.lr = temp; break;
    case TempKind::weight_decay: c.train.weight_decay = temp; break;
  }
  c.curve.weight_decay = c.train.weight_decay;
  return c;
}

inline std::uint64_t value_key(double v) { return std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v); }

inline std::uint64_t replicate_seed(const GridSpec& g, double load, double temp, std::size_t r) {
  return derive_seed(g.seed, stream_id("replicate"), value_key(load), value_key(temp), r);
}

inline double l2_distance(const ParamVector& a, const ParamVector& b) {
  require_same_layout(a, b, "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct ReplicateMetrics {
  std::uint64_t seed = 0;
  bool converged = false;
  std::string failure;
  std::size_t epochs = 0;
  double train_loss = NAN;
  double train_acc = NAN;
  double test_acc = NAN;
  double lambda_max = NAN;
  double hessian_trace = NAN;
};

struct PairMetrics {
  std::size_t a = 0;
  std::size_t b = 0;
  bool valid = false;
  double mc = NAN;
  double mc_cross_entropy = NAN;
  double cka = NAN;
  double l2 = NAN;
  CurveProfile profile;
};

struct Stat {
  double mean = NAN;
  double sd = NAN;
  std::size_t n = 0;
};

/// Mean and sample standard deviation over the finite entries.
inline Stat summarize(const std::vector<double>& xs) {
  Stat s;
  double sum = 0.0;
  for (double x : xs)
    if (std::isfinite(x)) {
      sum += x;
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double x : xs)
    if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

/// One CSV row.
struct CellSummary {
  std::string load_kind;
  double load_value = 0.0;
  std::string temp_kind;
  double temp_value = 0.0;
  std::size_t n_replicates = 0;
  std::size_t n_converged = 0;
  Stat train_loss, test_acc, lambda_max, hessian_trace, mc, cka, l2;
  double mu_hat = NAN;
  double beta_hat = NAN;
  std::string phase_label;

  bool converged() const noexcept { return n_converged > 0; }
};

struct CellResult {
  std::size_t load_index = 0;
  std::size_t temp_index = 0;
  double load_value = 0.0;
  double temp_value = 0.0;
  std::vector<ReplicateMetrics> replicates;
  std::vector<PairMetrics> pairs;
  CellSummary summary;

  bool converged() const noexcept { return summary.converged(); }
};

/// Test hook: explicit per-replicate seeds replacing the derived ones.
struct CellHooks {
  std::vector<std::uint64_t> replicate_seeds;
};

inline CellSummary summarize_cell(const GridSpec& g, const CellResult& cell) {
  CellSummary s;
  s.load_kind = to_string(g.load.kind);
  s.temp_kind = to_string(g.temp.kind);
  s.load_value = cell.load_value;
  s.temp_value = cell.temp_value;
  s.n_replicates = cell.replicates.size();
  std::vector<double> loss, acc, lam, tr, mc, ck, l2;
  for (const auto& r : cell.replicates) {
    if (!r.converged) continue;
    ++s.n_converged;
    loss.push_back(r.train_loss);
    acc.push_back(r.test_acc);
    lam.push_back(r.lambda_max);
    tr.push_back(r.hessian_trace);
  }
  for (const auto& p : cell.pairs) {
    if (!p.valid) continue;
    mc.push_back(p.mc);
    ck.push_back(p.cka);
    l2.push_back(p.l2);
  }
  s.train_loss = summarize(loss);
  s.test_acc = summarize(acc);
  s.lambda_max = summarize(lam);
  s.hessian_trace = summarize(tr);
  s.mc = summarize(mc);
  s.cka = summarize(ck);
  s.l2 = summarize(l2);
  s.mu_hat = s.cka.mean;
  s.beta_hat = s.mc.mean;
  return s;
}

inline CellResult run_cell(const GridSpec& grid, std::size_t i, std::size_t j,
                           const CellHooks& hooks = {}) {
  grid.validate();
  if (i >= grid.load.values.size() || j >= grid.temp.values.size())
    throw ParameterError("run_cell: cell index out of range");
  const double load = grid.load.values[i];
  const double temp = grid.temp.values[j];
  const CellSetup setup = cell_setup(grid, load, temp);
  if (setup.model.input_dim != grid.data.input_dim())
    throw ConfigError("model.input_dim does not match the dataset dimension");

  auto [base_train, test] = make_base_datasets(grid.data, grid.seed);
  const Dataset train = perturb_training_set(
      base_train, setup.n_keep, setup.label_noise, setup.pixel_noise,
      derive_seed(grid.seed, stream_id("perturb"), value_key(load)));

  CellResult cell;
  cell.load_index = i;
  cell.temp_index = j;
  cell.load_value = load;
  cell.temp_value = temp;

  const std::size_t R = grid.replicates;
  std::vector<std::optional<ParamVector>> models(R);
  for (std::size_t r = 0; r < R; ++r) {
    ReplicateMetrics m;
    m.seed = r < hooks.replicate_seeds.size() ? hooks.replicate_seeds[r]
                                              : replicate_seed(grid, load, temp, r);
    TrainConfig tc = setup.train;
    tc.seed = m.seed;
    try {
      TrainResult tr = sgd_train(setup.model, train, test, tc);
      const Evaluation ev_train = evaluate(setup.model, tr.theta, train, tc.weight_decay, true);
      const Evaluation ev_test = evaluate(setup.model, tr.theta, test);
      CurvatureConfig cc = grid.metrics;
      cc.seed = derive_seed(m.seed, stream_id("metrics"));
      const Batch mb = metric_batch(train, cc);
      const EigenEstimate eig = top_eigenvalue(setup.model, tr.theta, mb, tc.weight_decay, cc);
      const TraceEstimate trc = trace_hutchinson(setup.model, tr.theta, mb, tc.weight_decay, cc);
      m.epochs = tr.history.epochs.size();
      m.train_loss = ev_train.loss;
      m.train_acc = ev_train.acc;
      m.test_acc = ev_test.acc;
      m.lambda_max = eig.lambda_max;
      m.hessian_trace = trc.trace;
      m.converged = std::isfinite(m.train_loss) && std::isfinite(m.lambda_max) &&
                    std::isfinite(m.hessian_trace);
      if (m.converged) models[r] = std::move(tr.theta);
      else m.failure = "non-finite metric";
    } catch (const DivergenceError& e) {
      m.failure = e.what();
    }
    cell.replicates.push_back(std::move(m));
  }

  const ProbeSet probes = make_probes(
      train, grid.probes, derive_seed(grid.seed, stream_id("probes"), value_key(load), value_key(temp)));
  for (std::size_t p = 0; p + 1 < R; p += 2) {
    PairMetrics pm;
    pm.a = p;
    pm.b = p + 1;
    if (models[p] && models[p + 1]) {
      const ParamVector& ta = *models[p];
      const ParamVector& tb = *models[p + 1];
      try {
        pm.l2 = l2_distance(ta, tb);
        try {
          pm.cka = cka_between_models(setup.model, ta, tb, probes);
        } catch (const DegenerateError&) {
          pm.cka = NAN;
        }
        BezierCurve curve = init_curve(ta, tb, setup.curve.bends);
        // A model paired with itself is connected by the constant curve.
        if (!(ta == tb)) {
          CurveTrainConfig cc = setup.curve;
          cc.seed = derive_seed(grid.seed, stream_id("curve"), value_key(load), value_key(temp), p / 2);
          curve = train_curve(setup.model, curve, train, cc);
        }
        pm.profile = curve_profile(setup.model, curve, train, setup.curve.t_grid);
        pm.mc = mode_connectivity(pm.profile);
        pm.mc_cross_entropy = mode_connectivity(pm.profile, ProfileMetric::cross_entropy);
        pm.valid = true;
      } catch (const DivergenceError&) {
        pm.valid = false;
      }
    }
    cell.pairs.push_back(std::move(pm));
  }
  cell.summary = summarize_cell(grid, cell);
  return cell;
}

/// Runs fn(k) for k in [0, n) on `workers` threads; rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto body = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

inline std::size_t default_workers() {
  if (const char* env = std::getenv("LLAB_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct SweepResult {
  std::vector<CellResult> cells;  // sorted by (load index, temp index)
  double wall_seconds = 0.0;
};

inline SweepResult run_sweep(const GridSpec& grid, std::size_t workers = default_workers()) {
  grid.validate();
  const std::size_t nl = grid.load.values.size();
  const std::size_t nt = grid.temp.values.size();
  const auto t0 = std::chrono::steady_clock::now();
  SweepResult out;
  out.cells.resize(nl * nt);
  parallel_for(nl * nt, workers, [&](std::size_t k) {
    out.cells[k] = run_cell(grid, k / nt, k % nt);
  });
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& results_csv_columns() {
  static const std::vector<std::string> cols{
      "load_kind", "load_value", "temp_kind", "temp_value", "n_replicates", "n_converged",
      "train_loss_mean", "train_loss_sd", "test_acc_mean", "test_acc_sd", "lambda_max_mean",
      "lambda_max_sd", "hessian_trace_mean", "hessian_trace_sd", "mc_mean", "mc_sd", "cka_mean",
      "cka_sd", "l2_mean", "l2_sd", "mu_hat", "beta_hat", "phase_label"};
  return cols;
}

inline std::string format_g10(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string results_to_csv(std::vector<CellSummary> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const CellSummary& a, const CellSummary& b) {
    if (a.load_value != b.load_value) return a.load_value < b.load_value;
    return a.temp_value < b.temp_value;
  });
  std::string out;
  const auto& cols = results_csv_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out += (c ? "," : "") + cols[c];
  out += '\n';
  for (const auto& r : rows) {
    std::vector<std::string> f{r.load_kind, format_g10(r.load_value), r.temp_kind,
                               format_g10(r.temp_value), std::to_string(r.n_replicates),
                               std::to_string(r.n_converged)};
    for (const Stat* s : {&r.train_loss, &r.test_acc, &r.lambda_max, &r.hessian_trace, &r.mc,
                          &r.cka, &r.l2}) {
      f.push_back(format_g10(s->mean));
      f.push_back(format_g10(s->sd));
    }
    f.push_back(format_g10(r.mu_hat));
    f.push_back(format_g10(r.beta_hat));
    f.push_back(r.phase_label);
    for (std::size_t c = 0; c < f.size(); ++c) out += (c ? "," : "") + f[c];
    out += '\n';
  }
  return out;
}

inline std::string results_to_csv(const std::vector<CellResult>& cells) {
  std::vector<CellSummary> rows;
  for (const auto& c : cells) rows.push_back(c.summary);
  return results_to_csv(std::move(rows));
}

inline std::vector<CellSummary> parse_results_csv(std::istream& in, const std::string& name) {
  const auto& cols = results_csv_columns();
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw FormatError(name + ": empty results file");
  std::string expected;
  for (std::size_t c = 0; c < cols.size(); ++c) expected += (c ? "," : "") + cols[c];
  if (line != expected) throw FormatError(name + ":1: unexpected header");
  std::vector<CellSummary> rows;
  auto num = [&](const std::string& s) -> double {
    if (s.empty()) return NAN;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (*end != '\0') throw FormatError(name + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != cols.size())
      throw FormatError(name + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(cols.size()) + " fields");
    CellSummary r;
    r.load_kind = f[0];
    r.load_value = num(f[1]);
    r.temp_kind = f[2];
    r.temp_value = num(f[3]);
    r.n_replicates = static_cast<std::size_t>(num(f[4]));
    r.n_converged = static_cast<std::size_t>(num(f[5]));
    std::size_t k = 6;
    for (Stat* s : {&r.train_loss, &r.test_acc, &r.lambda_max, &r.hessian_trace, &r.mc, &r.cka,
                    &r.l2}) {
      s->mean = num(f[k++]);
      s->sd = num(f[k++]);
    }
    r.mu_hat = num(f[k++]);
    r.beta_hat = num(f[k++]);
    r.phase_label = f[k];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<CellSummary> read_results_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return parse_results_csv(f, path.string());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace llab

#endif  // LLAB_SWEEP_HPP
