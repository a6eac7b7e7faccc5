// llab: train models, measure landscape metrics, run sweeps, label phases, plot.
//
// Exit codes: 0 success, 2 usage/config, 3 numeric divergence, 4 I/O.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "llab/llab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Invocation {
  std::string command_line;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
};

Invocation g_invocation;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw llab::IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

fs::path manifest_path_for(const fs::path& out, bool is_dir) {
  return is_dir ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
}

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const json& seeds, const std::vector<fs::path>& outputs,
                    const json& extra_timings = json::object()) {
  json m;
  m["command"] = command;
  m["command_line"] = g_invocation.command_line;
  m["version"] = llab::kVersion;
  m["config"] = config;
  m["seeds"] = seeds;
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(p.string());
  outs.push_back(path.string());
  m["outputs"] = outs;
  json timings = extra_timings;
  timings["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - g_invocation.start).count();
  m["timings"] = timings;
  llab::write_text_file(path, m.dump(2) + "\n");
}

llab::Dataset training_data(const llab::RunConfig& cfg, llab::Dataset* test = nullptr) {
  auto [train, tst] = llab::make_base_datasets(cfg.data, cfg.seed);
  if (test) *test = tst;
  return llab::perturb_training_set(train, cfg.data.n_keep, cfg.data.label_noise,
                                    cfg.data.pixel_noise,
                                    llab::derive_seed(cfg.seed, llab::stream_id("perturb")));
}

std::string history_csv(const llab::TrainHistory& h) {
  std::string out = "epoch,train_loss,train_acc,test_loss,test_acc,lr\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const auto& r = h.epochs[e];
    out += std::to_string(e) + ',' + g17(r.train_loss) + ',' + g17(r.train_acc) + ',' +
           g17(r.test_loss) + ',' + g17(r.test_acc) + ',' + g17(r.lr_used) + '\n';
  }
  return out;
}

std::pair<llab::Checkpoint, llab::Checkpoint> load_pair(const std::string& a, const std::string& b) {
  llab::Checkpoint ca = llab::load_checkpoint(a);
  llab::Checkpoint cb = llab::load_checkpoint(b);
  if (!(ca.spec == cb.spec)) throw llab::DimensionError("checkpoints have different model specs");
  return {std::move(ca), std::move(cb)};
}

void check_model_matches(const llab::RunConfig& cfg, const llab::ModelSpec& spec) {
  if (spec.input_dim != cfg.data.input_dim())
    throw llab::DimensionError("checkpoint input_dim does not match the configured dataset");
}

void emit_record(const json& record, const std::string& out) {
  std::cout << record.dump(2) << "\n";
  if (!out.empty()) {
    ensure_parent(out);
    llab::write_text_file(out, record.dump(2) + "\n");
  }
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const llab::RunConfig cfg = llab::load_config(config_path);
  llab::Dataset test;
  const llab::Dataset train = training_data(cfg, &test);
  if (cfg.model.input_dim != train.dim())
    throw llab::ConfigError("model.input_dim: does not match the dataset dimension");
  const llab::TrainResult res = llab::sgd_train(cfg.model, train, test, cfg.train);

  ensure_dir(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "model.ckpt";
  const fs::path hist = fs::path(out_dir) / "history.csv";
  json meta{{"version", llab::kVersion},
            {"seed", cfg.seed},
            {"epochs", res.history.epochs.size()},
            {"best_train_loss_epoch", res.history.best_train_loss_epoch},
            {"best_test_acc_epoch", res.history.best_test_acc_epoch},
            {"plateau_stop", res.history.plateau_stop},
            {"weight_decay", cfg.train.weight_decay},
            {"config", cfg.source}};
  llab::save_checkpoint(ckpt, cfg.model, res.theta, meta);
  llab::write_text_file(hist, history_csv(res.history));
  write_manifest(manifest_path_for(out_dir, true), "train", cfg.source,
                 {{"seed", cfg.seed}, {"init", llab::init_seed(cfg.train)}}, {ckpt, hist});

  const auto& best = res.history.epochs.at(res.history.best_train_loss_epoch);
  std::cout << "trained " << res.history.epochs.size() << " epochs; best train loss "
            << best.train_loss << " (epoch " << res.history.best_train_loss_epoch
            << "), test acc " << best.test_acc << "\n"
            << "wrote " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_hessian(const std::string& model, const std::string& config_path, bool exact,
                const std::string& out) {
  const llab::RunConfig cfg = llab::load_config(config_path);
  const llab::Checkpoint ck = llab::load_checkpoint(model);
  check_model_matches(cfg, ck.spec);
  const llab::Dataset train = training_data(cfg);
  const llab::Batch batch = llab::metric_batch(train, cfg.metrics);
  const double wd = cfg.train.weight_decay;

  llab::CurvatureConfig cc = cfg.metrics;
  if (exact) {
    // Oracle mode converges the iteration much further than the sweep default.
    cc.rtol = std::min(cc.rtol, 1e-10);
    cc.max_iter = std::max<std::size_t>(cc.max_iter, 20000);
  }
  const llab::EigenEstimate eig = llab::top_eigenvalue(ck.spec, ck.theta, batch, wd, cc);
  const llab::TraceEstimate trc = llab::trace_hutchinson(ck.spec, ck.theta, batch, wd, cfg.metrics);
  json rec{{"metric", "hessian"},
           {"model", model},
           {"parameters", ck.theta.size()},
           {"batch_rows", batch.X.rows()},
           {"lambda_max", eig.lambda_max},
           {"power_iterations", eig.iters},
           {"degenerate", eig.degenerate},
           {"trace", trc.trace},
           {"trace_probes", trc.probes_used}};

  int code = kExitOk;
  if (exact) {
    const llab::Matrix H = llab::exact_hessian(ck.spec, ck.theta, batch, wd);
    const std::vector<double> ev = llab::symmetric_eigenvalues(H);
    double dominant = 0.0;
    for (double v : ev)
      if (std::abs(v) > std::abs(dominant)) dominant = v;
    const double rel = std::abs(eig.lambda_max - dominant) / std::max(std::abs(dominant), 1e-300);
    rec["exact"] = {{"lambda_max", dominant},
                    {"trace", llab::trace(H)},
                    {"relative_error", rel},
                    {"within_tolerance", rel < 1e-3}};
    if (!(rel < 1e-3)) {
      std::cerr << "error: power iteration differs from the exact eigenvalue by " << rel
                << " (relative)\n";
      code = kExitNumeric;
    }
  }
  emit_record(rec, out);
  if (!out.empty())
    write_manifest(manifest_path_for(out, false), "hessian", cfg.source,
                   {{"seed", cfg.seed}, {"metrics", cfg.metrics.seed}}, {out});
  return code;
}

int cmd_cka(const std::string& a, const std::string& b, const std::string& config_path,
            const std::string& out) {
  const llab::RunConfig cfg = llab::load_config(config_path);
  const auto [ca, cb] = load_pair(a, b);
  check_model_matches(cfg, ca.spec);
  const llab::Dataset train = training_data(cfg);
  const std::uint64_t probe_seed = llab::derive_seed(cfg.seed, llab::stream_id("probes"));
  const llab::ProbeSet probes = llab::make_probes(train, cfg.probes, probe_seed);
  json rec{{"metric", "cka"},
           {"models", {a, b}},
           {"probe_source", probes.source.describe()},
           {"probes", probes.X.rows()}};
  try {
    rec["cka"] = llab::cka_between_models(ca.spec, ca.theta, cb.theta, probes);
  } catch (const llab::DegenerateError& e) {
    rec["cka"] = nullptr;
    rec["note"] = e.what();
  }
  emit_record(rec, out);
  if (!out.empty())
    write_manifest(manifest_path_for(out, false), "cka", cfg.source,
                   {{"seed", cfg.seed}, {"probes", probe_seed}}, {out});
  return kExitOk;
}

int cmd_modeconn(const std::string& a, const std::string& b, const std::string& config_path,
                 const std::string& out, const std::string& profile_out) {
  const llab::RunConfig cfg = llab::load_config(config_path);
  const auto [ca, cb] = load_pair(a, b);
  check_model_matches(cfg, ca.spec);
  const llab::Dataset train = training_data(cfg);
  llab::BezierCurve curve = llab::init_curve(ca.theta, cb.theta, cfg.curve.bends);
  if (!(ca.theta == cb.theta)) curve = llab::train_curve(ca.spec, curve, train, cfg.curve);
  const llab::CurveProfile prof = llab::curve_profile(ca.spec, curve, train, cfg.curve.t_grid);
  json rec{{"metric", "modeconn"},
           {"models", {a, b}},
           {"mc", llab::mode_connectivity(prof)},
           {"mc_cross_entropy", llab::mode_connectivity(prof, llab::ProfileMetric::cross_entropy)},
           {"profile", llab::profile_to_json(prof)}};
  std::vector<fs::path> outputs;
  if (!out.empty()) outputs.emplace_back(out);
  if (!profile_out.empty()) {
    ensure_parent(profile_out);
    llab::write_text_file(profile_out, llab::profile_to_json(prof).dump(2) + "\n");
    outputs.emplace_back(profile_out);
  }
  emit_record(rec, out);
  if (!outputs.empty())
    write_manifest(manifest_path_for(outputs.front(), false), "modeconn", cfg.source,
                   {{"seed", cfg.seed}, {"curve", cfg.curve.seed}}, outputs);
  return kExitOk;
}

int cmd_l2(const std::string& a, const std::string& b, const std::string& out) {
  const auto [ca, cb] = load_pair(a, b);
  json rec{{"metric", "l2"}, {"models", {a, b}}, {"l2", llab::l2_distance(ca.theta, cb.theta)}};
  emit_record(rec, out);
  if (!out.empty())
    write_manifest(manifest_path_for(out, false), "l2", json::object(), json::object(), {out});
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, std::size_t workers,
              bool quiet) {
  const llab::RunConfig cfg = llab::load_config(config_path);
  const llab::GridSpec grid = cfg.grid();
  if (grid.model.input_dim != grid.data.input_dim())
    throw llab::ConfigError("model.input_dim: does not match the dataset dimension");
  ensure_dir(out_dir);
  if (!quiet)
    std::cerr << "sweep: " << grid.load.values.size() << " x " << grid.temp.values.size()
              << " cells, " << grid.replicates << " replicates, " << workers << " workers\n";
  const llab::SweepResult res = llab::run_sweep(grid, workers);

  std::vector<llab::CellSummary> rows;
  json cells = json::array();
  for (const auto& c : res.cells) {
    rows.push_back(c.summary);
    cells.push_back(llab::to_json(c));
  }
  rows = llab::annotate_phases(std::move(rows), cfg.phase);
  const fs::path csv = fs::path(out_dir) / "results.csv";
  const fs::path detail = fs::path(out_dir) / "cells.json";
  llab::write_text_file(csv, llab::results_to_csv(rows));
  llab::write_text_file(detail, cells.dump(1) + "\n");

  json seeds{{"seed", grid.seed}};
  json reps = json::array();
  for (const auto& c : res.cells)
    for (const auto& r : c.replicates)
      reps.push_back({{"load", c.load_value}, {"temp", c.temp_value}, {"seed", r.seed}});
  seeds["replicates"] = reps;
  json config = cfg.source;
  config["resolved_grid"] = llab::to_json(grid);
  config["resolved_phase"] = llab::to_json(cfg.phase);
  write_manifest(manifest_path_for(out_dir, true), "sweep", config, seeds, {csv, detail},
                 {{"sweep_seconds", res.wall_seconds}, {"workers", workers}});
  if (!quiet) std::cerr << "sweep: done in " << res.wall_seconds << " s\n";
  std::cout << "wrote " << csv.string() << "\n";
  return kExitOk;
}

int cmd_phase(const std::string& results, const std::string& config_path, const std::string& out) {
  llab::PhaseThresholds th;
  json config = json::object();
  if (!config_path.empty()) {
    config = llab::read_json_file(config_path);
    th = config.contains("schema") ? llab::parse_config(config).phase : llab::parse_thresholds(config);
  }
  const auto rows = llab::annotate_phases(llab::read_results_csv(results), th);
  ensure_parent(out);
  llab::write_text_file(out, llab::results_to_csv(rows));
  json used = llab::to_json(th);
  write_manifest(manifest_path_for(out, false), "phase", {{"input", config}, {"thresholds", used}},
                 json::object(), {out});
  std::size_t labeled = 0;
  for (const auto& r : rows)
    if (r.converged()) ++labeled;
  std::cout << "labeled " << labeled << " of " << rows.size() << " cells\n";
  return kExitOk;
}

int cmd_plot(const std::string& results, const std::string& metric, const std::string& out,
             const std::string& orientation) {
  llab::Orientation o = llab::Orientation::standard;
  if (orientation == "flipped") o = llab::Orientation::flipped;
  else if (orientation != "standard") throw llab::ConfigError("--orientation: expected standard or flipped");
  const auto rows = llab::read_results_csv(results);
  ensure_parent(out);
  llab::emit_heatmap(rows, metric, out, o);
  write_manifest(manifest_path_for(out, false), "plot",
                 {{"results", results}, {"metric", metric}, {"orientation", orientation}},
                 json::object(), {out});
  return kExitOk;
}

int cmd_profile_plot(const std::string& profile, const std::string& out) {
  const json j = llab::read_json_file(profile);
  const llab::CurveProfile prof = llab::profile_from_json(j.contains("profile") ? j.at("profile") : j);
  ensure_parent(out);
  llab::render_curve_profile(prof, out);
  write_manifest(manifest_path_for(out, false), "profile-plot", {{"profile", profile}},
                 json::object(), {out});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_invocation.command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Loss-landscape phase diagrams for small MLPs"};
  app.set_version_flag("--version", std::string(llab::kVersion));
  app.require_subcommand(1);

  std::string config, out, model, a, b, results, metric, profile, profile_out;
  std::string orientation = "standard";
  bool exact = false, quiet = false;
  std::size_t workers = llab::default_workers();

  auto* train = app.add_subcommand("train", "Train one model; writes model.ckpt, history.csv");
  train->add_option("-c,--config", config, "JSON config")->required();
  train->add_option("-o,--out", out, "Output directory")->required();

  auto* hessian = app.add_subcommand("hessian", "Top Hessian eigenvalue and trace of a checkpoint");
  hessian->add_option("-m,--model", model, "Checkpoint")->required();
  hessian->add_option("-c,--config", config, "JSON config (data, metrics)")->required();
  hessian->add_flag("--exact", exact, "Also form the dense Hessian and check the estimate");
  hessian->add_option("-o,--out", out, "Write the record here");

  auto* cka = app.add_subcommand("cka", "CKA between two checkpoints on a probe set");
  cka->add_option("a", a, "First checkpoint")->required();
  cka->add_option("b", b, "Second checkpoint")->required();
  cka->add_option("-c,--config", config, "JSON config (data, probes)")->required();
  cka->add_option("-o,--out", out, "Write the record here");

  auto* mc = app.add_subcommand("modeconn", "Train a Bezier curve between two checkpoints");
  mc->add_option("a", a, "First checkpoint")->required();
  mc->add_option("b", b, "Second checkpoint")->required();
  mc->add_option("-c,--config", config, "JSON config (data, curve)")->required();
  mc->add_option("-o,--out", out, "Write the record here");
  mc->add_option("--profile", profile_out, "Write the curve profile JSON here");

  auto* l2 = app.add_subcommand("l2", "Parameter-space distance between two checkpoints");
  l2->add_option("a", a, "First checkpoint")->required();
  l2->add_option("b", b, "Second checkpoint")->required();
  l2->add_option("-o,--out", out, "Write the record here");

  auto* sweep = app.add_subcommand("sweep", "Run a load x temperature grid");
  sweep->add_option("-c,--config", config, "JSON config with a grid section")->required();
  sweep->add_option("-o,--out", out, "Output directory")->required();
  sweep->add_option("-j,--workers", workers, "Worker threads (default: LLAB_WORKERS or all cores)")
      ->check(CLI::PositiveNumber);
  sweep->add_flag("-q,--quiet", quiet, "No progress output");

  auto* phase = app.add_subcommand("phase", "Label every cell of a results CSV with its phase");
  phase->add_option("results", results, "results.csv")->required();
  phase->add_option("-c,--config", config, "Config or bare thresholds JSON");
  phase->add_option("-o,--out", out, "Annotated CSV")->required();

  auto* plot = app.add_subcommand("plot", "Heatmap SVG of one metric");
  plot->add_option("results", results, "results.csv")->required();
  plot->add_option("--metric", metric,
                   "train_loss, test_acc, lambda_max, hessian_trace, mc, cka, l2, mu_hat, beta_hat or phase")
      ->required();
  plot->add_option("-o,--out", out, "SVG path")->required();
  plot->add_option("--orientation", orientation, "standard or flipped");

  auto* pplot = app.add_subcommand("profile-plot", "SVG of a curve profile");
  pplot->add_option("profile", profile, "Profile JSON")->required();
  pplot->add_option("-o,--out", out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, out);
    if (*hessian) return cmd_hessian(model, config, exact, out);
    if (*cka) return cmd_cka(a, b, config, out);
    if (*mc) return cmd_modeconn(a, b, config, out, profile_out);
    if (*l2) return cmd_l2(a, b, out);
    if (*sweep) return cmd_sweep(config, out, workers, quiet);
    if (*phase) return cmd_phase(results, config, out);
    if (*plot) return cmd_plot(results, metric, out, orientation);
    if (*pplot) return cmd_profile_plot(profile, out);
  } catch (const llab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const llab::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const llab::NonFiniteError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const llab::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const llab::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const llab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
