#ifndef LLAB_CONFIG_HPP
#define LLAB_CONFIG_HPP

// JSON run configuration ("schema": 1). Top-level sections mirror the module
// configs: model, data, train, curve, metrics, grid, phase, plus the single
// "seed" every random stream derives from. Violations raise ConfigError whose
// message starts with the dotted path of the offending field.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llab/autodiff.hpp"
#include "llab/error.hpp"
#include "llab/hessian.hpp"
#include "llab/modeconn.hpp"
#include "llab/phase.hpp"
#include "llab/sweep.hpp"
#include "llab/trainer.hpp"

namespace llab {

inline constexpr int kConfigSchema = 1;

struct RunConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  DataRecipe data;
  TrainConfig train;
  CurveTrainConfig curve;
  CurvatureConfig metrics;
  ProbeConfig probes;
  std::optional<Axis<LoadKind>> load_axis;
  std::optional<Axis<TempKind>> temp_axis;
  std::size_t replicates = 5;
  PhaseThresholds phase;
  nlohmann::json source;

  GridSpec grid() const {
    if (!load_axis || !temp_axis) throw ConfigError("grid: missing required section");
    GridSpec g;
    g.load = *load_axis;
    g.temp = *temp_axis;
    g.replicates = replicates;
    g.model = model;
    g.train = train;
    g.data = data;
    g.metrics = metrics;
    g.curve = curve;
    g.probes = probes;
    g.seed = seed;
    return g;
  }
};

namespace detail {

/// A JSON object plus its dotted path; tracks which keys were consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw ConfigError(at(k) + ": unknown field");
  }

  Section sub(const std::string& key) const {
    if (!has(key)) throw ConfigError(at(key) + ": missing required field");
    return Section(j_.at(key), at(key));
  }

  std::optional<Section> optional_sub(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return Section(j_.at(key), at(key));
  }

  double number(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key) + ": missing required field");
    }
    const auto& v = j_.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "Infinity"))
      return std::numeric_limits<double>::infinity();
    throw ConfigError(at(key) + ": expected a number");
  }

  std::size_t count(const std::string& key, std::optional<std::size_t> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key) + ": missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError(at(key) + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
      throw ConfigError(at(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return j_.at(key).get<bool>();
  }

  std::string text(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key) + ": missing required field");
    }
    if (!j_.at(key).is_string()) throw ConfigError(at(key) + ": expected a string");
    return j_.at(key).get<std::string>();
  }

  std::vector<double> numbers(const std::string& key,
                              std::optional<std::vector<double>> fallback = std::nullopt) const {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key) + ": missing required field");
    }
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(at(key) + ": expected an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  const std::string& path() const noexcept { return path_; }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

inline std::optional<LinearDecay> parse_schedule(const Section& s, const std::string& key,
                                                 std::optional<LinearDecay> fallback) {
  const auto sec = s.optional_sub(key);
  if (!sec) return fallback;
  sec->allow({"kind", "start_epoch", "end_epoch", "final_fraction"});
  const std::string kind = sec->text("kind");
  if (kind == "constant") return std::nullopt;
  if (kind != "linear_decay") throw ConfigError(sec->at("kind") + ": expected constant or linear_decay");
  LinearDecay d;
  d.start_epoch = sec->count("start_epoch");
  d.end_epoch = sec->count("end_epoch");
  d.final_fraction = sec->number("final_fraction", 0.01);
  if (d.start_epoch >= d.end_epoch) throw ConfigError(sec->at("end_epoch") + ": must exceed start_epoch");
  return d;
}

template <class Fn>
void with_path(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& root) {
  using detail::Section;
  RunConfig cfg;
  cfg.source = root;
  const Section top(root, "");
  top.allow({"schema", "seed", "model", "data", "train", "curve", "metrics", "grid", "phase"});
  if (!top.has("schema")) throw ConfigError("schema: missing required field");
  if (!root.at("schema").is_number_integer() || root.at("schema").get<int>() != kConfigSchema)
    throw ConfigError("schema: unsupported version (expected " + std::to_string(kConfigSchema) + ")");
  cfg.seed = top.u64("seed", 0);

  const Section data = top.sub("data");
  data.allow({"kind", "n_train", "n_test", "num_classes", "dim", "spread", "noise", "path",
              "test_path", "n_keep", "label_noise", "pixel_noise"});
  auto& d = cfg.data;
  d.kind = data.text("kind");
  if (d.kind != "blobs" && d.kind != "spirals" && d.kind != "csv")
    throw ConfigError(data.at("kind") + ": expected blobs, spirals or csv");
  d.n_train = data.count("n_train", d.n_train);
  d.n_test = data.count("n_test", d.n_test);
  d.num_classes = data.count("num_classes", d.num_classes);
  d.dim = data.count("dim", d.dim);
  d.spread = data.number("spread", d.spread);
  d.noise = data.number("noise", d.noise);
  d.path = data.text("path", d.kind == "csv" ? std::nullopt : std::optional<std::string>(""));
  d.test_path = data.text("test_path", "");
  d.n_keep = data.count("n_keep", 0);
  d.label_noise = data.number("label_noise", 0.0);
  d.pixel_noise = data.number("pixel_noise", 0.0);
  if (!(d.label_noise >= 0.0 && d.label_noise <= 1.0))
    throw ConfigError(data.at("label_noise") + ": must lie in [0,1]");
  if (!(d.pixel_noise >= 0.0)) throw ConfigError(data.at("pixel_noise") + ": must be >= 0");
  if (d.kind != "csv" && d.n_train < d.num_classes)
    throw ConfigError(data.at("n_train") + ": must be >= num_classes");

  const Section model = top.sub("model");
  model.allow({"input_dim", "hidden_widths", "num_classes"});
  cfg.model.input_dim = model.count("input_dim", d.input_dim());
  cfg.model.num_classes = model.count("num_classes", d.num_classes);
  for (double w : model.numbers("hidden_widths")) {
    if (!(w >= 1.0) || std::floor(w) != w)
      throw ConfigError(model.at("hidden_widths") + ": widths must be positive integers");
    cfg.model.hidden_widths.push_back(static_cast<std::size_t>(w));
  }
  detail::with_path(model.path(), [&] { cfg.model.validate(); });

  const Section train = top.sub("train");
  train.allow({"lr", "batch_size", "weight_decay", "max_epochs", "plateau_eps", "plateau_epochs",
               "schedule", "linear_scale_lr", "reference_batch"});
  auto& t = cfg.train;
  t.lr = train.number("lr");
  t.batch_size = train.count("batch_size");
  t.weight_decay = train.number("weight_decay");
  t.max_epochs = train.count("max_epochs", t.max_epochs);
  t.plateau_eps = train.number("plateau_eps", t.plateau_eps);
  t.plateau_epochs = train.count("plateau_epochs", t.plateau_epochs);
  t.schedule = detail::parse_schedule(train, "schedule", std::nullopt);
  t.linear_scale_lr = train.flag("linear_scale_lr", false);
  t.reference_batch = train.count("reference_batch", t.reference_batch);
  t.seed = cfg.seed;
  if (!(t.lr >= 0.0)) throw ConfigError(train.at("lr") + ": must be >= 0");
  if (t.batch_size < 1) throw ConfigError(train.at("batch_size") + ": must be >= 1");
  if (!(t.weight_decay >= 0.0)) throw ConfigError(train.at("weight_decay") + ": must be >= 0");
  if (t.max_epochs < 1) throw ConfigError(train.at("max_epochs") + ": must be >= 1");

  if (const auto curve = top.optional_sub("curve")) {
    curve->allow({"epochs", "lr", "schedule", "batch_size", "bends", "t_grid"});
    auto& c = cfg.curve;
    c.epochs = curve->count("epochs", c.epochs);
    c.lr = curve->number("lr", c.lr);
    c.schedule = detail::parse_schedule(*curve, "schedule", c.schedule).value_or(
        LinearDecay{c.epochs, c.epochs + 1, 1.0});
    c.batch_size = curve->count("batch_size", c.batch_size);
    c.bends = curve->count("bends", c.bends);
    c.t_grid = curve->numbers("t_grid", c.t_grid);
    for (double x : c.t_grid)
      if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(curve->at("t_grid") + ": values must lie in [0,1]");
  }
  cfg.curve.weight_decay = cfg.train.weight_decay;
  cfg.curve.seed = derive_seed(cfg.seed, stream_id("curve"));
  detail::with_path("curve", [&] { cfg.curve.validate(); });

  if (const auto metrics = top.optional_sub("metrics")) {
    metrics->allow({"max_iter", "rtol", "metric_batch", "probes"});
    auto& m = cfg.metrics;
    m.max_iter = metrics->count("max_iter", m.max_iter);
    m.rtol = metrics->number("rtol", m.rtol);
    m.metric_batch = metrics->count("metric_batch", m.metric_batch);
    if (const auto probes = metrics->optional_sub("probes")) {
      probes->allow({"source", "m", "alpha", "noise"});
      const std::string src = probes->text("source", "mixup");
      if (src == "mixup") cfg.probes.source = ProbeSource::Kind::mixup;
      else if (src == "pixel_noise") cfg.probes.source = ProbeSource::Kind::pixel_noise;
      else if (src == "raw") cfg.probes.source = ProbeSource::Kind::raw;
      else throw ConfigError(probes->at("source") + ": expected mixup, pixel_noise or raw");
      cfg.probes.m = probes->count("m", cfg.probes.m);
      cfg.probes.alpha = probes->number("alpha", cfg.probes.alpha);
      cfg.probes.noise = probes->number("noise", cfg.probes.noise);
      if (cfg.probes.m < 2) throw ConfigError(probes->at("m") + ": must be >= 2");
      if (!(cfg.probes.alpha > 0.0)) throw ConfigError(probes->at("alpha") + ": must be > 0");
    }
  }
  cfg.metrics.seed = derive_seed(cfg.seed, stream_id("metrics"));
  detail::with_path("metrics", [&] { cfg.metrics.validate(); });

  if (const auto grid = top.optional_sub("grid")) {
    grid->allow({"load", "temp", "replicates"});
    const Section load = grid->sub("load");
    load.allow({"kind", "values"});
    const auto lk = parse_load_kind(load.text("kind"));
    if (!lk) throw ConfigError(load.at("kind") + ": expected width, n_samples, noise_frac or pixel_noise");
    cfg.load_axis = Axis<LoadKind>{*lk, load.numbers("values")};
    const Section temp = grid->sub("temp");
    temp.allow({"kind", "values"});
    const auto tk = parse_temp_kind(temp.text("kind"));
    if (!tk) throw ConfigError(temp.at("kind") + ": expected batch_size, lr or weight_decay");
    cfg.temp_axis = Axis<TempKind>{*tk, temp.numbers("values")};
    cfg.replicates = grid->count("replicates", cfg.replicates);
    detail::with_path("grid", [&] { cfg.grid().validate(); });
  }

  if (const auto phase = top.optional_sub("phase")) {
    phase->allow({"eps_mc", "sharp_quantile", "tau_cka", "loss_converged"});
    auto& p = cfg.phase;
    p.eps_mc = phase->number("eps_mc", p.eps_mc);
    p.sharp_quantile = phase->number("sharp_quantile", p.sharp_quantile);
    p.tau_cka = phase->number("tau_cka", p.tau_cka);
    p.loss_converged = phase->number("loss_converged", p.loss_converged);
    detail::with_path("phase", [&] { p.validate(); });
  }
  return cfg;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_json_file(path));
}

/// Only the phase thresholds, for files that hold nothing else.
inline PhaseThresholds parse_thresholds(const nlohmann::json& root) {
  const nlohmann::json& j = root.contains("phase") ? root.at("phase") : root;
  detail::Section s(j, root.contains("phase") ? "phase" : "");
  PhaseThresholds p;
  p.eps_mc = s.number("eps_mc", p.eps_mc);
  p.sharp_quantile = s.number("sharp_quantile", p.sharp_quantile);
  p.tau_cka = s.number("tau_cka", p.tau_cka);
  p.loss_converged = s.number("loss_converged", p.loss_converged);
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// JSON views of results and manifests
// ---------------------------------------------------------------------------

inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline const char* probe_source_name(ProbeSource::Kind k) {
  switch (k) {
    case ProbeSource::Kind::mixup: return "mixup";
    case ProbeSource::Kind::pixel_noise: return "pixel_noise";
    case ProbeSource::Kind::raw: return "raw";
  }
  return "?";
}

inline nlohmann::json to_json(const ModelSpec& m) {
  return {{"input_dim", m.input_dim}, {"hidden_widths", m.hidden_widths}, {"num_classes", m.num_classes}};
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
  ModelSpec m;
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  return m;
}

inline nlohmann::json to_json(const PhaseThresholds& p) {
  return {{"eps_mc", finite_or_null(p.eps_mc)},
          {"sharp_quantile", p.sharp_quantile},
          {"tau_cka", p.tau_cka},
          {"loss_converged", p.loss_converged}};
}

inline nlohmann::json to_json(const GridSpec& g) {
  nlohmann::json j;
  j["load"] = {{"kind", to_string(g.load.kind)}, {"values", g.load.values}};
  j["temp"] = {{"kind", to_string(g.temp.kind)}, {"values", g.temp.values}};
  j["replicates"] = g.replicates;
  j["pairing"] = "disjoint";
  j["model"] = to_json(g.model);
  j["train"] = {{"lr", g.train.lr},
                {"batch_size", g.train.batch_size},
                {"weight_decay", g.train.weight_decay},
                {"max_epochs", g.train.max_epochs},
                {"plateau_eps", g.train.plateau_eps},
                {"plateau_epochs", g.train.plateau_epochs},
                {"linear_scale_lr", g.train.linear_scale_lr},
                {"reference_batch", g.train.reference_batch}};
  if (g.train.schedule)
    j["train"]["schedule"] = {{"kind", "linear_decay"},
                              {"start_epoch", g.train.schedule->start_epoch},
                              {"end_epoch", g.train.schedule->end_epoch},
                              {"final_fraction", g.train.schedule->final_fraction}};
  else
    j["train"]["schedule"] = {{"kind", "constant"}};
  j["data"] = {{"kind", g.data.kind},         {"n_train", g.data.n_train},
               {"n_test", g.data.n_test},     {"num_classes", g.data.num_classes},
               {"dim", g.data.dim},           {"spread", g.data.spread},
               {"noise", g.data.noise},       {"path", g.data.path},
               {"test_path", g.data.test_path}, {"n_keep", g.data.n_keep},
               {"label_noise", g.data.label_noise}, {"pixel_noise", g.data.pixel_noise}};
  j["metrics"] = {{"max_iter", g.metrics.max_iter},
                  {"rtol", g.metrics.rtol},
                  {"metric_batch", g.metrics.metric_batch}};
  j["curve"] = {{"epochs", g.curve.epochs},
                {"lr", g.curve.lr},
                {"schedule",
                 {{"kind", "linear_decay"},
                  {"start_epoch", g.curve.schedule.start_epoch},
                  {"end_epoch", g.curve.schedule.end_epoch},
                  {"final_fraction", g.curve.schedule.final_fraction}}},
                {"batch_size", g.curve.batch_size},
                {"bends", g.curve.bends},
                {"t_grid", g.curve.t_grid}};
  j["probes"] = {{"source", probe_source_name(g.probes.source)},
                 {"m", g.probes.m},
                 {"alpha", g.probes.alpha},
                 {"noise", g.probes.noise}};
  j["seed"] = g.seed;
  return j;
}

inline nlohmann::json to_json(const CellResult& c) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : c.replicates)
    reps.push_back({{"seed", r.seed},
                    {"converged", r.converged},
                    {"failure", r.failure},
                    {"epochs", r.epochs},
                    {"train_loss", finite_or_null(r.train_loss)},
                    {"train_acc", finite_or_null(r.train_acc)},
                    {"test_acc", finite_or_null(r.test_acc)},
                    {"lambda_max", finite_or_null(r.lambda_max)},
                    {"hessian_trace", finite_or_null(r.hessian_trace)}});
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : c.pairs) {
    nlohmann::json pj{{"replicates", {p.a, p.b}},
                      {"valid", p.valid},
                      {"mc", finite_or_null(p.mc)},
                      {"mc_cross_entropy", finite_or_null(p.mc_cross_entropy)},
                      {"cka", finite_or_null(p.cka)},
                      {"l2", finite_or_null(p.l2)}};
    if (p.valid) pj["profile"] = profile_to_json(p.profile);
    pairs.push_back(std::move(pj));
  }
  return {{"load_value", c.load_value},
          {"temp_value", c.temp_value},
          {"converged", c.converged()},
          {"replicates", std::move(reps)},
          {"pairs", std::move(pairs)}};
}

}  // namespace llab

#endif  // LLAB_CONFIG_HPP
