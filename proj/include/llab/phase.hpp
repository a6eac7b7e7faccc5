#ifndef LLAB_PHASE_HPP
#define LLAB_PHASE_HPP

// Five-way phase labels for sweep cells and SVG renderings of the grid.
//
//   locally sharp   := hessian_trace_mean above the grid's sharp_quantile
//   globally poor   := beta_hat < -eps_mc
//   I = sharp & poor, II = sharp & !poor, III = flat & poor,
//   IV = flat & !poor, split into IV-B when mu_hat >= tau_cka else IV-A.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "llab/error.hpp"
#include "llab/modeconn.hpp"
#include "llab/sweep.hpp"

namespace llab {

struct PhaseThresholds {
  double eps_mc = 2.0;
  double sharp_quantile = 0.5;
  double tau_cka = 0.9;
  double loss_converged = 10.0;  // multiple of the grid-minimum training loss

  void validate() const {
    if (!(eps_mc > 0.0)) throw ConfigError("phase.eps_mc must be > 0");
    if (!(sharp_quantile > 0.0 && sharp_quantile < 1.0))
      throw ConfigError("phase.sharp_quantile must lie in (0,1)");
    if (!(tau_cka > 0.0 && tau_cka < 1.0)) throw ConfigError("phase.tau_cka must lie in (0,1)");
    if (!(loss_converged > 0.0)) throw ConfigError("phase.loss_converged must be > 0");
  }
};

enum class PhaseLabel { I, II, III, IV_A, IV_B, NC };

inline const char* to_string(PhaseLabel p) {
  switch (p) {
    case PhaseLabel::I: return "I";
    case PhaseLabel::II: return "II";
    case PhaseLabel::III: return "III";
    case PhaseLabel::IV_A: return "IV-A";
    case PhaseLabel::IV_B: return "IV-B";
    case PhaseLabel::NC: return "NC";
  }
  return "?";
}

/// Grid-level quantities the per-cell rule needs.
struct PhaseContext {
  double trace_threshold = NAN;
  double min_train_loss = NAN;
};

/// Linear-interpolation quantile of the finite values.
inline double quantile(std::vector<double> xs, double q) {
  xs.erase(std::remove_if(xs.begin(), xs.end(), [](double x) { return !std::isfinite(x); }),
           xs.end());
  if (xs.empty()) return NAN;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline PhaseContext phase_context(const std::vector<CellSummary>& cells,
                                  const PhaseThresholds& th) {
  std::vector<double> traces;
  PhaseContext ctx;
  double min_loss = std::numeric_limits<double>::infinity();
  for (const auto& c : cells) {
    if (!c.converged()) continue;
    traces.push_back(c.hessian_trace.mean);
    if (std::isfinite(c.train_loss.mean)) min_loss = std::min(min_loss, c.train_loss.mean);
  }
  ctx.trace_threshold = quantile(traces, th.sharp_quantile);
  if (std::isfinite(min_loss)) ctx.min_train_loss = min_loss;
  return ctx;
}

inline PhaseLabel classify_cell(const CellSummary& cell, const PhaseContext& ctx,
                                const PhaseThresholds& th) {
  if (!cell.converged()) return PhaseLabel::NC;
  const bool sharp = cell.hessian_trace.mean > ctx.trace_threshold;
  const bool poor = cell.beta_hat < -th.eps_mc;
  if (sharp) return poor ? PhaseLabel::I : PhaseLabel::II;
  if (poor) return PhaseLabel::III;
  return cell.mu_hat >= th.tau_cka ? PhaseLabel::IV_B : PhaseLabel::IV_A;
}

inline std::vector<CellSummary> annotate_phases(std::vector<CellSummary> cells,
                                                const PhaseThresholds& th) {
  th.validate();
  const PhaseContext ctx = phase_context(cells, th);
  for (auto& c : cells) c.phase_label = to_string(classify_cell(c, ctx, th));
  return cells;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

struct Rgb {
  int r = 0, g = 0, b = 0;
  std::string hex() const {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
  }
};

// Viridis sampled at 16 evenly spaced points.
inline constexpr std::array<std::array<int, 3>, 16> kSequentialStops{{
    {68, 1, 84},    {72, 26, 108},  {71, 47, 125},  {65, 68, 135},
    {57, 86, 140},  {49, 104, 142}, {42, 120, 142}, {35, 137, 142},
    {31, 154, 138}, {34, 171, 132}, {53, 183, 121}, {84, 197, 104},
    {122, 209, 81}, {165, 219, 54}, {210, 226, 27}, {253, 231, 37},
}};

inline constexpr Rgb kDivergingBlue{33, 102, 172};
inline constexpr Rgb kDivergingWhite{255, 255, 255};
inline constexpr Rgb kDivergingRed{178, 24, 43};

inline Rgb lerp(Rgb a, Rgb b, double t) {
  auto mix = [t](int x, int y) { return static_cast<int>(std::lround(x + (y - x) * t)); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

/// t in [0, 1] through the 16-stop table.
inline Rgb sequential_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * 15.0;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min<std::size_t>(lo + 1, 15);
  const auto& a = kSequentialStops[lo];
  const auto& b = kSequentialStops[hi];
  return lerp({a[0], a[1], a[2]}, {b[0], b[1], b[2]}, pos - static_cast<double>(lo));
}

/// Blue below zero, white at zero, red above; `limit` maps to full saturation.
inline Rgb diverging_color(double v, double limit) {
  if (!(limit > 0.0) || v == 0.0) return kDivergingWhite;
  const double t = std::clamp(std::abs(v) / limit, 0.0, 1.0);
  return lerp(kDivergingWhite, v < 0 ? kDivergingBlue : kDivergingRed, t);
}

inline Rgb phase_color(const std::string& label) {
  static const std::map<std::string, Rgb> colors{
      {"I", {215, 48, 39}},   {"II", {252, 141, 89}}, {"III", {145, 191, 219}},
      {"IV-A", {69, 117, 180}}, {"IV-B", {26, 152, 80}}, {"NC", {200, 200, 200}}};
  const auto it = colors.find(label);
  return it == colors.end() ? Rgb{255, 255, 255} : it->second;
}

enum class Orientation {
  standard,  // load grows to the right, temperature grows to the top
  flipped,   // temperature grows to the bottom
};

inline bool is_diverging_metric(const std::string& metric) {
  return metric == "mc" || metric == "beta_hat";
}

inline double metric_value(const CellSummary& c, const std::string& metric) {
  if (metric == "train_loss") return c.train_loss.mean;
  if (metric == "test_acc") return c.test_acc.mean;
  if (metric == "lambda_max") return c.lambda_max.mean;
  if (metric == "hessian_trace") return c.hessian_trace.mean;
  if (metric == "mc") return c.mc.mean;
  if (metric == "cka") return c.cka.mean;
  if (metric == "l2") return c.l2.mean;
  if (metric == "mu_hat") return c.mu_hat;
  if (metric == "beta_hat") return c.beta_hat;
  throw ParameterError("unknown metric '" + metric + "'");
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string heatmap_svg(const std::vector<CellSummary>& cells, const std::string& metric,
                               Orientation orientation = Orientation::standard) {
  if (cells.empty()) throw ParameterError("heatmap: no cells");
  const bool categorical = metric == "phase";
  if (!categorical) (void)metric_value(cells.front(), metric);

  std::vector<double> loads;
  std::vector<double> temps;
  for (const auto& c : cells) {
    loads.push_back(c.load_value);
    temps.push_back(c.temp_value);
  }
  auto uniq = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(loads);
  uniq(temps);
  if (loads.size() * temps.size() != cells.size()) throw ParameterError("heatmap: ragged grid");
  std::vector<const CellSummary*> at(loads.size() * temps.size(), nullptr);
  for (const auto& c : cells) {
    const auto li = static_cast<std::size_t>(
        std::lower_bound(loads.begin(), loads.end(), c.load_value) - loads.begin());
    const auto ti = static_cast<std::size_t>(
        std::lower_bound(temps.begin(), temps.end(), c.temp_value) - temps.begin());
    auto& slot = at[li * temps.size() + ti];
    if (slot) throw ParameterError("heatmap: ragged grid (duplicate cell)");
    slot = &c;
  }

  // Rows top to bottom. Temperature rises with the value except for batch
  // size, which acts as an inverse temperature.
  const bool inverse_temperature = cells.front().temp_kind == "batch_size";
  std::vector<std::size_t> row_order(temps.size());
  for (std::size_t k = 0; k < temps.size(); ++k) row_order[k] = k;
  bool hottest_first = true;
  if (orientation == Orientation::flipped) hottest_first = false;
  // ascending values on top <=> (inverse temperature) == hottest_first
  if (inverse_temperature != hottest_first) std::reverse(row_order.begin(), row_order.end());

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  if (!categorical) {
    for (const auto* c : at) {
      const double v = metric_value(*c, metric);
      if (!c->converged() || !std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const bool diverging = is_diverging_metric(metric);
  const double limit = std::max(std::abs(lo), std::abs(hi));

  const int cell_w = 64, cell_h = 40, left = 90, top = 40, legend_h = 60;
  const int width = left + cell_w * static_cast<int>(loads.size()) + 20;
  const int height = top + cell_h * static_cast<int>(temps.size()) + 50 + legend_h;

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<defs><pattern id=\"hatch\" patternUnits=\"userSpaceOnUse\" width=\"8\" height=\"8\">"
        "<rect width=\"8\" height=\"8\" fill=\"#dddddd\"/>"
        "<path d=\"M0,8 L8,0\" stroke=\"#555555\" stroke-width=\"1\"/></pattern></defs>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">"
     << xml_escape(metric) << "</text>\n";

  for (std::size_t row = 0; row < row_order.size(); ++row) {
    const std::size_t ti = row_order[row];
    const int y = top + cell_h * static_cast<int>(row);
    os << "<text class=\"tick\" x=\"" << left - 6 << "\" y=\"" << y + cell_h / 2 + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << format_g10(temps[ti]) << "</text>\n";
    for (std::size_t li = 0; li < loads.size(); ++li) {
      const CellSummary& c = *at[li * temps.size() + ti];
      const int x = left + cell_w * static_cast<int>(li);
      std::string fill;
      if (!c.converged()) {
        fill = "url(#hatch)";
      } else if (categorical) {
        fill = phase_color(c.phase_label).hex();
      } else {
        const double v = metric_value(c, metric);
        if (!std::isfinite(v)) fill = "url(#hatch)";
        else if (diverging) fill = diverging_color(v, limit).hex();
        else fill = sequential_color(hi > lo ? (v - lo) / (hi - lo) : 0.5).hex();
      }
      os << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w
         << "\" height=\"" << cell_h << "\" fill=\"" << fill << "\" stroke=\"#ffffff\">"
         << "<title>" << xml_escape(c.load_kind) << '=' << format_g10(c.load_value) << ", "
         << xml_escape(c.temp_kind) << '=' << format_g10(c.temp_value);
      if (categorical) os << ": " << xml_escape(c.phase_label);
      else if (c.converged()) os << ": " << format_g10(metric_value(c, metric));
      else os << ": NC";
      os << "</title></rect>\n";
      if (categorical && c.converged())
        os << "<text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << xml_escape(c.phase_label) << "</text>\n";
    }
  }
  const int axis_y = top + cell_h * static_cast<int>(temps.size());
  for (std::size_t li = 0; li < loads.size(); ++li)
    os << "<text class=\"tick\" x=\"" << left + cell_w * static_cast<int>(li) + cell_w / 2
       << "\" y=\"" << axis_y + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << format_g10(loads[li]) << "</text>\n";
  os << "<text x=\"" << left + cell_w * static_cast<int>(loads.size()) / 2 << "\" y=\""
     << axis_y + 34 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
     << xml_escape(cells.front().load_kind) << "</text>\n";
  os << "<text x=\"14\" y=\"" << top + cell_h * static_cast<int>(temps.size()) / 2
     << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 "
     << top + cell_h * static_cast<int>(temps.size()) / 2 << ")\" text-anchor=\"middle\">"
     << xml_escape(cells.front().temp_kind) << "</text>\n";

  if (!categorical && std::isfinite(lo)) {
    const int ly = axis_y + 46;
    const int steps = 16;
    const int lw = 10;
    for (int s = 0; s < steps; ++s) {
      const double t = static_cast<double>(s) / (steps - 1);
      const Rgb col = diverging ? diverging_color(-limit + 2.0 * limit * t, limit)
                                : sequential_color(t);
      os << "<rect class=\"legend\" x=\"" << left + s * lw << "\" y=\"" << ly << "\" width=\""
         << lw << "\" height=\"12\" fill=\"" << col.hex() << "\"/>\n";
    }
    const double lmin = diverging ? -limit : lo;
    const double lmax = diverging ? limit : hi;
    os << "<text class=\"legend-min\" x=\"" << left << "\" y=\"" << ly + 26
       << "\" font-family=\"sans-serif\" font-size=\"10\">" << format_g10(lmin) << "</text>\n";
    os << "<text class=\"legend-max\" x=\"" << left + steps * lw << "\" y=\"" << ly + 26
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << format_g10(lmax)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void emit_heatmap(const std::vector<CellSummary>& cells, const std::string& metric,
                         const std::filesystem::path& path,
                         Orientation orientation = Orientation::standard) {
  write_text_file(path, heatmap_svg(cells, metric, orientation));
}

/// Error percent against t on fixed axes: t in [0,1], error in [0,100].
inline std::string curve_profile_svg(const CurveProfile& profile) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"400\" height=\"300\" "
        "viewBox=\"0 0 1 100\" preserveAspectRatio=\"none\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"1\" height=\"100\" fill=\"#ffffff\"/>\n";
  for (int g = 25; g < 100; g += 25)
    os << "<line x1=\"0\" y1=\"" << g << "\" x2=\"1\" y2=\"" << g
       << "\" stroke=\"#dddddd\" stroke-width=\"1\" vector-effect=\"non-scaling-stroke\"/>\n";
  os << "<polyline class=\"profile\" fill=\"none\" stroke=\"#b2182b\" stroke-width=\"2\" "
        "vector-effect=\"non-scaling-stroke\" points=\"";
  for (std::size_t i = 0; i < profile.t.size(); ++i)
    os << (i ? " " : "") << format_g10(profile.t[i]) << ',' << format_g10(100.0 - profile.error[i]);
  os << "\"/>\n";
  for (std::size_t i = 0; i < profile.t.size(); ++i) {
    if (profile.t[i] != 0.0 && profile.t[i] != 1.0) continue;
    os << "<ellipse class=\"endpoint\" cx=\"" << format_g10(profile.t[i]) << "\" cy=\""
       << format_g10(100.0 - profile.error[i])
       << "\" rx=\"0.012\" ry=\"1.6\" fill=\"#2166ac\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void render_curve_profile(const CurveProfile& profile, const std::filesystem::path& path) {
  write_text_file(path, curve_profile_svg(profile));
}

}  // namespace llab

#endif  // LLAB_PHASE_HPP
