#include <gtest/gtest.h>

#include <limits>
#include <regex>
#include <set>
#include <string>

#include "llab/phase.hpp"

using namespace llab;

namespace {

CellSummary cell(double load, double temp, double trace, double beta, double mu,
                 bool converged = true) {
  CellSummary c;
  c.load_kind = "width";
  c.temp_kind = "batch_size";
  c.load_value = load;
  c.temp_value = temp;
  c.n_replicates = 2;
  c.n_converged = converged ? 2 : 0;
  c.train_loss.mean = 0.1;
  c.hessian_trace.mean = trace;
  c.mc.mean = beta;
  c.cka.mean = mu;
  c.beta_hat = beta;
  c.mu_hat = mu;
  return c;
}

std::vector<std::string> fills_of_cells(const std::string& svg) {
  std::vector<std::string> out;
  const std::regex re(R"re(<rect class="cell"[^>]*fill="([^"]+)")re");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back((*it)[1]);
  return out;
}

/// Minimal well-formedness check: balanced, properly nested tags.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t j = s.find('>', i);
    if (j == std::string::npos) return false;
    std::string tag = s.substr(i + 1, j - i - 1);
    i = j + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    if (tag[0] == '/') {
      const std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
  }
  return stack.empty();
}

}  // namespace

TEST(Classify, Examples) {
  PhaseThresholds th;
  const PhaseContext ctx{5.0, 0.1};
  EXPECT_EQ(classify_cell(cell(1, 1, 9.0, -40.0, 0.5), ctx, th), PhaseLabel::I);
  EXPECT_EQ(classify_cell(cell(1, 1, 9.0, 0.0, 0.5), ctx, th), PhaseLabel::II);
  EXPECT_EQ(classify_cell(cell(1, 1, 9.0, 30.0, 0.5), ctx, th), PhaseLabel::II);
  EXPECT_EQ(classify_cell(cell(1, 1, 1.0, -40.0, 0.5), ctx, th), PhaseLabel::III);
  EXPECT_EQ(classify_cell(cell(1, 1, 1.0, 0.1, 0.95), ctx, th), PhaseLabel::IV_B);
  EXPECT_EQ(classify_cell(cell(1, 1, 1.0, 0.1, 0.5), ctx, th), PhaseLabel::IV_A);
  EXPECT_EQ(classify_cell(cell(1, 1, 9.0, -40.0, 0.5, false), ctx, th), PhaseLabel::NC);
}

TEST(Classify, LabelsAreIvAAndIvB) {
  EXPECT_STREQ(to_string(PhaseLabel::IV_A), "IV-A");
  EXPECT_STREQ(to_string(PhaseLabel::IV_B), "IV-B");
}

TEST(Classify, QuantileContextFromConvergedCells) {
  std::vector<CellSummary> cells{cell(1, 1, 1.0, 0, 1), cell(2, 1, 3.0, 0, 1), cell(3, 1, 5.0, 0, 1),
                                 cell(4, 1, 100.0, 0, 1, false)};
  const PhaseContext ctx = phase_context(cells, PhaseThresholds{});
  EXPECT_EQ(ctx.trace_threshold, 3.0);
}

TEST(Classify, InfiniteEpsilonRemovesPoorConnectivity) {
  std::vector<CellSummary> cells;
  for (int i = 0; i < 12; ++i) cells.push_back(cell(i, 1, i * 1.0, -10.0 * i, 0.1 * (i % 10)));
  PhaseThresholds th;
  th.eps_mc = std::numeric_limits<double>::infinity();
  for (const auto& c : annotate_phases(cells, th))
    EXPECT_TRUE(c.phase_label == "II" || c.phase_label == "IV-A" || c.phase_label == "IV-B");
}

TEST(Classify, PermutationInvariant) {
  std::vector<CellSummary> cells;
  for (int i = 0; i < 9; ++i) cells.push_back(cell(i, 1, (i * 7) % 9, -5.0 * (i % 3), 0.3 * (i % 4)));
  const auto a = annotate_phases(cells, PhaseThresholds{});
  std::reverse(cells.begin(), cells.end());
  auto b = annotate_phases(cells, PhaseThresholds{});
  std::reverse(b.begin(), b.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].phase_label, b[i].phase_label);
}

TEST(Thresholds, Validation) {
  PhaseThresholds th;
  th.tau_cka = 1.5;
  EXPECT_THROW(th.validate(), ConfigError);
}

TEST(Heatmap, ConstantMetricGivesOneColor) {
  std::vector<CellSummary> cells;
  for (int l = 0; l < 3; ++l)
    for (int t = 0; t < 2; ++t) cells.push_back(cell(l, t, 2.0, 0, 0.5));
  const auto fills = fills_of_cells(heatmap_svg(cells, "hessian_trace"));
  ASSERT_EQ(fills.size(), 6u);
  EXPECT_EQ(std::set<std::string>(fills.begin(), fills.end()).size(), 1u);
}

TEST(Heatmap, DivergingColorsForMc) {
  std::vector<CellSummary> cells{cell(1, 1, 1, -50, 0.5), cell(2, 1, 1, 0, 0.5), cell(3, 1, 1, 50, 0.5)};
  const auto fills = fills_of_cells(heatmap_svg(cells, "mc"));
  ASSERT_EQ(fills.size(), 3u);
  EXPECT_EQ(fills[0], kDivergingBlue.hex());
  EXPECT_EQ(fills[1], kDivergingWhite.hex());
  EXPECT_EQ(fills[2], kDivergingRed.hex());
}

TEST(Heatmap, WellFormedWithOneRectPerCell) {
  std::vector<CellSummary> cells;
  for (int l = 0; l < 4; ++l)
    for (int t = 0; t < 3; ++t) cells.push_back(cell(l, t, l + t, -l, 0.5, l != 2));
  cells[0].load_kind = "a<b&c";
  const std::string svg = heatmap_svg(cells, "lambda_max");
  EXPECT_TRUE(well_formed_xml(svg));
  EXPECT_EQ(fills_of_cells(svg).size(), 12u);
  EXPECT_NE(svg.find("url(#hatch)"), std::string::npos);
}

TEST(Heatmap, RaggedGridIsRejected) {
  std::vector<CellSummary> cells{cell(1, 1, 1, 0, 0), cell(2, 1, 1, 0, 0), cell(1, 2, 1, 0, 0)};
  EXPECT_THROW(heatmap_svg(cells, "mc"), ParameterError);
}

TEST(Heatmap, OrientationFlipsRowOrder) {
  std::vector<CellSummary> cells{cell(1, 4, 1, -50, 0), cell(1, 256, 1, 50, 0)};
  const auto a = fills_of_cells(heatmap_svg(cells, "mc", Orientation::standard));
  const auto b = fills_of_cells(heatmap_svg(cells, "mc", Orientation::flipped));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], b[1]);
  EXPECT_EQ(a[1], b[0]);
  // Small batch is the hottest row and sits on top by default.
  EXPECT_EQ(a[0], kDivergingBlue.hex());
}

TEST(Heatmap, PhaseMapUsesCategoricalColors) {
  std::vector<CellSummary> cells{cell(1, 1, 9, -40, 0.5), cell(2, 1, 1, 0, 0.95)};
  cells = annotate_phases(cells, PhaseThresholds{});
  const auto fills = fills_of_cells(heatmap_svg(cells, "phase"));
  EXPECT_EQ(fills[0], phase_color("I").hex());
  EXPECT_EQ(fills[1], phase_color("IV-B").hex());
}

TEST(ProfileSvg, FixedAxesAndShapes) {
  CurveProfile flat{{0, 0.5, 1}, {10, 10, 10}, {0, 0, 0}};
  const std::string a = curve_profile_svg(flat);
  EXPECT_NE(a.find("viewBox=\"0 0 1 100\""), std::string::npos);
  EXPECT_NE(a.find("points=\"0,90 0.5,90 1,90\""), std::string::npos);
  EXPECT_TRUE(well_formed_xml(a));
  CurveProfile barrier{{0, 0.5, 1}, {0, 60, 0}, {0, 0, 0}};
  const std::string b = curve_profile_svg(barrier);
  EXPECT_NE(b.find("points=\"0,100 0.5,40 1,100\""), std::string::npos);
  std::size_t endpoints = 0;
  for (std::size_t p = 0; (p = b.find("class=\"endpoint\"", p)) != std::string::npos; ++p) ++endpoints;
  EXPECT_EQ(endpoints, 2u);
}
