#include <gtest/gtest.h>

#include "nrsync/scan.hpp"

using namespace nrsync;
using namespace nrsync::meanfield;

namespace {

CouplingParams base(double V) {
  CouplingParams p;
  p.V = V;
  return p;
}

}  // namespace

TEST(Params, SetGetRoundTrip) {
  CouplingParams p;
  for (Param q : {Param::kappa, Param::delta, Param::V, Param::V_plus, Param::V_minus_re, Param::V_minus_im}) {
    set_param(p, q, 0.375);
    EXPECT_EQ(get_param(p, q), 0.375);
    EXPECT_EQ(param_from_string(to_string(q)), q);
  }
  EXPECT_THROW(param_from_string("bogus"), ConfigError);
}

TEST(PhaseDiagram, UnphysicalCornersLabelled) {
  const Axis x{Param::V_minus_re, parse_grid("-3:3:3")};
  const Axis y{Param::V_plus, parse_grid("-3:3:3")};
  const auto d = phase_diagram(base(2.0), x, y, default_ic(), false, {}, 1);
  ASSERT_EQ(d.points.size(), 9u);
  for (std::size_t iy : {0u, 2u})
    for (std::size_t ix = 0; ix < 3; ++ix) EXPECT_EQ(d.at(ix, iy).report.label, Attractor::Unphysical);
  EXPECT_NE(d.at(1, 1).report.label, Attractor::Unphysical);
  EXPECT_DOUBLE_EQ(d.at(2, 1).x, 3.0);
  EXPECT_DOUBLE_EQ(d.at(2, 1).y, 0.0);
}

TEST(PhaseDiagram, IndependentOfWorkerCount) {
  const Axis x{Param::V_minus_re, parse_grid("0:2.5:4")};
  const Axis y{Param::V_plus, parse_grid("-1.5:1.5:3")};
  const auto a = phase_diagram(base(2.0), x, y, default_ic(), true, {}, 1);
  const auto b = phase_diagram(base(2.0), x, y, default_ic(), true, {}, 3);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].report.label, b.points[i].report.label);
    EXPECT_EQ(a.points[i].report.frequency_A, b.points[i].report.frequency_A);
    EXPECT_EQ(a.points[i].report.phase_difference, b.points[i].report.phase_difference);
    EXPECT_EQ(a.points[i].both_chiralities, b.points[i].both_chiralities);
  }
}

TEST(PhaseDiagram, PartnerRevealsBothChiralities) {
  CouplingParams p = base(2.0);
  p.V_minus = 1.0;
  const auto pt = classify_point(p, default_ic(), true, {});
  ASSERT_TRUE(pt.partner.has_value());
  EXPECT_TRUE(pt.both_chiralities);
}

TEST(Hysteresis, ZeroWidthRampIsSymmetric) {
  CouplingParams p = base(2.0);
  p.V_plus = 1.0;
  p.V_minus = 2.5;
  HysteresisOptions opt;
  opt.swept = Param::delta;
  opt.path = parse_grid("0.7");
  const auto steps = hysteresis_sweep(p, default_ic(), opt);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].direction, +1);
  EXPECT_EQ(steps[1].direction, -1);
  EXPECT_EQ(steps[0].report.label, steps[1].report.label);
  EXPECT_NEAR(steps[0].report.frequency_A, steps[1].report.frequency_A, 1e-3);
}

TEST(Hysteresis, OrderAndContinuation) {
  CouplingParams p = base(2.0);
  p.V_plus = 1.0;
  p.V_minus = 2.5;
  HysteresisOptions opt;
  opt.path = parse_grid("-1:1:3");
  const auto steps = hysteresis_sweep(p, default_ic(), opt);
  ASSERT_EQ(steps.size(), 6u);
  const std::vector<double> expect{-1, 0, 1, 1, 0, -1};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(steps[i].value, expect[i]);
}

TEST(Hysteresis, RejectsOtherParameters) {
  HysteresisOptions opt;
  opt.swept = Param::V;
  opt.path = parse_grid("0:1:3");
  EXPECT_THROW(hysteresis_sweep(base(2.0), default_ic(), opt), ConfigError);
}

TEST(Stability, LinearThresholdMatchesClosedForm) {
  // With V_plus = V the unsync Jacobian gives V_c = min(1, (1 + V-^2)/2).
  for (double vm : {0.0, 0.3, 0.8, 1.0, 1.4, 2.0, 3.0}) {
    CouplingParams p;
    p.V_minus = vm;
    EXPECT_NEAR(linear_threshold(p, 1.0), std::min(1.0, 0.5 * (1.0 + vm * vm)), 1e-9) << "V- = " << vm;
  }
}

TEST(Stability, NumericalBoundaryNearLinear) {
  CouplingParams p;
  const auto pts = stability_boundary(p, parse_grid("0.5:1.5:2"), 1.0, 1e-4, 0.01, {}, 1);
  ASSERT_EQ(pts.size(), 2u);
  for (const auto& b : pts) {
    EXPECT_NEAR(b.V_formula, std::min(1.0, 0.5 * (1.0 + b.V_minus * b.V_minus)), 1e-15);
    EXPECT_NEAR(b.V_critical, b.V_linear, 0.05) << "V- = " << b.V_minus;
  }
}
