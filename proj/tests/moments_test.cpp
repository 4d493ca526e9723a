#include <cmath>
#include <complex>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "ccmeta/moments.hpp"

namespace {

using ccmeta::ActivityModel;
using ccmeta::complex;
using ccmeta::InnerScale;
using ccmeta::MomentOrder;
using ccmeta::NetworkParams;
using ccmeta::UserClass;

// Reference values: tests/oracles/moments_oracle.py (mpmath, 30 digits; the
// closed forms there agree with a direct 2-D PGFL integration to ~1e-13).
struct Reference {
  double q;
  double theta_db;
  double b;
  double ccu;
  double ceu;
  double relaxed;
};

constexpr Reference kReference[] = {
    {0.3, 0, 1, 0.93213125199162862, 0.57735593919490691, 0.59186150912873969},
    {0.3, 0, 2, 0.87335770092428713, 0.38138487391842575, 0.4049083316087561},
    {0.3, 5, 1, 0.82108522288363692, 0.30729916694521358, 0.32918039183253273},
    {0.3, 5, 2, 0.69880775436700676, 0.14737250606155466, 0.17536707419493882},
    {0.5, 0, 1, 0.89178184064421283, 0.4290947210213716, 0.45062536012934197},
    {0.5, 0, 2, 0.80580540332256045, 0.24120765513785727, 0.27236533326122516},
    {0.5, 5, 1, 0.733585677553479, 0.17765360791020491, 0.20566848495019366},
    {0.5, 5, 2, 0.58376317694561906, 0.067708347550889999, 0.097347227586728573},
    {1.0, 0, 1, 0.8046988159466816, 0.23090024859025359, 0.26403120446908967},
    {1.0, 0, 2, 0.67632655199886791, 0.09827438042864397, 0.13641985583077782},
    {1.0, 5, 1, 0.57926198760631701, 0.057709482374723106, 0.090470811610148105},
    {1.0, 5, 2, 0.41676659297103177, 0.014326067989926338, 0.039292818077375442},
};

NetworkParams at_db(double theta_db) {
  NetworkParams p;
  p.sir_threshold = ccmeta::db_to_linear(theta_db);
  return p;
}

TEST(Moments, MatchReferenceTable) {
  for (const auto& ref : kReference) {
    const NetworkParams p = at_db(ref.theta_db);
    const ActivityModel act{ref.q};
    const auto order = MomentOrder::real(ref.b);
    EXPECT_NEAR(ccmeta::moment_ccu(order, p, act).real(), ref.ccu, 1e-9) << ref.q << " " << ref.theta_db;
    EXPECT_NEAR(ccmeta::moment_ceu(order, p, act).real(), ref.ceu, 1e-9) << ref.q << " " << ref.theta_db;
    EXPECT_NEAR(ccmeta::moment_ceu_dominant_inactive(order, p, act).real(), ref.relaxed, 1e-9);
  }
}

TEST(Moments, SeriesAndIntegralFormsAgree) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    NetworkParams p = at_db(-5.0 + 15.0 * unit(rng));
    p.pathloss_exponent = 2.5 + 2.0 * unit(rng);
    p.ratio_threshold = 0.1 + 0.8 * unit(rng);
    const double q = unit(rng);
    const complex b{-0.5 + 4.0 * unit(rng), 6.0 * (unit(rng) - 0.5)};
    for (auto scale : {InnerScale::kUnit, InnerScale::kRatioPow}) {
      const complex s = ccmeta::v_series(p, b, q, scale).value;
      const complex i = ccmeta::v_integral(p, b, q, scale).value;
      EXPECT_LE(std::abs(s - i), 1e-6 * std::max(1.0, std::abs(i))) << "b=" << b << " q=" << q;
    }
  }
}

TEST(Moments, ComplexOrderMatchesReference) {
  NetworkParams p;
  const complex v1 = ccmeta::v_function(p, complex{0.5, 2.0}, 0.5, InnerScale::kUnit).value;
  EXPECT_NEAR(v1.real(), 0.54515334496826155, 1e-9);
  EXPECT_NEAR(v1.imag(), 1.6572524427067407, 1e-9);
  const NetworkParams p5 = at_db(5.0);
  const complex v2 = ccmeta::v_function(p5, complex{0.0, 3.0}, 0.7, InnerScale::kRatioPow).value;
  EXPECT_NEAR(v2.real(), 0.13095658997048573, 1e-9);
  EXPECT_NEAR(v2.imag(), 1.5510560285269867, 1e-9);
  // Large |b| goes through the integral form.
  const complex v3 = ccmeta::v_function(p, complex{0.0, 12.0}, 0.7, InnerScale::kUnit).value;
  EXPECT_NEAR(v3.real(), 4.558012946322269, 1e-8);
  EXPECT_NEAR(v3.imag(), 9.6438107519995897, 1e-8);
}

TEST(Moments, SeriesRefusesCancellationAtLargeOrder) {
  NetworkParams p = at_db(10.0);
  EXPECT_THROW(ccmeta::v_series(p, complex{0.0, 200.0}, 1.0, InnerScale::kUnit),
               ccmeta::EvaluationError);
  EXPECT_NO_THROW(ccmeta::v_function(p, complex{0.0, 200.0}, 1.0, InnerScale::kUnit));
}

TEST(Moments, QuadratureOraclesMatchClosedForms) {
  for (const auto& ref : kReference) {
    if (ref.q == 0.3) continue;
    const NetworkParams p = at_db(ref.theta_db);
    const ActivityModel act{ref.q};
    EXPECT_NEAR(ccmeta::moment_ccu_quadrature(ref.b, p, act), ref.ccu, 1e-6);
    EXPECT_NEAR(ccmeta::moment_ceu_quadrature(ref.b, p, act), ref.ceu, 1e-6);
  }
  // Negative order inside the finite-delay region.
  const NetworkParams p;
  const ActivityModel act{0.2};
  EXPECT_NEAR(ccmeta::moment_ccu_quadrature(-1.0, p, act), 1.0513221675454068, 1e-6);
  EXPECT_NEAR(ccmeta::moment_ceu_quadrature(-1.0, p, act), 1.6813907562171976, 1e-6);
}

TEST(Moments, TripleSumConvergesToClosedForm) {
  const NetworkParams p = at_db(5.0);
  const ActivityModel act{0.7};
  const auto order = MomentOrder::real(2.0);
  const double exact = ccmeta::moment_ceu(order, p, act).real();
  double previous_error = std::numeric_limits<double>::infinity();
  for (int terms : {1, 10, 100, 1000, 10000}) {
    const auto partial = ccmeta::moment_ceu_dominant_active_series(order, p, act, terms);
    const double error = std::abs(partial.real() - exact);
    EXPECT_LE(error, partial.truncation_error_bound * (1.0 + 1e-9) + 1e-14) << terms;
    EXPECT_LE(error, previous_error) << terms;
    previous_error = error;
  }
  EXPECT_LT(previous_error, 1e-5);
}

TEST(Moments, UnitOrderAndZeroActivityAreTrivial) {
  const NetworkParams p;
  for (auto cls : {UserClass::kCenter, UserClass::kEdge}) {
    EXPECT_NEAR(ccmeta::moment(MomentOrder::real(0.0), p, {0.6}, cls).real(), 1.0, 1e-15);
    EXPECT_NEAR(ccmeta::moment(MomentOrder::real(3.0), p, {0.0}, cls).real(), 1.0, 1e-15);
  }
}

TEST(Moments, OrderingProperties) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    NetworkParams p = at_db(-5.0 + 15.0 * unit(rng));
    p.ratio_threshold = 0.2 + 0.7 * unit(rng);
    const double q = 0.05 + 0.95 * unit(rng);
    const auto m1c = ccmeta::moment_ccu(MomentOrder::real(1.0), p, {q}).real();
    const auto m2c = ccmeta::moment_ccu(MomentOrder::real(2.0), p, {q}).real();
    const auto m1e = ccmeta::moment_ceu(MomentOrder::real(1.0), p, {q}).real();
    const auto m2e = ccmeta::moment_ceu(MomentOrder::real(2.0), p, {q}).real();
    // Centre users see strictly better links; Jensen bounds the second moment.
    EXPECT_GT(m1c, m1e);
    EXPECT_LE(m2c, m1c);
    EXPECT_GE(m2c, m1c * m1c - 1e-12);
    EXPECT_LE(m2e, m1e);
    EXPECT_GE(m2e, m1e * m1e - 1e-12);
    // More activity, worse links.
    const double q_hi = std::min(1.0, q + 0.1);
    EXPECT_GE(m1e + 1e-12, ccmeta::moment_ceu(MomentOrder::real(1.0), p, {q_hi}).real());
    // The relaxed ring model never hurts more than the exact one.
    EXPECT_GE(ccmeta::moment_ceu_dominant_inactive(MomentOrder::real(1.0), p, {q}).real() + 1e-12, m1e);
  }
}

TEST(Moments, ThinningScalesActivity) {
  const NetworkParams p;
  const ActivityModel centre{0.8, ccmeta::Thinning::kReservedCenter};
  const ActivityModel edge{0.8, ccmeta::Thinning::kReservedEdge};
  EXPECT_DOUBLE_EQ(centre.effective(p), 0.2);
  EXPECT_DOUBLE_EQ(edge.effective(p), 0.6000000000000001);
  EXPECT_NEAR(ccmeta::moment_ccu(MomentOrder::real(1.0), p, centre).real(),
              ccmeta::moment_ccu(MomentOrder::real(1.0), p, {0.2}).real(), 1e-15);
}

TEST(Moments, RatioNearOneBoundary) {
  NetworkParams p;
  p.ratio_threshold = 0.999;
  const double closed = ccmeta::moment_ceu(MomentOrder::real(1.0), p, {0.5}).real();
  EXPECT_NEAR(closed, 0.2228970727429493, 1e-6);
  EXPECT_TRUE(std::isfinite(closed));
}

TEST(Moments, RejectsInvalidInputs) {
  NetworkParams p;
  EXPECT_THROW(ccmeta::moment_ccu(MomentOrder::real(1.0), p, {1.5}), ccmeta::DomainError);
  p.pathloss_exponent = 2.0;
  EXPECT_THROW(ccmeta::moment_ccu(MomentOrder::real(1.0), p, {0.5}), ccmeta::DomainError);
  p = NetworkParams{};
  p.ratio_threshold = 1.0;
  EXPECT_THROW(ccmeta::moment_ceu(MomentOrder::real(1.0), p, {0.5}), ccmeta::DomainError);
}

TEST(LocalDelay, MatchesReferenceValues) {
  const NetworkParams p;
  EXPECT_NEAR(ccmeta::mean_local_delay(p, {0.2}, UserClass::kCenter), 1.0513221675454068, 1e-10);
  EXPECT_NEAR(ccmeta::mean_local_delay(p, {0.2}, UserClass::kEdge), 1.6813907562171976, 1e-10);
  EXPECT_NEAR(ccmeta::mean_local_delay(p, {0.5}, UserClass::kCenter), 1.140398726474116, 1e-10);
  EXPECT_NEAR(ccmeta::mean_local_delay(p, {0.5}, UserClass::kEdge), 13.176099939120026, 1e-8);
}

TEST(LocalDelay, EqualsNegativeFirstMoment) {
  const NetworkParams p;
  for (double q : {0.1, 0.2, 0.5}) {
    for (auto cls : {UserClass::kCenter, UserClass::kEdge}) {
      const double via_series = ccmeta::moment(MomentOrder::real(-1.0), p, {q}, cls).real();
      EXPECT_NEAR(via_series / ccmeta::mean_local_delay(p, {q}, cls), 1.0, 1e-9);
    }
  }
  // -V1(-1) equals the closed-form divergence term.
  const auto v = ccmeta::v_series(p, complex{-1.0, 0.0}, 0.5, InnerScale::kUnit).value;
  EXPECT_NEAR(-v.real(), ccmeta::delay_divergence_term(p, 0.5, UserClass::kEdge), 1e-10);
  EXPECT_NEAR(-v.real(), 0.90164425852750967, 1e-10);
}

TEST(LocalDelay, PhaseTransition) {
  const NetworkParams p = at_db(5.0);
  const auto q_star = ccmeta::critical_activity(p, UserClass::kEdge);
  ASSERT_TRUE(q_star.has_value());
  EXPECT_NEAR(*q_star, 0.22001326999296444, 1e-6);
  EXPECT_TRUE(std::isfinite(ccmeta::mean_local_delay(p, {*q_star - 1e-3}, UserClass::kEdge)));
  EXPECT_TRUE(std::isinf(ccmeta::mean_local_delay(p, {*q_star + 1e-3}, UserClass::kEdge)));
  EXPECT_TRUE(std::isinf(ccmeta::moment_ceu(MomentOrder::real(-1.0), p, {*q_star + 1e-3}).real()));
  // Centre users at R = 0.5 stay finite at full load.
  EXPECT_FALSE(ccmeta::critical_activity(p, UserClass::kCenter).has_value());
}

TEST(LocalDelay, CriticalThetaFallsWithRatio) {
  // The centre-user term depends on theta * R^alpha only.
  const auto narrow = ccmeta::critical_theta(NetworkParams{}.with_ratio(0.4), 0.5, UserClass::kCenter);
  const auto wide = ccmeta::critical_theta(NetworkParams{}.with_ratio(0.6), 0.5, UserClass::kCenter);
  ASSERT_TRUE(narrow && wide);
  EXPECT_NEAR(*narrow / 17.508643533920217, 1.0, 1e-7);
  EXPECT_NEAR(*wide / 5.187746232272657, 1.0, 1e-7);
  EXPECT_FALSE(ccmeta::critical_theta(NetworkParams{}, 0.0, UserClass::kCenter).has_value());
}

}  // namespace
