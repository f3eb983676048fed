#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "coordinet/errors.hpp"
#include "coordinet/geometry.hpp"
#include "oracles.hpp"

using coordinet::Error;
using coordinet::ErrorCode;
using coordinet::Quaternion;

namespace {

void expect_quat_near(const Quaternion& a, const Quaternion& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.z, b.z, tol);
  EXPECT_NEAR(a.w, b.w, tol);
}

}  // namespace

TEST(QuatNormalize, ScaledIdentity) {
  const Quaternion q = coordinet::quat_normalize({0.0, 0.0, 0.0, 2.0});
  expect_quat_near(q, {0.0, 0.0, 0.0, 1.0}, 1e-15);
}

TEST(QuatNormalize, IdempotentOnUnitInput) {
  const Quaternion q = coordinet::quat_normalize({0.0, 0.0, 0.0, 1.0});
  expect_quat_near(q, {0.0, 0.0, 0.0, 1.0}, 1e-15);
}

TEST(QuatNormalize, AllOnes) {
  // norm of (1,1,1,1) is 2, so every component becomes one half.
  const Quaternion q = coordinet::quat_normalize({1.0, 1.0, 1.0, 1.0});
  expect_quat_near(q, {0.5, 0.5, 0.5, 0.5}, 1e-15);
  EXPECT_NEAR(coordinet::quat_norm(q), 1.0, 1e-12);
}

TEST(QuatNormalize, ZeroNormRejected) {
  try {
    coordinet::quat_normalize({0.0, 0.0, 0.0, 0.0});
    FAIL() << "expected invalid_input";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_input);
  }
}

TEST(QuatNormalize, RandomInputsBecomeUnit) {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 200; ++i) {
    Quaternion raw{u(gen), u(gen), u(gen), u(gen)};
    if (coordinet::quat_norm(raw) < 1e-6) continue;
    const Quaternion q = coordinet::quat_normalize(raw);
    EXPECT_NEAR(coordinet::quat_norm(q), 1.0, 1e-9);
    // Same direction: q is a positive multiple of raw.
    EXPECT_GT(coordinet::quat_dot(q, raw), 0.0);
  }
}

TEST(QuatToMatrix, IdentityQuaternion) {
  const auto m = coordinet::quat_to_matrix({0.0, 0.0, 0.0, 1.0});
  EXPECT_LT((m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuatToMatrix, HalfTurnAboutZ) {
  const auto m = coordinet::quat_to_matrix({0.0, 0.0, 1.0, 0.0});
  Eigen::Matrix3d expected = Eigen::Vector3d(-1.0, -1.0, 1.0).asDiagonal();
  EXPECT_LT((m - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuatToMatrix, MatchesAxisAngleOracle) {
  std::mt19937 gen(12);
  std::uniform_real_distribution<double> ang(-3.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d axis = oracle::random_unit_axis(gen);
    const double angle = ang(gen);
    const Quaternion q = coordinet::quat_from_axis_angle(axis, angle);
    const Eigen::Matrix3d expected = oracle::rodrigues(axis, angle);
    const auto m = coordinet::quat_to_matrix(q);
    EXPECT_LT((m - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(QuatToMatrix, SignFlipInvariance) {
  std::mt19937 gen(13);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = oracle::random_unit_quaternion(gen);
    const Quaternion nq{-q.x, -q.y, -q.z, -q.w};
    EXPECT_LT((coordinet::quat_to_matrix(q) - coordinet::quat_to_matrix(nq))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
  }
}

TEST(QuatToMatrix, NonUnitInputRejected) {
  try {
    coordinet::quat_to_matrix({0.0, 0.0, 0.0, 1.01});
    FAIL() << "expected invalid_input";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_input);
  }
}

TEST(MatrixToQuat, RoundTripPreservesRotation) {
  std::mt19937 gen(14);
  for (int i = 0; i < 500; ++i) {
    const Quaternion q = oracle::random_unit_quaternion(gen);
    const auto m = coordinet::quat_to_matrix(q);
    const Quaternion back = coordinet::matrix_to_quat(m);
    EXPECT_LT(coordinet::quat_angular_error(q, back), 1e-6);
  }
}

TEST(MatrixToQuat, CoversAllTraceBranches) {
  // Half turns about each axis exercise the non-dominant-trace branches.
  const Quaternion cases[] = {
      {1.0, 0.0, 0.0, 0.0}, {0.0, 1.0, 0.0, 0.0}, {0.0, 0.0, 1.0, 0.0}};
  for (const auto& q : cases) {
    const Quaternion back = coordinet::matrix_to_quat(coordinet::quat_to_matrix(q));
    EXPECT_LT(coordinet::quat_angular_error(q, back), 1e-9);
  }
}

TEST(CheckRotationMatrix, RejectsNonOrthonormal) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = 1.5;
  try {
    coordinet::check_rotation_matrix(m);
    FAIL() << "expected invalid_input";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_input);
  }
}

TEST(CheckRotationMatrix, RejectsReflection) {
  Eigen::Matrix3d m = Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal();
  EXPECT_THROW(coordinet::check_rotation_matrix(m), Error);
}

TEST(GeodesicDistance, IdentityPair) {
  const Eigen::Matrix3d i = Eigen::Matrix3d::Identity();
  EXPECT_DOUBLE_EQ(coordinet::geodesic_distance(i, i), 0.0);
}

TEST(GeodesicDistance, HalfTurnIsPi) {
  const Eigen::Matrix3d i = Eigen::Matrix3d::Identity();
  const auto half = coordinet::quat_to_matrix({0.0, 0.0, 1.0, 0.0});
  EXPECT_NEAR(coordinet::geodesic_distance(i, half), M_PI, 1e-12);
}

TEST(GeodesicDistance, MatchesRelativeAngleOracle) {
  std::mt19937 gen(15);
  for (int i = 0; i < 2000; ++i) {
    const auto ra = coordinet::quat_to_matrix(oracle::random_unit_quaternion(gen));
    const auto rb = coordinet::quat_to_matrix(oracle::random_unit_quaternion(gen));
    const double expected = oracle::relative_angle(ra, rb);
    const double got = coordinet::geodesic_distance(ra, rb);
    EXPECT_NEAR(got, expected, 1e-6);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, M_PI + 1e-12);
    // Symmetry in the arguments.
    EXPECT_NEAR(coordinet::geodesic_distance(rb, ra), got, 1e-9);
  }
}

TEST(GeodesicDistance, KnownRelativeAngleConstruction) {
  // Build pairs (R, R*delta) where delta has a chosen rotation angle; the
  // geodesic distance must recover exactly that angle.
  std::mt19937 gen(16);
  std::uniform_real_distribution<double> ang(1e-3, M_PI - 1e-3);
  for (int i = 0; i < 500; ++i) {
    const auto r = coordinet::quat_to_matrix(oracle::random_unit_quaternion(gen));
    const double angle = ang(gen);
    const Eigen::Matrix3d delta = oracle::rodrigues(oracle::random_unit_axis(gen), angle);
    EXPECT_NEAR(coordinet::geodesic_distance(r, r * delta), angle, 1e-9);
  }
}

TEST(GeodesicDistance, ClampHandlesRoundoff) {
  // Two numerically identical rotations whose trace can exceed 3 by roundoff
  // must produce 0, not NaN.
  const auto r = coordinet::quat_to_matrix(
      coordinet::quat_from_axis_angle({0.3, -0.2, 0.9}, 1.234));
  const double d = coordinet::geodesic_distance(r, r);
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_NEAR(d, 0.0, 1e-7);
}

TEST(QuatAngularError, SelfIsZero) {
  std::mt19937 gen(17);
  const Quaternion q = oracle::random_unit_quaternion(gen);
  EXPECT_DOUBLE_EQ(coordinet::quat_angular_error(q, q), 0.0);
}

TEST(QuatAngularError, SignFlipInvariance) {
  std::mt19937 gen(18);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = oracle::random_unit_quaternion(gen);
    const Quaternion nq{-q.x, -q.y, -q.z, -q.w};
    EXPECT_DOUBLE_EQ(coordinet::quat_angular_error(q, nq), 0.0);
    // Flipping just one argument of a random pair must not change the value.
    const Quaternion p = oracle::random_unit_quaternion(gen);
    EXPECT_DOUBLE_EQ(coordinet::quat_angular_error(q, p),
                     coordinet::quat_angular_error(nq, p));
  }
}

TEST(QuatAngularError, MatchesMatrixFormWithinTolerance) {
  std::mt19937 gen(19);
  for (int i = 0; i < 2000; ++i) {
    const Quaternion qa = oracle::random_unit_quaternion(gen);
    const Quaternion qb = oracle::random_unit_quaternion(gen);
    const double deg = coordinet::quat_angular_error(qa, qb);
    const double rad = coordinet::geodesic_distance(coordinet::quat_to_matrix(qa),
                                                    coordinet::quat_to_matrix(qb));
    EXPECT_NEAR(deg, coordinet::rad_to_deg(rad), 1e-5);
    EXPECT_GE(deg, 0.0);
    EXPECT_LE(deg, 180.0 + 1e-9);
  }
}

TEST(QuatAngularError, RecoversAppliedDeltaAngle) {
  std::mt19937 gen(20);
  std::uniform_real_distribution<double> ang(1e-4, M_PI - 1e-4);
  for (int i = 0; i < 1000; ++i) {
    const Quaternion q = oracle::random_unit_quaternion(gen);
    const double angle = ang(gen);
    const Quaternion delta = coordinet::quat_from_axis_angle(oracle::random_unit_axis(gen), angle);
    const Quaternion rotated = coordinet::quat_multiply(q, delta);
    EXPECT_NEAR(coordinet::quat_angular_error(q, rotated), coordinet::rad_to_deg(angle),
                1e-5);
  }
}

TEST(QuatMultiply, ComposesHalfTurns) {
  // Two quarter turns about z compose to a half turn about z.
  const Quaternion quarter = coordinet::quat_from_axis_angle({0.0, 0.0, 1.0}, M_PI / 2.0);
  const Quaternion half = coordinet::quat_multiply(quarter, quarter);
  expect_quat_near(half, {0.0, 0.0, 1.0, 0.0}, 1e-12);
}

TEST(QuatMultiply, MatchesEigenConvention) {
  std::mt19937 gen(21);
  for (int i = 0; i < 500; ++i) {
    const Quaternion a = oracle::random_unit_quaternion(gen);
    const Quaternion b = oracle::random_unit_quaternion(gen);
    const Quaternion got = coordinet::quat_multiply(a, b);
    const Eigen::Quaterniond expected = oracle::to_eigen(a) * oracle::to_eigen(b);
    expect_quat_near(got, oracle::from_eigen(expected), 1e-12);
  }
}

TEST(QuatConjugate, InvertsRotation) {
  std::mt19937 gen(22);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = oracle::random_unit_quaternion(gen);
    const Quaternion prod = coordinet::quat_multiply(q, coordinet::quat_conjugate(q));
    EXPECT_LT(coordinet::quat_angular_error(prod, {0.0, 0.0, 0.0, 1.0}), 1e-9);
  }
}

TEST(QuatExpLog, RoundTrip) {
  std::mt19937 gen(23);
  std::uniform_real_distribution<double> ang(1e-6, M_PI - 1e-3);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d v = oracle::random_unit_axis(gen) * ang(gen);
    const Quaternion q = coordinet::quat_exp(v);
    EXPECT_NEAR(coordinet::quat_norm(q), 1.0, 1e-12);
    const Eigen::Vector3d back = coordinet::quat_log(q);
    EXPECT_LT((back - v).norm(), 1e-9);
  }
}

TEST(QuatExpLog, SmallAngleSeries) {
  const Eigen::Vector3d v(1e-10, -2e-10, 5e-11);
  const Quaternion q = coordinet::quat_exp(v);
  EXPECT_NEAR(q.x, 0.5e-10, 1e-18);
  EXPECT_NEAR(q.w, 1.0, 1e-15);
  EXPECT_LT((coordinet::quat_log(q) - v).norm(), 1e-15);
}

TEST(QuatExp, MatchesAxisAngle) {
  std::mt19937 gen(24);
  std::uniform_real_distribution<double> ang(1e-4, 3.0);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d axis = oracle::random_unit_axis(gen);
    const double angle = ang(gen);
    const Quaternion via_exp = coordinet::quat_exp(axis * angle);
    const Quaternion via_aa = coordinet::quat_from_axis_angle(axis, angle);
    expect_quat_near(via_exp, via_aa, 1e-12);
  }
}
