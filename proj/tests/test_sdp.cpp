#include "doctest.h"

#include "covsteer/error.hpp"
#include "covsteer/sdp.hpp"

#include <random>

using namespace covsteer;
using namespace covsteer::sdp;

namespace {

Mat scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

Solution run(const Problem& p) {
  InteriorPointSolver ipm;
  return solve(p, ipm);
}

}  // namespace

TEST_CASE("fixed symmetric variable") {
  Problem p;
  auto s = p.add_symmetric("Sigma", 2);
  p.add_equality(s, Mat::Identity(2, 2));
  p.set_objective(s.trace());
  const auto sol = run(p);
  REQUIRE(sol.optimal());
  CHECK(sol.objective_value == doctest::Approx(2.0).epsilon(1e-12));
  CHECK((sol.at("Sigma") - Mat::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("trace minimization with pinned corner") {
  Problem p;
  auto x = p.add_symmetric("X", 2);
  p.add_psd(x, "X psd");
  p.add_equality(x.block(0, 0, 1, 1), scalar(1.0));
  p.set_objective(x.trace());
  const auto sol = run(p);
  REQUIRE(sol.optimal());
  CHECK(sol.objective_value == doctest::Approx(1.0).epsilon(1e-8));
  Mat e1e1 = Mat::Zero(2, 2);
  e1e1(0, 0) = 1.0;
  CHECK((sol.at("X") - e1e1).norm() < 1e-7);
  CHECK(sol.residuals.min_psd_eig >= -1e-7 * sol.scale);
}

TEST_CASE("schur complement lower bound") {
  // [[1, s], [s, y]] >= 0 at s = 0.5 forces y >= s^2.
  Problem p;
  auto y = p.add_scalar("y");
  auto s = p.add_scalar("s");
  p.add_equality(s, scalar(0.5));
  p.add_psd(Affine::blocks({{Affine(scalar(1.0)), s}, {s, y}}));
  p.set_objective(y);
  const auto sol = run(p);
  REQUIRE(sol.optimal());
  CHECK(sol.at("y")(0, 0) == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("infeasible and unbounded toys") {
  SUBCASE("negative diagonal on a PSD variable") {
    Problem p;
    auto x = p.add_symmetric("X", 2);
    p.add_psd(x);
    p.add_equality(x.block(0, 0, 1, 1), scalar(-1.0));
    const auto sol = run(p);
    CHECK(sol.status == SolveStatus::infeasible);
  }
  SUBCASE("negative trace over the PSD cone") {
    Problem p;
    auto x = p.add_symmetric("X", 2);
    p.add_psd(x);
    p.set_objective(-x.trace());
    const auto sol = run(p);
    CHECK(sol.status == SolveStatus::unbounded);
  }
  SUBCASE("inconsistent equalities") {
    Problem p;
    auto a = p.add_scalar("a");
    p.add_equality(a, scalar(1.0));
    p.add_equality(2.0 * a, scalar(3.0));
    CHECK(run(p).status == SolveStatus::infeasible);
  }
}

TEST_CASE("builder errors") {
  Problem p;
  auto x = p.add_matrix("X", 2, 2);
  CHECK_THROWS_AS(p.add_scalar("X"), Error);
  CHECK_THROWS_AS(p.add_psd(x), Error);  // rectangular variable is not symmetric
  CHECK_THROWS_AS(p.add_equality(x, Mat::Zero(3, 3)), DimensionError);
  CHECK_THROWS_AS(p.add_matrix("bad", 0, 2), DimensionError);
  CHECK_NOTHROW(p.add_psd(x + x.transpose()));
}

TEST_CASE("minimum eigenvalue via trace-one relaxation") {
  // min tr(C X) s.t. tr X = 1, X >= 0 equals lambda_min(C).
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2 + trial % 4;
    Mat c(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) c(i, j) = n01(rng);
    }
    c = 0.5 * (c + c.transpose()).eval();
    Problem p;
    auto x = p.add_symmetric("X", d);
    p.add_psd(x);
    p.add_equality(x.trace(), scalar(1.0));
    p.set_objective(trace_product(c, x));
    const auto sol = run(p);
    REQUIRE(sol.optimal());
    CHECK(sol.objective_value == doctest::Approx(min_eig(SymMat(c))).epsilon(1e-7));
  }
}

TEST_CASE("objective scaling leaves the argmin unchanged") {
  Mat c(3, 3);
  c << 2, 1, 0, 1, 3, 1, 0, 1, 4;
  Mat q(3, 3);
  q << 1, 0.2, 0, 0.2, 2, 0.1, 0, 0.1, 1.5;
  auto build = [&](double factor) {
    Problem p;
    auto x = p.add_symmetric("X", 3);
    p.add_psd(x - Mat(0.1 * Mat::Identity(3, 3)));
    p.add_equality(trace_product(q, x), scalar(2.0));
    p.set_objective(factor * trace_product(c, x));
    return p;
  };
  // With X = 0.1 I + Y the optimum puts all of Y on the generalized
  // eigenvector of (C, Q) with the smallest eigenvalue.
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(c, q);
  const Vec v = ges.eigenvectors().col(0);
  const double alpha = (2.0 - 0.1 * q.trace()) / v.dot(q * v);
  const Mat exact = 0.1 * Mat::Identity(3, 3) + alpha * v * v.transpose();

  const auto a = run(build(1.0));
  const auto b = run(build(250.0));
  REQUIRE(a.optimal());
  REQUIRE(b.optimal());
  CHECK((a.at("X") - exact).norm() <= 1e-6);
  CHECK((b.at("X") - exact).norm() <= 1e-6);
  CHECK((a.at("X") - b.at("X")).norm() <= 1e-6 * (1.0 + a.at("X").norm()));
  CHECK(b.objective_value == doctest::Approx(250.0 * (c * exact).trace()).epsilon(1e-8));
}

TEST_CASE("independent residuals agree with the constraints") {
  Problem p;
  auto x = p.add_symmetric("X", 3);
  auto t = p.add_scalar("t");
  p.add_psd(Affine::blocks({{x, Affine(Mat::Ones(3, 1))}, {Affine(Mat::Ones(1, 3)), t}}));
  p.add_equality(x.trace(), scalar(3.0));
  p.set_objective(t);
  const auto sol = run(p);
  REQUIRE(sol.optimal());
  const Residuals r = verify(p, [&] {
    Vec y(p.num_scalars());
    const auto& vx = p.variable("X");
    int k = vx.offset;
    for (int i = 0; i < 3; ++i) {
      for (int j = i; j < 3; ++j) y(k++) = sol.at("X")(i, j);
    }
    y(p.variable("t").offset) = sol.at("t")(0, 0);
    return y;
  }());
  CHECK(r.primal_eq <= 1e-6 * sol.scale);
  CHECK(r.min_psd_eig >= -1e-7 * sol.scale);
  // t >= 1^T X^{-1} 1 with tr X = 3 is smallest when X = 11^T: t = 1.
  CHECK(sol.objective_value == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("debug dump is deterministic") {
  auto build = [] {
    Problem p;
    auto x = p.add_symmetric("X", 2);
    p.add_psd(x, "cone");
    p.add_equality(x.trace(), scalar(1.0), "unit trace");
    p.set_objective(x.block(1, 1, 1, 1));
    return p;
  };
  const std::string a = build().dump();
  CHECK(a == build().dump());
  CHECK(a.find("psd 0 cone dim 2") != std::string::npos);
  CHECK(a.find("eq 0 unit trace") != std::string::npos);
}
