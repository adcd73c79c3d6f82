#include <catch2/catch_amalgamated.hpp>

#include <aos/oracle.hpp>

#include <cmath>
#include <random>

using namespace aos;
using Catch::Approx;

TEST_CASE("trivial transfer takes zero time") {
  DiProblem p;
  p.x0 = p.xf = 1.5;
  p.v0 = p.vf = 0.0;
  const DiSolution s = di_min_time(p);
  REQUIRE(s.total_time == Approx(0.0).margin(1e-12));
  REQUIRE(s.arc_count == 0);
}

TEST_CASE("rest-to-rest closed form is 2 sqrt(D) with the switch at sqrt(D)") {
  for (const double d : {0.5, 1.0, 2.0, 4.0, 9.0}) {
    DiProblem p;
    p.x0 = 0.0;
    p.xf = d;
    const DiSolution s = di_min_time(p);
    REQUIRE(s.total_time == Approx(2.0 * std::sqrt(d)).margin(1e-9));
    REQUIRE(s.switch_time == Approx(std::sqrt(d)).margin(1e-9));
    REQUIRE(s.signs[0] == 1);
    REQUIRE(s.signs[1] == -1);
    // independent grid scan over the switch time
    REQUIRE(di_min_time_grid(p) == Approx(s.total_time).margin(1e-3));
  }
}

TEST_CASE("the (-2,0) to (0,0) transfer takes 2 sqrt(2)") {
  DiProblem p;
  p.x0 = -2.0;
  p.xf = 0.0;
  const DiSolution s = di_min_time(p);
  REQUIRE(s.total_time == Approx(2.0 * std::sqrt(2.0)).margin(1e-9));
  REQUIRE(s.signs[0] == 1);
  REQUIRE(s.signs[1] == -1);
  REQUIRE(di_min_time_grid(p) == Approx(2.0 * std::sqrt(2.0)).margin(1e-3));
}

TEST_CASE("closed form agrees with the grid scan on random problems") {
  std::mt19937_64 rng{23};
  std::uniform_real_distribution<double> pos{-5.0, 5.0};
  std::uniform_real_distribution<double> vel{-3.0, 3.0};
  std::uniform_real_distribution<double> acc{0.5, 3.0};
  for (int i = 0; i < 100; ++i) {
    DiProblem p;
    p.x0 = pos(rng);
    p.xf = pos(rng);
    p.v0 = vel(rng);
    p.vf = vel(rng);
    p.u_max = acc(rng);
    const DiSolution s = di_min_time(p);
    const double grid = di_min_time_grid(p);
    REQUIRE(s.total_time == Approx(grid).margin(1e-3));
  }
}

TEST_CASE("bang profile reaches the terminal state exactly") {
  std::mt19937_64 rng{29};
  std::uniform_real_distribution<double> pos{-5.0, 5.0};
  std::uniform_real_distribution<double> vel{-3.0, 3.0};
  for (int i = 0; i < 200; ++i) {
    DiProblem p;
    p.x0 = pos(rng);
    p.xf = pos(rng);
    p.v0 = vel(rng);
    p.vf = vel(rng);
    const DiSolution s = di_min_time(p);
    const auto [x, v] = di_rollout(p, s);
    REQUIRE(x == Approx(p.xf).margin(1e-6));
    REQUIRE(v == Approx(p.vf).margin(1e-6));
  }
}

TEST_CASE("u_max must be positive") {
  DiProblem p;
  p.u_max = 0.0;
  REQUIRE_THROWS_AS(di_min_time(p), std::invalid_argument);
}

TEST_CASE("planar reference needs at least two intervals") {
  REQUIRE_THROWS_AS(planar_collocation_reference(preset("STD"), 1.0, 0.0, 1),
                    std::invalid_argument);
}

TEST_CASE("planar reference collapses for the null transfer") {
  const CollocationResult r = planar_collocation_reference(preset("STD"), 0.0, 0.0, 100);
  REQUIRE(r.converged);
  CHECK(r.total_time <= Approx(0.05));
  CHECK(r.max_defect <= 2e-3);
}

TEST_CASE("planar reference reproduces the published 10 m translation") {
  const CollocationResult r = planar_collocation_reference(preset("STD"), 10.0, 0.0, 120);
  if (!r.converged)
    SKIP("planar reference did not converge (defect " << r.max_defect << ")");
  CHECK(r.total_time == Approx(1.56).epsilon(0.05));
}

TEST_CASE("doubling the knot count barely moves the planar reference") {
  const CollocationResult a = planar_collocation_reference(preset("STD"), 10.0, 0.0, 100);
  const CollocationResult b = planar_collocation_reference(preset("STD"), 10.0, 0.0, 200);
  if (!a.converged || !b.converged)
    SKIP("planar reference did not converge at one of the knot counts");
  CHECK(std::abs(a.total_time - b.total_time) / b.total_time <= 0.01);
}

TEST_CASE("collocation gradient matches central differences") {
  const PlanarCollocation prog(preset("STD"), 4.0, -1.0, 8);
  Eigen::VectorXd x = prog.seed();
  std::mt19937_64 rng{17};
  std::normal_distribution<double> jitter{0.0, 0.2};
  for (int i = 0; i < x.size(); ++i) x[i] += jitter(rng);

  Eigen::VectorXd grad, gtmp;
  const double w = 1e3;
  prog.objective(x, grad, w);
  for (int i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (prog.objective(xp, gtmp, w) - prog.objective(xm, gtmp, w)) / (2 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(grad[i])});
    REQUIRE(std::abs(fd - grad[i]) / scale <= 1e-5);
  }
}
