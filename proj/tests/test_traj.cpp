#include "aos/piecewise_poly.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace aos;

namespace {

Eigen::MatrixXd random_stack(std::mt19937& rng, int s, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(s, 4);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = n(rng);
  return m;
}

}  // namespace

TEST_CASE("cubic hermite step matches the closed form") {
  Eigen::MatrixXd start = Eigen::MatrixXd::Zero(2, 4);
  Eigen::MatrixXd end = Eigen::MatrixXd::Zero(2, 4);
  end(0, 0) = 1.0;  // unit position step, zero end velocity
  const PolyPiece p = piece_from_boundary(start, end, 1.0, 2);

  CHECK(p.coeffs(0, 0) == Catch::Approx(0.0).margin(1e-14));
  CHECK(p.coeffs(0, 1) == Catch::Approx(0.0).margin(1e-14));
  CHECK(p.coeffs(0, 2) == Catch::Approx(3.0).margin(1e-12));
  CHECK(p.coeffs(0, 3) == Catch::Approx(-2.0).margin(1e-12));

  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const Eigen::MatrixXd d = eval_piece(p, t, 1);
    CHECK(d(0, 0) == Catch::Approx(3 * t * t - 2 * t * t * t).margin(1e-12));
    CHECK(d(1, 0) == Catch::Approx(6 * t - 6 * t * t).margin(1e-12));
  }
}

TEST_CASE("end-position sensitivity has the hermite form in unscaled powers") {
  // With coefficients stored against (t/T)^j, the sensitivity of the
  // equivalent t^j coefficients to the end position is (0, 0, 3/T^2, -2/T^3).
  const double T = 0.7;
  const BoundaryGradients g = boundary_gradients(2, T);
  double t_pow = 1.0;
  const double expect[4] = {0.0, 0.0, 3.0 / (T * T), -2.0 / (T * T * T)};
  for (int j = 0; j < 4; ++j) {
    CHECK(g.G_end(j, 0) / t_pow == Catch::Approx(expect[j]).margin(1e-12));
    t_pow *= T;
  }
}

TEST_CASE("equal stacks with zero derivatives give a constant piece") {
  for (int s : {2, 3, 4}) {
    Eigen::MatrixXd stack = Eigen::MatrixXd::Zero(s, 4);
    stack.row(0) << 1.5, -0.25, 9.81, 0.3;
    const PolyPiece p = piece_from_boundary(stack, stack, 2.5, s);
    for (double t : {0.0, 0.4, 1.7, 2.5}) {
      const Eigen::MatrixXd d = eval_piece(p, t, s);
      for (int c = 0; c < 4; ++c) {
        CHECK(d(0, c) == Catch::Approx(stack(0, c)).margin(1e-12));
        for (int r = 1; r <= s; ++r) CHECK(std::abs(d(r, c)) < 1e-10);
      }
    }
  }
}

TEST_CASE("boundary interpolation roundtrip is exact") {
  std::mt19937 rng(7);
  for (int s : {2, 3, 4}) {
    for (int trial = 0; trial < 50; ++trial) {
      std::uniform_real_distribution<double> dur(0.1, 10.0);
      const double T = dur(rng);
      const Eigen::MatrixXd start = random_stack(rng, s);
      const Eigen::MatrixXd end = random_stack(rng, s);
      const PolyPiece p = piece_from_boundary(start, end, T, s);

      const Eigen::MatrixXd d0 = eval_piece(p, 0.0, s - 1);
      const Eigen::MatrixXd dT = eval_piece(p, T, s - 1);
      // relative to the derivative magnitude; T^r scalings stay exact in the
      // normalized basis
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < 4; ++c) {
          const double ref = 1.0 + std::abs(start(r, c)) + std::abs(end(r, c));
          CHECK(std::abs(d0(r, c) - start(r, c)) / ref < 1e-9);
          CHECK(std::abs(dT(r, c) - end(r, c)) / ref < 1e-9);
        }
    }
  }
}

TEST_CASE("interpolation stays conditioned across the duration range") {
  // The system solved per piece is constant in T thanks to the normalized
  // basis, so its condition number cannot degrade with duration.
  for (int s : {2, 3, 4}) {
    const Eigen::MatrixXd a = detail::end_matrix(s);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const double cond = svd.singularValues()(0) / svd.singularValues()(s - 1);
    CHECK(std::isfinite(cond));
    CHECK(cond < 1e5);
  }

  // Roundtrip at the duration extremes with derivatives sized for the span
  // (order r scaling like T^-r); uniformly O(1) stacks over a 1 ms piece are
  // intrinsically ill-posed in doubles regardless of basis.
  std::mt19937 rng(11);
  for (double T : {kTFloor, 1e-2, 1.0, 100.0}) {
    Eigen::MatrixXd start = random_stack(rng, 4);
    Eigen::MatrixXd end = random_stack(rng, 4);
    double t_pow = 1.0;
    for (int r = 0; r < 4; ++r) {
      start.row(r) /= t_pow;
      end.row(r) /= t_pow;
      t_pow *= T;
    }
    const PolyPiece p = piece_from_boundary(start, end, T, 4);
    const Eigen::MatrixXd d0 = eval_piece(p, 0.0, 3);
    const Eigen::MatrixXd dT = eval_piece(p, T, 3);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const double ref = 1.0 + std::abs(start(r, c)) + std::abs(end(r, c));
        CHECK(std::abs(d0(r, c) - start(r, c)) / ref < 1e-9);
        CHECK(std::abs(dT(r, c) - end(r, c)) / ref < 1e-9);
      }
  }
}

TEST_CASE("durations below the floor are rejected") {
  const Eigen::MatrixXd stack = Eigen::MatrixXd::Zero(3, 4);
  CHECK_THROWS_AS(piece_from_boundary(stack, stack, 0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(piece_from_boundary(stack, stack, -1.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(piece_from_boundary(stack, stack, 0.5 * kTFloor, 3), std::invalid_argument);
  CHECK_NOTHROW(piece_from_boundary(stack, stack, kTFloor, 3));
  CHECK_THROWS_AS(piece_from_boundary(stack, stack, 1.0, 5), std::invalid_argument);
}

TEST_CASE("coefficients are linear in the boundary stacks") {
  std::mt19937 rng(13);
  const int s = 3;
  const double T = 1.8;
  const Eigen::MatrixXd s1 = random_stack(rng, s), s2 = random_stack(rng, s);
  const Eigen::MatrixXd e1 = random_stack(rng, s), e2 = random_stack(rng, s);
  const double a = 0.37, b = -1.21;
  const PolyPiece p1 = piece_from_boundary(s1, e1, T, s);
  const PolyPiece p2 = piece_from_boundary(s2, e2, T, s);
  const PolyPiece mix = piece_from_boundary(a * s1 + b * s2, a * e1 + b * e2, T, s);
  CHECK((mix.coeffs - a * p1.coeffs - b * p2.coeffs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("boundary gradients match finite differences") {
  std::mt19937 rng(17);
  for (int s : {2, 3, 4}) {
    std::uniform_real_distribution<double> dur(0.2, 5.0);
    const double T = dur(rng);
    const Eigen::MatrixXd start = random_stack(rng, s);
    const Eigen::MatrixXd end = random_stack(rng, s);
    const BoundaryGradients g = boundary_gradients(s, T);

    // stack entries: coefficients are linear, so one-sided differences are exact
    const double h = 1e-6;
    for (int r = 0; r < s; ++r) {
      Eigen::MatrixXd bumped = start;
      bumped(r, 0) += h;
      const PolyPiece p0 = piece_from_boundary(start, end, T, s);
      const PolyPiece ps = piece_from_boundary(bumped, end, T, s);
      bumped = end;
      bumped(r, 0) += h;
      const PolyPiece pe = piece_from_boundary(start, bumped, T, s);
      for (int j = 0; j < 2 * s; ++j) {
        const double fd_s = (ps.coeffs(0, j) - p0.coeffs(0, j)) / h;
        const double fd_e = (pe.coeffs(0, j) - p0.coeffs(0, j)) / h;
        CHECK(std::abs(fd_s - g.G_start(j, r)) < 1e-5 * (1.0 + std::abs(g.G_start(j, r))));
        CHECK(std::abs(fd_e - g.G_end(j, r)) < 1e-5 * (1.0 + std::abs(g.G_end(j, r))));
      }
    }

    // duration: central difference against the analytic T-derivative
    const PolyPiece plus = piece_from_boundary(start, end, T + h, s);
    const PolyPiece minus = piece_from_boundary(start, end, T - h, s);
    const Eigen::MatrixXd fd_T = (plus.coeffs - minus.coeffs).transpose() / (2 * h);
    const Eigen::MatrixXd an_T = g.G_start_dT * start + g.G_end_dT * end;
    CHECK((fd_T - an_T).cwiseAbs().maxCoeff() < 1e-5 * (1.0 + an_T.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("time scaling maps to scaled boundary stacks") {
  // Scaling derivatives by alpha^-r and the duration by alpha reproduces the
  // same path traversed alpha times slower; in the normalized basis the
  // coefficients do not change at all.
  std::mt19937 rng(19);
  const int s = 3;
  const double T = 1.3, alpha = 2.75;
  const Eigen::MatrixXd start = random_stack(rng, s);
  const Eigen::MatrixXd end = random_stack(rng, s);
  Eigen::MatrixXd start_slow = start, end_slow = end;
  double a_pow = 1.0;
  for (int r = 0; r < s; ++r) {
    start_slow.row(r) /= a_pow;
    end_slow.row(r) /= a_pow;
    a_pow *= alpha;
  }
  const PolyPiece fast = piece_from_boundary(start, end, T, s);
  const PolyPiece slow = piece_from_boundary(start_slow, end_slow, alpha * T, s);
  CHECK((fast.coeffs - slow.coeffs).cwiseAbs().maxCoeff() < 1e-12);

  for (double t : {0.0, 0.3, 0.9, T}) {
    const Eigen::MatrixXd df = eval_piece(fast, t, s);
    const Eigen::MatrixXd ds = eval_piece(slow, alpha * t, s);
    double pow_r = 1.0;
    for (int r = 0; r <= s; ++r) {
      for (int c = 0; c < 4; ++c)
        CHECK(ds(r, c) == Catch::Approx(df(r, c) / pow_r).margin(1e-10));
      pow_r *= alpha;
    }
  }
}

TEST_CASE("piecewise evaluation is continuous and rejects out-of-range times") {
  std::mt19937 rng(23);
  const int s = 4;
  PiecewiseTrajectory traj;
  traj.order = s;
  std::vector<Eigen::MatrixXd> stacks;
  for (int k = 0; k < 4; ++k) stacks.push_back(random_stack(rng, s));
  const double durs[3] = {0.8, 1.7, 0.4};
  for (int k = 0; k < 3; ++k)
    traj.pieces.push_back(piece_from_boundary(stacks[k], stacks[k + 1], durs[k], s));

  CHECK(traj.total_duration() == Catch::Approx(2.9).margin(1e-12));

  // junction agreement through order s-1: exact endpoint of piece k against
  // the start of piece k+1 (a time-shifted probe would instead measure the
  // unpinned order-s derivative)
  double t_junction = 0.0;
  for (int k = 0; k < 2; ++k) {
    t_junction += durs[k];
    const Eigen::MatrixXd left = eval_piece(traj.pieces[k], durs[k], s - 1);
    const Eigen::MatrixXd right = eval(traj, t_junction, s - 1);
    CHECK((left - right).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + right.cwiseAbs().maxCoeff()));
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < 4; ++c)
        CHECK(right(r, c) == Catch::Approx(stacks[k + 1](r, c)).margin(1e-9));
    // the global lookup resolves a just-left probe to piece k; position is
    // continuous there
    const Eigen::MatrixXd probe = eval(traj, t_junction - 1e-12, 0);
    CHECK(std::abs(probe(0, 0) - right(0, 0)) < 1e-9);
  }

  const Eigen::MatrixXd head = eval(traj, 0.0, s - 1);
  const Eigen::MatrixXd tail = eval(traj, traj.total_duration(), s - 1);
  CHECK((head - stacks[0]).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((tail - stacks[3]).cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS(eval(traj, -0.1, 0), std::out_of_range);
  CHECK_THROWS_AS(eval(traj, traj.total_duration() + 0.1, 0), std::out_of_range);
  CHECK_THROWS_AS(eval(PiecewiseTrajectory{}, 0.0, 0), std::out_of_range);
}
