#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace aos {

/// Minimum piece duration. Durations are strictly positive in the problem
/// statement; the floor keeps pieces from collapsing during optimization.
inline constexpr double kTFloor = 1e-3;

/// One polynomial piece of degree 2s-1 over local time t in [0, T].
/// Channel i evaluates as sum_j coeffs(i,j) * (t/T)^j; the normalized basis
/// keeps the boundary system conditioned independently of T.
struct PolyPiece {
  int order = 3;  // s
  double duration = 0.0;
  Eigen::Matrix<double, 4, Eigen::Dynamic> coeffs;  // 4 channels x 2s
};

namespace detail {

inline double falling(int j, int r) {
  double f = 1.0;
  for (int i = 0; i < r; ++i) f *= j - i;
  return f;
}

/// End-condition matrix: A(r, j-s) = j!/(j-r)! for the upper coefficient
/// block; constant for each s in the normalized basis.
inline Eigen::MatrixXd end_matrix(int s) {
  Eigen::MatrixXd a(s, s);
  for (int r = 0; r < s; ++r)
    for (int j = s; j < 2 * s; ++j) a(r, j - s) = falling(j, r);
  return a;
}

inline const Eigen::MatrixXd& end_matrix_inverse(int s) {
  static const Eigen::MatrixXd inv2 = end_matrix(2).inverse();
  static const Eigen::MatrixXd inv3 = end_matrix(3).inverse();
  static const Eigen::MatrixXd inv4 = end_matrix(4).inverse();
  switch (s) {
    case 2: return inv2;
    case 3: return inv3;
    case 4: return inv4;
    default: throw std::invalid_argument{"order s must be 2, 3 or 4"};
  }
}

inline void check_duration(double T) {
  if (!(T >= kTFloor) || !std::isfinite(T))
    throw std::invalid_argument{"piece duration must be >= the duration floor"};
}

}  // namespace detail

/// Coefficient map for one channel: c = G_start * d_start + G_end * d_end
/// with d the s boundary derivatives (orders 0..s-1) at each end, plus the
/// derivatives of both matrices in T. The map is linear in the stacks.
/// Static capacity 8x4 (s <= 4) keeps solver inner loops off the heap.
using BoundaryMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 4>;

struct BoundaryGradients {
  BoundaryMatrix G_start, G_end;        // 2s x s
  BoundaryMatrix G_start_dT, G_end_dT;  // 2s x s
};

inline BoundaryGradients boundary_gradients(int s, double T) {
  detail::check_duration(T);
  const Eigen::MatrixXd& a_inv = detail::end_matrix_inverse(s);
  BoundaryGradients g;
  g.G_start.setZero(2 * s, s);
  g.G_end.setZero(2 * s, s);
  g.G_start_dT.setZero(2 * s, s);
  g.G_end_dT.setZero(2 * s, s);

  double t_pow = 1.0, fact = 1.0;
  Eigen::VectorXd scale(s), scale_dT(s);
  for (int r = 0; r < s; ++r) {
    if (r > 0) {
      t_pow *= T;
      fact *= r;
    }
    scale[r] = t_pow;                          // T^r
    scale_dT[r] = r == 0 ? 0.0 : r * t_pow / T;  // r T^(r-1)
    g.G_start(r, r) = t_pow / fact;
    g.G_start_dT(r, r) = scale_dT[r] / fact;
  }

  // upper block: A c_up = d_end_r T^r - sum_j j!/(j-r)! c_low_j
  Eigen::MatrixXd b(s, s), b_dT(s, s);  // rhs sensitivity to d_start
  for (int r = 0; r < s; ++r)
    for (int k = 0; k < s; ++k) {
      const double f = k >= r ? detail::falling(k, r) : 0.0;
      b(r, k) = -f * g.G_start(k, k);
      b_dT(r, k) = -f * g.G_start_dT(k, k);
    }
  g.G_start.bottomRows(s) = a_inv * b;
  g.G_start_dT.bottomRows(s) = a_inv * b_dT;
  g.G_end.bottomRows(s) = a_inv * scale.asDiagonal().toDenseMatrix();
  g.G_end_dT.bottomRows(s) = a_inv * scale_dT.asDiagonal().toDenseMatrix();
  return g;
}

/// Unique degree-(2s-1) piece matching s boundary derivatives per end.
/// start/end are s x 4: row r holds the r-th derivative of the 4 channels.
inline PolyPiece piece_from_boundary(const Eigen::MatrixXd& start, const Eigen::MatrixXd& end,
                                     double T, int s) {
  detail::check_duration(T);
  if (start.rows() != s || end.rows() != s || start.cols() != 4 || end.cols() != 4)
    throw std::invalid_argument{"boundary stacks must be s x 4"};
  if (!start.allFinite() || !end.allFinite())
    throw std::invalid_argument{"boundary stacks must be finite"};
  const BoundaryGradients g = boundary_gradients(s, T);
  PolyPiece p;
  p.order = s;
  p.duration = T;
  p.coeffs = (g.G_start * start + g.G_end * end).transpose();
  return p;
}

/// Derivatives 0..max_order of all channels at local time t; row r is the
/// r-th time derivative (chain rule brings in T^-r).
inline Eigen::MatrixXd eval_piece(const PolyPiece& p, double t, int max_order) {
  const int n = static_cast<int>(p.coeffs.cols());
  const double u = t / p.duration;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(max_order + 1, 4);
  double t_scale = 1.0;
  for (int r = 0; r <= max_order; ++r) {
    if (r > 0) t_scale /= p.duration;
    double u_pow = 1.0;
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    for (int j = r; j < n; ++j) {
      acc += detail::falling(j, r) * u_pow * p.coeffs.col(j);
      u_pow *= u;
    }
    out.row(r) = (t_scale * acc).transpose();
  }
  return out;
}

struct PiecewiseTrajectory {
  int order = 3;
  std::vector<PolyPiece> pieces;

  double total_duration() const {
    double t = 0.0;
    for (const PolyPiece& p : pieces) t += p.duration;
    return t;
  }
};

/// Evaluates the trajectory at global time t. Junction times resolve to the
/// later piece; both sides agree up to order s-1 by construction.
inline Eigen::MatrixXd eval(const PiecewiseTrajectory& traj, double t, int max_order) {
  if (traj.pieces.empty()) throw std::out_of_range{"empty trajectory"};
  const double total = traj.total_duration();
  if (t < -1e-12 || t > total * (1.0 + 1e-12) + 1e-12)
    throw std::out_of_range{"evaluation time outside trajectory span"};
  double t_local = std::max(0.0, t);
  for (size_t k = 0; k + 1 < traj.pieces.size(); ++k) {
    if (t_local < traj.pieces[k].duration) return eval_piece(traj.pieces[k], t_local, max_order);
    t_local -= traj.pieces[k].duration;
  }
  return eval_piece(traj.pieces.back(), std::min(t_local, traj.pieces.back().duration),
                    max_order);
}

}  // namespace aos
