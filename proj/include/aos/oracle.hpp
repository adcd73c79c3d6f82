#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "aos/lbfgs.hpp"
#include "aos/quad_model.hpp"

namespace aos {

/// One-dimensional double integrator state transfer with |u| <= u_max.
struct DiProblem {
  double x0 = 0.0;
  double v0 = 0.0;
  double xf = 0.0;
  double vf = 0.0;
  double u_max = 1.0;

  void validate() const {
    if (!(u_max > 0.0)) throw std::invalid_argument{"u_max must be positive"};
  }
};

/// Closed-form minimum-time bang-bang transfer: at most one switch.
struct DiSolution {
  double total_time = 0.0;
  double switch_time = 0.0;        // time of the sign change; equals 0 or T when one arc suffices
  std::array<int, 2> signs{0, 0};  // applied control signs, second entry 0 for single-arc
  int arc_count = 0;
};

/// Minimum time for the double integrator. First candidate accelerates then
/// brakes (peak velocity v_p >= max(v0, vf)); the mirrored candidate brakes
/// then accelerates. Exactly the candidates whose arc times are nonnegative
/// are admissible; the faster admissible one is optimal.
inline DiSolution di_min_time(const DiProblem& p) {
  p.validate();
  const double a = p.u_max;
  const double dx = p.xf - p.x0;
  DiSolution best;
  best.total_time = std::numeric_limits<double>::infinity();

  const double base = 0.5 * (p.v0 * p.v0 + p.vf * p.vf);
  // up-down: v rises to v_p at +a, falls to vf at -a
  {
    const double arg = a * dx + base;
    if (arg >= 0.0) {
      const double vp = std::sqrt(arg);
      const double t1 = (vp - p.v0) / a;
      const double t2 = (vp - p.vf) / a;
      if (t1 >= -1e-12 && t2 >= -1e-12) {
        DiSolution s;
        s.total_time = std::max(0.0, t1) + std::max(0.0, t2);
        s.switch_time = std::max(0.0, t1);
        s.signs = {+1, -1};
        s.arc_count = (t1 > 1e-12) + (t2 > 1e-12);
        if (s.total_time < best.total_time) best = s;
      }
    }
  }
  // down-up: v falls to v_b at -a, rises to vf at +a
  {
    const double arg = -a * dx + base;
    if (arg >= 0.0) {
      const double vb = -std::sqrt(arg);
      const double t1 = (p.v0 - vb) / a;
      const double t2 = (p.vf - vb) / a;
      if (t1 >= -1e-12 && t2 >= -1e-12) {
        DiSolution s;
        s.total_time = std::max(0.0, t1) + std::max(0.0, t2);
        s.switch_time = std::max(0.0, t1);
        s.signs = {-1, +1};
        s.arc_count = (t1 > 1e-12) + (t2 > 1e-12);
        if (s.total_time < best.total_time) best = s;
      }
    }
  }
  if (!std::isfinite(best.total_time))
    throw std::logic_error{"double-integrator transfer has no bang-bang candidate"};
  if (best.arc_count == 0) {
    best.signs = {0, 0};
    best.switch_time = 0.0;
  } else if (best.arc_count == 1 && best.switch_time <= 1e-12) {
    // first arc degenerate: all motion happens under the second sign
    best.signs = {best.signs[1], 0};
    best.switch_time = 0.0;
  } else if (best.arc_count == 1) {
    best.signs[1] = 0;
  }
  return best;
}

/// Independent check: scan the switch time of both sign orders on a uniform
/// grid, refine bracketed roots of the terminal position residual by
/// bisection, and keep the fastest admissible candidate.
inline double di_min_time_grid(const DiProblem& p, double resolution = 1e-4) {
  p.validate();
  const double a = p.u_max;
  double best = std::numeric_limits<double>::infinity();
  const double span = (std::abs(p.v0) + std::abs(p.vf)) / a +
                      2.0 * std::sqrt(std::abs(p.xf - p.x0) / a) + 1.0;

  for (const double s1 : {+1.0, -1.0}) {
    // residual of the terminal position once velocities are matched
    const auto residual = [&](double t1, double& T) {
      const double vs = p.v0 + s1 * a * t1;
      const double t2 = s1 * (vs - p.vf) / a;  // second arc has sign -s1
      if (t2 < 0.0) return std::numeric_limits<double>::quiet_NaN();
      T = t1 + t2;
      const double xs = p.x0 + p.v0 * t1 + 0.5 * s1 * a * t1 * t1;
      const double xe = xs + vs * t2 - 0.5 * s1 * a * t2 * t2;
      return xe - p.xf;
    };
    double prev_r = std::numeric_limits<double>::quiet_NaN();
    double prev_t = 0.0;
    for (double t1 = 0.0; t1 <= span; t1 += resolution) {
      double T = 0.0;
      const double r = residual(t1, T);
      if (std::isfinite(r) && std::abs(r) < 1e-12 && T < best) best = T;
      if (std::isfinite(r) && std::isfinite(prev_r) && r * prev_r < 0.0) {
        double lo = prev_t, hi = t1;
        for (int it = 0; it < 80; ++it) {
          const double mid = 0.5 * (lo + hi);
          double Tm = 0.0;
          const double rm = residual(mid, Tm);
          if (!std::isfinite(rm)) break;
          if (rm * prev_r <= 0.0)
            hi = mid;
          else
            lo = mid;
        }
        double Tr = 0.0;
        const double rr = residual(0.5 * (lo + hi), Tr);
        if (std::isfinite(rr) && Tr < best) best = Tr;
      }
      prev_r = r;
      prev_t = t1;
    }
  }
  return best;
}

struct CollocationResult {
  double total_time = 0.0;
  bool converged = false;
  int iterations = 0;
  double max_defect = 0.0;  // infinity norm of the dynamics defects at the solution
};

/// Direct-transcription program for the planar hover-to-hover transfer:
/// trapezoidal collocation of the dimensional planar dynamics (x, vx, z, vz,
/// theta; mass-normalized collective thrust and pitch rate) on K uniform
/// intervals with free final time. Controls enter through saturating maps so
/// their bounds hold by construction; the dynamics defects are squared-error
/// penalized. Entirely independent of the polynomial machinery: different
/// unknowns, different dynamics representation, different constraint handling.
class PlanarCollocation {
 public:
  PlanarCollocation(const QuadrotorParams& q, double dx, double dz, int K)
      : K_(K),
        g_(q.gravity),
        at_lo_(4.0 * q.rotor_thrust_min / q.mass),
        at_hi_(4.0 * q.rotor_thrust_max / q.mass),
        om_max_(q.body_rate_max.y()) {  // planar motion rotates about pitch
    if (K < 2) throw std::invalid_argument{"collocation needs at least 2 intervals"};
    x0_ << 0, 0, 0, 0, 0;
    xK_ << dx, 0, dz, 0, 0;
  }

  // layout: interior states (K-1)x5, controls (K+1)x2 raw, raw final time
  int dim() const { return kNs * (K_ - 1) + 2 * (K_ + 1) + 1; }

  /// Smoothstep position profile at hover thrust, level attitude.
  Eigen::VectorXd seed() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(dim());
    const double dx = xK_[0], dz = xK_[2];
    const double dist = std::hypot(dx, dz);
    const double t_seed =
        std::max(4.0 * kTFloor, 1.8 * std::sqrt(std::max(dist, 1e-6) / g_));
    const double hover_frac =
        std::clamp((g_ - at_lo_) / (at_hi_ - at_lo_), 1e-3, 1.0 - 1e-3);
    const double hover_raw = std::log(hover_frac / (1.0 - hover_frac));
    for (int k = 1; k < K_; ++k) {
      const double tau = static_cast<double>(k) / K_;
      const double s01 = tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
      const double d01 = 30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / t_seed;
      x[sidx(k, 0)] = dx * s01;
      x[sidx(k, 1)] = dx * d01;
      x[sidx(k, 2)] = dz * s01;
      x[sidx(k, 3)] = dz * d01;
    }
    for (int k = 0; k <= K_; ++k) x[uidx(k, 0)] = hover_raw;
    x[tidx()] = softplus_inv(t_seed - kTFloor);
    return x;
  }

  double total_time(const Eigen::VectorXd& x) const {
    return kTFloor + softplus(x[tidx()]);
  }

  /// Penalized cost T + w * sum |defect|^2 with its exact gradient.
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd& grad, double w) const {
    const std::vector<Node> nodes = build_nodes(x);
    const double T = total_time(x);
    const double dT_draw = 1.0 / (1.0 + std::exp(-x[tidx()]));
    const double h = T / K_;

    grad.setZero(dim());
    double cost = T;
    grad[tidx()] = dT_draw;
    for (int k = 0; k < K_; ++k) {
      const Node& a = nodes[k];
      const Node& b = nodes[k + 1];
      const Vec5 d = b.s - a.s - 0.5 * h * (a.f + b.f);
      cost += w * d.squaredNorm();
      const Vec5 gd = 2.0 * w * d;

      // state chains: identity terms plus A^T gd through the rhs
      const auto scatter = [&](const Node& n, int k_at, double id_sign) {
        Vec5 as = Vec5::Zero();
        as[1] = gd[0];
        as[3] = gd[2];
        as[4] = n.at * (n.cos_t * gd[1] - n.sin_t * gd[3]);
        if (k_at >= 1 && k_at <= K_ - 1)
          for (int c = 0; c < kNs; ++c)
            grad[sidx(k_at, c)] += id_sign * gd[c] - 0.5 * h * as[c];
        grad[uidx(k_at, 0)] -= 0.5 * h * n.dat * (n.sin_t * gd[1] + n.cos_t * gd[3]);
        grad[uidx(k_at, 1)] -= 0.5 * h * n.dom * gd[4];
      };
      scatter(a, k, -1.0);
      scatter(b, k + 1, +1.0);
      grad[tidx()] -= gd.dot(a.f + b.f) * dT_draw / (2.0 * K_);
    }
    return cost;
  }

  double max_defect(const Eigen::VectorXd& x) const {
    const std::vector<Node> nodes = build_nodes(x);
    const double h = total_time(x) / K_;
    double worst = 0.0;
    for (int k = 0; k < K_; ++k) {
      const Node& a = nodes[k];
      const Node& b = nodes[k + 1];
      worst = std::max(worst,
                       (b.s - a.s - 0.5 * h * (a.f + b.f)).cwiseAbs().maxCoeff());
    }
    return worst;
  }

 private:
  static constexpr int kNs = 5;
  static constexpr double kTFloor = 1e-3;
  using Vec5 = Eigen::Matrix<double, 5, 1>;

  struct Node {
    Vec5 s;                      // state
    Vec5 f;                      // dynamics rhs
    double at = 0.0, om = 0.0;   // saturated controls
    double dat = 0.0, dom = 0.0; // d control / d raw
    double sin_t = 0.0, cos_t = 0.0;
  };

  int sidx(int k, int c) const { return kNs * (k - 1) + c; }  // 1 <= k <= K-1
  int uidx(int k, int c) const { return kNs * (K_ - 1) + 2 * k + c; }
  int tidx() const { return dim() - 1; }

  static double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
  static double softplus_inv(double y) {
    const double z = std::max(y, 1e-12);
    return z > 30.0 ? z : std::log(std::expm1(z));
  }
  static double sigmoid(double v) {
    return v > 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }

  std::vector<Node> build_nodes(const Eigen::VectorXd& x) const {
    std::vector<Node> nodes(K_ + 1);
    for (int k = 0; k <= K_; ++k) {
      Node& n = nodes[k];
      if (k == 0)
        n.s = x0_;
      else if (k == K_)
        n.s = xK_;
      else
        for (int c = 0; c < kNs; ++c) n.s[c] = x[sidx(k, c)];
      const double su = sigmoid(x[uidx(k, 0)]);
      n.at = at_lo_ + (at_hi_ - at_lo_) * su;
      n.dat = (at_hi_ - at_lo_) * su * (1.0 - su);
      const double to = std::tanh(x[uidx(k, 1)]);
      n.om = om_max_ * to;
      n.dom = om_max_ * (1.0 - to * to);
      n.sin_t = std::sin(n.s[4]);
      n.cos_t = std::cos(n.s[4]);
      n.f << n.s[1], n.at * n.sin_t, n.s[3], n.at * n.cos_t - g_, n.om;
    }
    return nodes;
  }

  int K_;
  double g_, at_lo_, at_hi_, om_max_;
  Vec5 x0_, xK_;
};

/// Drives the collocation program through the quasi-Newton continuation the
/// planner uses and reports the reference duration. Convergence demands both
/// the optimizer plateau and defects below 2e-3 in the infinity norm.
inline CollocationResult planar_collocation_reference(const QuadrotorParams& q, double dx,
                                                      double dz, int K) {
  const PlanarCollocation prog(q, dx, dz, K);
  Eigen::VectorXd x = prog.seed();

  LbfgsOptions lo;
  lo.memory = 12;
  lo.max_iters = 600;
  lo.progress_tol_rel = 2.5e-7;
  CollocationResult res;
  bool last_conv = false;
  for (const double w : {1e1, 1e2, 1e3, 1e4, 1e5}) {
    const auto fg = [&prog, w](const Eigen::VectorXd& xx, Eigen::VectorXd& gg) {
      return prog.objective(xx, gg, w);
    };
    LbfgsResult r = lbfgs_minimize(fg, std::move(x), lo);
    x = std::move(r.x);
    res.iterations += r.iterations;
    last_conv = r.converged;
  }

  res.total_time = prog.total_time(x);
  res.max_defect = prog.max_defect(x);
  res.converged = last_conv && res.max_defect <= 2e-3;
  return res;
}

/// Exact rollout of a DiSolution under piecewise-constant control; used to
/// confirm the terminal state is reached.
inline std::pair<double, double> di_rollout(const DiProblem& p, const DiSolution& s) {
  double x = p.x0, v = p.v0;
  double t_prev = 0.0;
  const std::array<double, 2> ends{s.arc_count >= 2 ? s.switch_time : s.total_time, s.total_time};
  for (int i = 0; i < std::max(1, s.arc_count); ++i) {
    const double dt = ends[i] - t_prev;
    const double u = s.signs[i] * p.u_max;
    x += v * dt + 0.5 * u * dt * dt;
    v += u * dt;
    t_prev = ends[i];
  }
  return {x, v};
}

}  // namespace aos
