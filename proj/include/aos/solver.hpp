#pragma once

#include "aos/flatness.hpp"
#include "aos/lbfgs.hpp"
#include "aos/piecewise_poly.hpp"
#include "aos/quad_model.hpp"
#include "aos/task_pool.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <exception>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace aos {

struct Waypoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double tolerance = 0.0;  // m; 0 pins the junction position exactly
  std::optional<double> yaw;
};

/// Two-state or multi-waypoint minimum-time task. Boundary stacks pin flat
/// derivatives 0..s-1 (rows) of (px, py, pz, psi); yaw rides in column 3.
struct PlanProblem {
  Model model = Model::R;
  QuadrotorParams params = preset("STD");
  Eigen::MatrixXd start_stack;
  Eigen::MatrixXd end_stack;
  std::vector<Waypoint> waypoints;
  int pieces_per_segment = 0;  // 0 = switch-count bound (5 + 4 + n_se + 1)
  int n_se = 2;
  FlatnessOptions flat_options{};

  int order() const { return model == Model::S ? 3 : 4; }

  static PlanProblem two_state(Model m, const QuadrotorParams& q, const Eigen::Vector3d& from,
                               const Eigen::Vector3d& to) {
    PlanProblem p;
    p.model = m;
    p.params = q;
    const int s = p.order();
    p.start_stack = Eigen::MatrixXd::Zero(s, 4);
    p.end_stack = Eigen::MatrixXd::Zero(s, 4);
    p.start_stack.row(0).head<3>() = from.transpose();
    p.end_stack.row(0).head<3>() = to.transpose();
    return p;
  }
};

struct SolverOptions {
  std::vector<double> penalty_schedule{1e2, 1e3, 1e4, 1e5};
  int quadrature = 16;    // closed uniform penalty grid per piece
  int audit_factor = 10;  // dense audit density multiplier
  double feas_tol = 1e-3;
  double grad_tol = 1e-5;
  int max_stage_iterations = 500;
  int warm_stage_iterations = 250;
  int memory = 12;
  /// Stop a stage once f improves by less than this (relative) over a short
  /// window; the final stage uses it as is, warm stages 8x looser.
  double progress_tol_rel = 2e-5;
  /// The optimizer sees every bound tightened by this much; the audit uses
  /// the true bounds. The cubic hinge at the final penalty weight settles
  /// at a residual violation of a few 1e-3, so without the margin no solve
  /// could ever pass the feasibility tolerance.
  double constraint_margin = 5e-3;
  /// Outer rounds of audit-guided penalty node insertion.
  int refine_rounds = 4;
};

struct Solution {
  PiecewiseTrajectory trajectory;
  double total_time = 0.0;
  std::vector<double> piece_times;
  bool converged = false;
  int iterations = 0;
  double max_violation = 0.0;              // dense-audit maximum
  std::vector<double> objective_history;   // accepted merit values
  std::vector<int> stage_breaks;           // history index where each stage starts
  int pieces = 0;
};

struct InfeasibleBoundary : std::runtime_error {
  InfeasibleBoundary() : std::runtime_error{"boundary stack violates the constraint set"} {}
};
struct AllAttemptsFailed : std::runtime_error {
  AllAttemptsFailed() : std::runtime_error{"no piece count produced a feasible converged plan"} {}
};

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) {
  const double z = std::max(y, 1e-12);
  return z > 30.0 ? z : std::log(std::expm1(z));
}
inline double logistic(double x) {
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

using EvalMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 8>;
using StackMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 5, 4>;

/// Evaluation functional: stack row r = sum_j E(r,j) coeff_j at u = t/T.
inline EvalMatrix eval_functional(int s, double u, double T) {
  const int n = 2 * s;
  EvalMatrix e;
  e.setZero(s + 1, n);
  double t_scale = 1.0;
  for (int r = 0; r <= s; ++r) {
    if (r > 0) t_scale /= T;
    double u_pow = 1.0;
    for (int j = r; j < n; ++j) {
      e(r, j) = falling(j, r) * u_pow * t_scale;
      u_pow *= u;
    }
  }
  return e;
}

}  // namespace detail

/// One interior junction of the transcription.
struct JunctionSpec {
  bool position_fixed = false;
  Eigen::Vector3d fixed_position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  int ball_waypoint = -1;  // waypoint index when passage is a ball constraint
};

/// Penalty transcription over junction derivative stacks and piece durations.
///
/// Decision vector: per interior junction, rows 0..s-1 of the free channels
/// (row 0 dropped when the position is pinned to a waypoint), then one raw
/// duration per piece mapped through T = T_floor + softplus(raw). Yaw is not
/// a decision variable: each junction's yaw value is fixed and its higher
/// derivatives are zero.
class PenaltyProgram {
 public:
  int s = 4;
  int channels = 4;       // stack columns fed to the constraint function
  int free_channels = 3;  // leading channels that junctions optimize
  Eigen::MatrixXd start, end;  // s x channels
  std::vector<JunctionSpec> junctions;
  /// stack ((s+1) x channels) -> violations and jacobian w.r.t. stack entries
  std::function<ConstraintSystem(const Eigen::Ref<const Eigen::MatrixXd>&)> constraints;
  const std::vector<Waypoint>* waypoints = nullptr;
  SolverOptions opt;
  /// Per-row magnitudes of the junction variables. Derivative rows grow
  /// roughly geometrically with order, and quasi-Newton steps stall badly
  /// when position entries (metres) share a vector with snap entries
  /// (hundreds per second^4), so decision variables store d_r / row_scale[r].
  Eigen::VectorXd row_scale;
  /// Audit-inserted penalty nodes (per piece, in u). Constraint violations
  /// can hide in the gaps of the uniform grid: boundary layers of the top
  /// derivative row near junctions swing hard enough to clear a node gap
  /// while touching none of its ends. The outer loop drops extra nodes on
  /// whatever the dense audit catches.
  std::vector<std::vector<double>> extra_nodes;

  void scale_rows(double rate) {
    row_scale.resize(s);
    double v = 1.0;
    for (int r = 0; r < s; ++r, v *= rate) row_scale[r] = v;
  }

  int n_pieces() const { return static_cast<int>(junctions.size()) + 1; }

  int junction_vars(const JunctionSpec& j) const {
    return (s - (j.position_fixed ? 1 : 0)) * free_channels;
  }

  int dimension() const {
    int n = n_pieces();
    for (const JunctionSpec& j : junctions) n += junction_vars(j);
    return n;
  }

  double rscale(int r) const {
    return row_scale.size() == s ? row_scale[r] : 1.0;
  }

  Eigen::VectorXd encode(const std::vector<Eigen::MatrixXd>& stacks,
                         const std::vector<double>& durations) const {
    Eigen::VectorXd x(dimension());
    int at = 0;
    for (size_t j = 0; j < junctions.size(); ++j) {
      const Eigen::MatrixXd& st = stacks[j + 1];
      for (int r = junctions[j].position_fixed ? 1 : 0; r < s; ++r)
        for (int c = 0; c < free_channels; ++c) x[at++] = st(r, c) / rscale(r);
    }
    for (int k = 0; k < n_pieces(); ++k)
      x[at++] = detail::softplus_inv(durations[k] - kTFloor);
    return x;
  }

  void decode(const Eigen::VectorXd& x, std::vector<Eigen::MatrixXd>& stacks,
              std::vector<double>& durations) const {
    const int np = n_pieces();
    stacks.assign(np + 1, Eigen::MatrixXd::Zero(s, channels));
    stacks.front() = start;
    stacks.back() = end;
    int at = 0;
    for (size_t j = 0; j < junctions.size(); ++j) {
      Eigen::MatrixXd& st = stacks[j + 1];
      if (junctions[j].position_fixed)
        st.row(0).head<3>() = junctions[j].fixed_position.transpose();
      for (int r = junctions[j].position_fixed ? 1 : 0; r < s; ++r)
        for (int c = 0; c < free_channels; ++c) st(r, c) = x[at++] * rscale(r);
      if (channels == 4) st(0, 3) = junctions[j].yaw;
    }
    durations.resize(np);
    for (int k = 0; k < np; ++k) durations[k] = kTFloor + detail::softplus(x[at++]);
  }

  /// Penalty terms of one piece: cost contribution and gradients against the
  /// two boundary stacks and the duration.
  struct PieceTerms {
    double cost = 0.0;
    Eigen::MatrixXd start_grad, end_grad;  // s x channels
    double dur_grad = 0.0;
  };

  PieceTerms piece_terms(int k, const std::vector<Eigen::MatrixXd>& stacks, double T,
                         double w) const {
    const int q_nodes = opt.quadrature;
    PieceTerms out;
    out.start_grad = Eigen::MatrixXd::Zero(s, channels);
    out.end_grad = Eigen::MatrixXd::Zero(s, channels);

    const BoundaryGradients g = boundary_gradients(s, T);
    const BoundaryMatrix coef = g.G_start * stacks[k] + g.G_end * stacks[k + 1];
    const BoundaryMatrix coef_dT =
        g.G_start_dT * stacks[k] + g.G_end_dT * stacks[k + 1];

    const auto penalize_node = [&](double u) {
      const detail::EvalMatrix e = detail::eval_functional(s, u, T);
      const detail::StackMatrix stack = e * coef;
      const ConstraintSystem sys = constraints(stack);

      double pen_sum = 0.0;
      Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 11, 1> dpen;
      dpen.setZero(sys.values.size());
      for (int i = 0; i < sys.values.size(); ++i) {
        const double v = sys.values[i] + opt.constraint_margin;
        if (v > 0.0) {
          pen_sum += v * v * v;
          dpen[i] = 3.0 * v * v;
        }
      }
      if (pen_sum == 0.0 && dpen.isZero(0.0)) return;
      const double node_w = w * T / q_nodes;
      out.cost += node_w * pen_sum;

      detail::StackMatrix g_stack;
      g_stack.setZero(s + 1, channels);
      for (int i = 0; i < sys.values.size(); ++i) {
        if (dpen[i] == 0.0) continue;
        for (int r = 0; r <= s; ++r)
          for (int c = 0; c < channels; ++c)
            g_stack(r, c) += node_w * dpen[i] * sys.jacobian(i, r * channels + c);
      }

      const BoundaryMatrix et_g = e.transpose() * g_stack;  // 2s x channels
      out.start_grad += g.G_start.transpose() * et_g;
      out.end_grad += g.G_end.transpose() * et_g;

      out.dur_grad += w * pen_sum / q_nodes;  // node weight carries T
      // g_stack already carries the node weight; the stack moves with T
      // through the coefficients and through the T^-r evaluation scalings
      double dt_acc = 0.0;
      const detail::StackMatrix stack_dT = e * coef_dT;
      for (int r = 0; r <= s; ++r)
        for (int c = 0; c < channels; ++c)
          dt_acc += g_stack(r, c) * (stack_dT(r, c) - r / T * stack(r, c));
      out.dur_grad += dt_acc;
    };

    // closed grid: junction boundary layers of the free top derivative
    // row are invisible to midpoint sampling but dominate the audit
    for (int q = 0; q < q_nodes; ++q)
      penalize_node(static_cast<double>(q) / (q_nodes - 1));
    // the layers thin out geometrically toward the piece ends, so the
    // uniform grid gets fixed companions there
    for (double en : {0.015, 0.05, 0.12}) {
      penalize_node(en);
      penalize_node(1.0 - en);
    }
    if (k < static_cast<int>(extra_nodes.size()))
      for (double u : extra_nodes[k]) penalize_node(u);
    return out;
  }

  /// Penalized objective and its exact gradient at penalty weight w. Pieces
  /// evaluate in parallel lanes; the reduction below runs in piece order so
  /// the result does not depend on the lane count.
  double objective(const Eigen::VectorXd& x, Eigen::VectorXd& grad, double w) const {
    std::vector<Eigen::MatrixXd> stacks;
    std::vector<double> durations;
    decode(x, stacks, durations);
    const int np = n_pieces();

    std::vector<PieceTerms> terms(np);
    std::vector<std::exception_ptr> errors(np);
    TaskPool& pool = TaskPool::instance();
    pool.run([&](int lane) {
      for (int k = lane; k < np; k += pool.lanes()) {
        try {
          terms[k] = piece_terms(k, stacks, durations[k], w);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);

    double cost = 0.0;
    std::vector<Eigen::MatrixXd> stack_grads(np + 1,
                                             Eigen::MatrixXd::Zero(s, channels));
    std::vector<double> dur_grads(np);
    for (int k = 0; k < np; ++k) {
      cost += durations[k] + terms[k].cost;
      stack_grads[k] += terms[k].start_grad;
      stack_grads[k + 1] += terms[k].end_grad;
      dur_grads[k] = 1.0 + terms[k].dur_grad;  // d(sum T)/dT plus penalty terms
    }

    // ball waypoints: quadratic hinge on the distance excess at the junction
    for (size_t j = 0; j < junctions.size(); ++j) {
      const int wp_i = junctions[j].ball_waypoint;
      if (wp_i < 0) continue;
      const Waypoint& wp = (*waypoints)[wp_i];
      const Eigen::Vector3d p = stacks[j + 1].row(0).head<3>().transpose();
      const Eigen::Vector3d d = p - wp.position;
      const double dist = d.norm();
      const double excess = dist - wp.tolerance;
      if (excess > 0.0) {
        cost += w * excess * excess;
        stack_grads[j + 1].row(0).head<3>() +=
            (2.0 * w * excess / dist) * d.transpose();
      }
    }

    grad.resize(dimension());
    int at = 0;
    for (size_t j = 0; j < junctions.size(); ++j)
      for (int r = junctions[j].position_fixed ? 1 : 0; r < s; ++r)
        for (int c = 0; c < free_channels; ++c)
          grad[at++] = stack_grads[j + 1](r, c) * rscale(r);
    for (int k = 0; k < np; ++k) {
      const double raw = x[at];
      grad[at++] = dur_grads[k] * detail::logistic(raw);
    }
    return cost;
  }

  /// Worst violation and its location per piece, scanned over audit_factor x
  /// quadrature midpoint nodes plus both piece endpoints.
  std::vector<std::pair<double, double>> audit_profile(  // (u, violation)
      const std::vector<Eigen::MatrixXd>& stacks,
      const std::vector<double>& durations) const {
    const int np = n_pieces();
    const int dense = opt.quadrature * opt.audit_factor;
    std::vector<std::pair<double, double>> prof(np, {0.0, -1e300});
    std::vector<std::exception_ptr> errors(np);
    TaskPool& pool = TaskPool::instance();
    pool.run([&](int lane) {
      for (int k = lane; k < np; k += pool.lanes()) {
        try {
          const double T = durations[k];
          const BoundaryGradients g = boundary_gradients(s, T);
          const BoundaryMatrix coef = g.G_start * stacks[k] + g.G_end * stacks[k + 1];
          for (int q = -1; q <= dense; ++q) {
            const double u = q < 0 ? 0.0 : (q == dense ? 1.0 : (q + 0.5) / dense);
            const detail::StackMatrix stack = detail::eval_functional(s, u, T) * coef;
            const ConstraintSystem sys = constraints(stack);
            const double v = sys.values.maxCoeff();
            if (v > prof[k].second) prof[k] = {u, v};
          }
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
    return prof;
  }

  /// Dense feasibility audit: max positive violation over the profile scan,
  /// plus ball-waypoint distance excesses.
  double audit(const std::vector<Eigen::MatrixXd>& stacks,
               const std::vector<double>& durations) const {
    double worst = 0.0;
    for (const auto& [u, v] : audit_profile(stacks, durations)) worst = std::max(worst, v);
    for (size_t j = 0; j < junctions.size(); ++j) {
      const int wp_i = junctions[j].ball_waypoint;
      if (wp_i < 0) continue;
      const Eigen::Vector3d p = stacks[j + 1].row(0).head<3>().transpose();
      worst = std::max(worst, (p - (*waypoints)[wp_i].position).norm() -
                                  (*waypoints)[wp_i].tolerance);
    }
    return std::max(worst, 0.0);
  }
};

namespace detail {

inline std::function<ConstraintSystem(const Eigen::Ref<const Eigen::MatrixXd>&)>
quad_constraints(const QuadrotorParams& q, Model model, const FlatnessOptions& fo) {
  const int s = model == Model::S ? 3 : 4;
  return [q, model, fo, s](const Eigen::Ref<const Eigen::MatrixXd>& stack) {
    return constraint_system(stack, s, q, model, fo);
  };
}

/// |x''| <= u_max as two smooth rows; the embedding that reuses the flight
/// machinery for the double-integrator study.
inline std::function<ConstraintSystem(const Eigen::Ref<const Eigen::MatrixXd>&)>
di_constraints(double u_max) {
  return [u_max](const Eigen::Ref<const Eigen::MatrixXd>& stack) {
    ConstraintSystem sys;
    sys.values.resize(2);
    sys.jacobian.setZero(2, static_cast<int>(stack.rows() * stack.cols()));
    const double a = stack(2, 0);
    sys.values << a - u_max, -a - u_max;
    sys.jacobian(0, 2 * static_cast<int>(stack.cols())) = 1.0;
    sys.jacobian(1, 2 * static_cast<int>(stack.cols())) = -1.0;
    return sys;
  };
}

/// Conservative rest-to-rest duration seed from a trapezoidal profile.
inline double seed_duration(double distance, double v_cap, double a_cap) {
  if (distance <= 0.0 || v_cap <= 0.0 || a_cap <= 0.0) return 1.0;
  return std::max(1.0, distance / v_cap + v_cap / a_cap);
}

inline double quad_seed_duration(const PlanProblem& p, double distance) {
  const double ut_max =
      4.0 * p.params.rotor_thrust_max / (p.params.mass * p.params.gravity);
  const double margin = std::sqrt(std::max(ut_max * ut_max - 1.0, 0.01));
  const double v_cap = 0.6 * std::sqrt(p.params.gravity * margin);
  const double a_cap = p.params.gravity * margin;
  return seed_duration(distance, v_cap, a_cap);
}

inline void check_boundary_feasible(const PlanProblem& p, const Eigen::MatrixXd& stack,
                                    double feas_tol) {
  // pad the free top derivative row with zero; only what the boundary pins
  // is judged
  const int s = p.order();
  DerivativeStack ds;
  ds.order = s;
  ds.derivs = Eigen::MatrixXd::Zero(s + 1, 4);
  ds.derivs.topRows(s) = stack;
  if (constraint_map(ds, p.params, p.model, p.flat_options).maxCoeff() > feas_tol)
    throw InfeasibleBoundary{};
}

struct ContinuationResult {
  Eigen::VectorXd x;
  bool last_stage_converged = false;
  int iterations = 0;
  std::vector<double> history;
  std::vector<int> stage_breaks;
};

inline ContinuationResult run_continuation(PenaltyProgram& prog, Eigen::VectorXd x,
                                           const SolverOptions& opt) {
  ContinuationResult res;
  LbfgsOptions lo;
  lo.memory = opt.memory;
  lo.grad_tol_rel = opt.grad_tol;
  const double final_progress_tol = opt.progress_tol_rel;
  for (size_t stage = 0; stage < opt.penalty_schedule.size(); ++stage) {
    const double w = opt.penalty_schedule[stage];
    const bool final_stage = stage + 1 == opt.penalty_schedule.size();
    lo.max_iters = final_stage ? opt.max_stage_iterations : opt.warm_stage_iterations;
    // warm stages settle with an 8x looser plateau; polishing the shape at a
    // weight the next stage will overwrite is wasted work
    lo.progress_tol_rel = final_stage ? final_progress_tol : 8.0 * final_progress_tol;
    res.stage_breaks.push_back(static_cast<int>(res.history.size()));
    const auto fg = [&prog, w](const Eigen::VectorXd& xx, Eigen::VectorXd& gg) {
      return prog.objective(xx, gg, w);
    };
    LbfgsResult r = lbfgs_minimize(fg, std::move(x), lo, &res.history);
    x = std::move(r.x);
    res.iterations += r.iterations;
    res.last_stage_converged = r.converged;
  }
  res.x = std::move(x);
  return res;
}

/// Continuation plus audit-guided refinement: when the dense audit catches a
/// violation the penalty grid cannot see, its location becomes a penalty
/// node and the continuation reruns warm. Mutates the program's node set.
inline ContinuationResult solve_refined(PenaltyProgram& prog, Eigen::VectorXd x0,
                                        const SolverOptions& opt) {
  ContinuationResult cr = run_continuation(prog, std::move(x0), opt);
  for (int round = 0; round < opt.refine_rounds; ++round) {
    std::vector<Eigen::MatrixXd> stacks;
    std::vector<double> durations;
    prog.decode(cr.x, stacks, durations);
    const auto prof = prog.audit_profile(stacks, durations);
    if (prog.extra_nodes.size() < prof.size()) prog.extra_nodes.resize(prof.size());
    bool inserted = false;
    for (size_t k = 0; k < prof.size(); ++k) {
      const auto [u, v] = prof[k];
      if (v <= opt.feas_tol) continue;
      // bracket the peak: a lone node lets the bulge slide sideways into the
      // next gap and costs another full round
      for (double cand : {u - 0.02, u, u + 0.02}) {
        cand = std::clamp(cand, 0.002, 0.998);
        bool duplicate = false;
        for (double e : prog.extra_nodes[k]) duplicate |= std::abs(e - cand) < 5e-3;
        if (!duplicate) {
          prog.extra_nodes[k].push_back(cand);
          inserted = true;
        }
      }
    }
    if (!inserted) break;
    // the iterate already sits at the top-weight equilibrium; rerunning the
    // low-weight stages would just let the violations reinflate
    SolverOptions ropt = opt;
    ropt.penalty_schedule = {opt.penalty_schedule.back()};
    const int prior_len = static_cast<int>(cr.history.size());
    ContinuationResult run = run_continuation(prog, cr.x, ropt);
    for (int& b : run.stage_breaks) b += prior_len;
    run.iterations += cr.iterations;
    cr.history.insert(cr.history.end(), run.history.begin(), run.history.end());
    run.history = std::move(cr.history);
    cr.stage_breaks.insert(cr.stage_breaks.end(), run.stage_breaks.begin(),
                           run.stage_breaks.end());
    run.stage_breaks = std::move(cr.stage_breaks);
    cr = std::move(run);
  }
  return cr;
}

inline Solution finish_solution(const PenaltyProgram& prog, const ContinuationResult& cr) {
  Solution sol;
  std::vector<Eigen::MatrixXd> stacks;
  std::vector<double> durations;
  prog.decode(cr.x, stacks, durations);
  sol.trajectory.order = prog.s;
  for (int k = 0; k < prog.n_pieces(); ++k)
    sol.trajectory.pieces.push_back(
        piece_from_boundary(stacks[k], stacks[k + 1], durations[k], prog.s));
  sol.piece_times = durations;
  sol.total_time = sol.trajectory.total_duration();
  sol.iterations = cr.iterations;
  sol.objective_history = cr.history;
  sol.stage_breaks = cr.stage_breaks;
  sol.max_violation = prog.audit(stacks, durations);
  sol.converged = cr.last_stage_converged && sol.max_violation <= prog.opt.feas_tol;
  sol.pieces = prog.n_pieces();
  return sol;
}

}  // namespace detail

/// Transcription for a two-state flight with N pieces. Junction yaw values
/// interpolate the endpoint yaws by index.
inline PenaltyProgram two_state_program(const PlanProblem& p, int N,
                                        const SolverOptions& opt = {}) {
  if (N < 1) throw std::invalid_argument{"piece count must be >= 1"};
  PenaltyProgram prog;
  prog.s = p.order();
  prog.channels = 4;
  prog.free_channels = 3;
  prog.start = p.start_stack;
  prog.end = p.end_stack;
  prog.opt = opt;
  prog.constraints = detail::quad_constraints(p.params, p.model, p.flat_options);
  const Eigen::Vector3d from = p.start_stack.row(0).head<3>().transpose();
  const Eigen::Vector3d to = p.end_stack.row(0).head<3>().transpose();
  const double t_piece = detail::quad_seed_duration(p, (to - from).norm()) / N;
  prog.scale_rows(std::max(1.0, 2.0 / t_piece));
  const double psi0 = p.start_stack(0, 3), psi1 = p.end_stack(0, 3);
  for (int j = 1; j < N; ++j) {
    JunctionSpec js;
    js.yaw = psi0 + (psi1 - psi0) * j / N;
    prog.junctions.push_back(js);
  }
  return prog;
}

inline std::pair<double, Eigen::VectorXd> objective_and_gradient(const PlanProblem& p, int N,
                                                                 const Eigen::VectorXd& x,
                                                                 double w,
                                                                 const SolverOptions& opt = {}) {
  const PenaltyProgram prog = two_state_program(p, N, opt);
  Eigen::VectorXd grad;
  const double cost = prog.objective(x, grad, w);
  return {cost, std::move(grad)};
}

namespace detail {

/// Straight-line single-piece seed: endpoint stacks, trapezoidal duration.
inline Eigen::VectorXd seed_two_state(const PenaltyProgram& prog, const PlanProblem& p) {
  const Eigen::Vector3d from = p.start_stack.row(0).head<3>().transpose();
  const Eigen::Vector3d to = p.end_stack.row(0).head<3>().transpose();
  std::vector<Eigen::MatrixXd> stacks{p.start_stack, p.end_stack};
  std::vector<double> durations{quad_seed_duration(p, (to - from).norm())};
  return prog.encode(stacks, durations);
}

/// Warm start with N pieces by splitting a solved trajectory at equal time
/// fractions and copying its derivatives at the split instants.
inline Eigen::VectorXd seed_from_split(const PenaltyProgram& prog, const Solution& base,
                                       int N) {
  const double total = base.total_time;
  std::vector<Eigen::MatrixXd> stacks;
  std::vector<double> durations(N, total / N);
  stacks.push_back(prog.start);
  for (int j = 1; j < N; ++j) {
    const Eigen::MatrixXd d = eval(base.trajectory, total * j / N, prog.s - 1);
    stacks.push_back(d.topRows(prog.s));
  }
  stacks.push_back(prog.end);
  return prog.encode(stacks, durations);
}

}  // namespace detail

inline Solution solve_two_state(const PlanProblem& p, int N, const SolverOptions& opt = {}) {
  if (N < 1) throw std::invalid_argument{"piece count must be >= 1"};
  detail::check_boundary_feasible(p, p.start_stack, opt.feas_tol);
  detail::check_boundary_feasible(p, p.end_stack, opt.feas_tol);

  PenaltyProgram base_prog = two_state_program(p, 1, opt);
  const detail::ContinuationResult base_run =
      detail::solve_refined(base_prog, detail::seed_two_state(base_prog, p), opt);
  Solution base = detail::finish_solution(base_prog, base_run);
  if (N == 1) return base;

  PenaltyProgram prog = two_state_program(p, N, opt);
  const detail::ContinuationResult run =
      detail::solve_refined(prog, detail::seed_from_split(prog, base, N), opt);
  return detail::finish_solution(prog, run);
}

/// Piece budget from the switch-count bounds: thrust switches + rate
/// switches + singular arcs + 1.
inline int switch_bound_pieces(int n_se) { return 5 + 4 + n_se + 1; }

/// Robust outer loop: solve N=1 once, then attempt the switch-bound piece
/// count and every smaller N, warm-starting each from the N=1 solution;
/// first attempt that converges and passes the dense audit wins.
inline Solution robust_aos(const PlanProblem& p, const SolverOptions& opt = {}) {
  detail::check_boundary_feasible(p, p.start_stack, opt.feas_tol);
  detail::check_boundary_feasible(p, p.end_stack, opt.feas_tol);

  PenaltyProgram base_prog = two_state_program(p, 1, opt);
  const detail::ContinuationResult base_run =
      detail::solve_refined(base_prog, detail::seed_two_state(base_prog, p), opt);
  Solution base = detail::finish_solution(base_prog, base_run);

  for (int n = switch_bound_pieces(p.n_se); n >= 1; --n) {
    if (n == 1) {
      if (base.converged) return base;
      continue;
    }
    PenaltyProgram prog = two_state_program(p, n, opt);
    const detail::ContinuationResult run =
        detail::solve_refined(prog, detail::seed_from_split(prog, base, n), opt);
    Solution sol = detail::finish_solution(prog, run);
    if (sol.converged) return sol;
  }
  throw AllAttemptsFailed{};
}

/// Multi-waypoint transcription: L = waypoints+1 segments of N pieces each.
/// Zero-tolerance waypoints are eliminated (position pinned); positive
/// tolerances become ball penalties. Waypoint yaw pins the junction yaw.
inline PenaltyProgram waypoint_program(const PlanProblem& p, int pieces_per_segment,
                                       const SolverOptions& opt = {}) {
  PenaltyProgram prog;
  prog.s = p.order();
  prog.channels = 4;
  prog.free_channels = 3;
  prog.start = p.start_stack;
  prog.end = p.end_stack;
  prog.opt = opt;
  prog.constraints = detail::quad_constraints(p.params, p.model, p.flat_options);
  prog.waypoints = &p.waypoints;

  const int n_seg = static_cast<int>(p.waypoints.size()) + 1;
  const int total = n_seg * pieces_per_segment;
  {
    std::vector<Eigen::Vector3d> pts;
    pts.push_back(p.start_stack.row(0).head<3>().transpose());
    for (const Waypoint& wp : p.waypoints) pts.push_back(wp.position);
    pts.push_back(p.end_stack.row(0).head<3>().transpose());
    double t_sum = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i)
      t_sum += detail::quad_seed_duration(p, (pts[i + 1] - pts[i]).norm());
    prog.scale_rows(std::max(1.0, 2.0 * total / t_sum));
  }
  const double psi0 = p.start_stack(0, 3), psi1 = p.end_stack(0, 3);
  for (int j = 1; j < total; ++j) {
    JunctionSpec js;
    js.yaw = psi0 + (psi1 - psi0) * j / total;
    if (j % pieces_per_segment == 0) {
      const int wp_i = j / pieces_per_segment - 1;
      const Waypoint& wp = p.waypoints[wp_i];
      if (wp.yaw) js.yaw = *wp.yaw;
      if (wp.tolerance == 0.0) {
        js.position_fixed = true;
        js.fixed_position = wp.position;
      } else {
        js.ball_waypoint = wp_i;
      }
    }
    prog.junctions.push_back(js);
  }
  return prog;
}

inline Solution solve_waypoints(const PlanProblem& p, const SolverOptions& opt = {}) {
  if (p.waypoints.empty()) throw std::invalid_argument{"waypoint solve needs >= 1 waypoint"};
  detail::check_boundary_feasible(p, p.start_stack, opt.feas_tol);
  detail::check_boundary_feasible(p, p.end_stack, opt.feas_tol);
  const int per_seg =
      p.pieces_per_segment > 0 ? p.pieces_per_segment : switch_bound_pieces(p.n_se);
  PenaltyProgram prog = waypoint_program(p, per_seg, opt);

  // polyline seed: junctions along the straight legs, derivative rows zero
  const int s = prog.s;
  std::vector<Eigen::Vector3d> anchors;
  anchors.push_back(p.start_stack.row(0).head<3>().transpose());
  for (const Waypoint& wp : p.waypoints) anchors.push_back(wp.position);
  anchors.push_back(p.end_stack.row(0).head<3>().transpose());

  std::vector<Eigen::MatrixXd> stacks;
  std::vector<double> durations;
  stacks.push_back(p.start_stack);
  const int total = prog.n_pieces();
  for (int j = 1; j < total; ++j) {
    const int seg = (j - 1) / per_seg;
    const double frac = static_cast<double>(j - seg * per_seg) / per_seg;
    const Eigen::Vector3d pos = anchors[seg] + frac * (anchors[seg + 1] - anchors[seg]);
    Eigen::MatrixXd st = Eigen::MatrixXd::Zero(s, 4);
    st.row(0).head<3>() = pos.transpose();
    st(0, 3) = prog.junctions[j - 1].yaw;
    stacks.push_back(st);
  }
  stacks.push_back(p.end_stack);
  for (int seg = 0; seg + 1 < static_cast<int>(anchors.size()); ++seg) {
    const double T_seg =
        detail::quad_seed_duration(p, (anchors[seg + 1] - anchors[seg]).norm());
    for (int k = 0; k < per_seg; ++k) durations.push_back(T_seg / per_seg);
  }

  const detail::ContinuationResult run =
      detail::solve_refined(prog, prog.encode(stacks, durations), opt);
  return detail::finish_solution(prog, run);
}

/// Double-integrator task through the same engine: the moving coordinate
/// lives in channel 0 (the other channels stay identically zero so the
/// 4-channel piece layout is reused unchanged), s=3, bound on the second
/// derivative.
inline Solution solve_double_integrator(double x0, double v0, double xf, double vf,
                                        double u_max, int N, const SolverOptions& opt_in = {}) {
  // the one-channel programs are tiny, so run them to a tight plateau; the
  // default threshold tuned for quadrotor solves quits with the durations
  // still sliding between pieces
  SolverOptions opt = opt_in;
  opt.progress_tol_rel = std::min(opt.progress_tol_rel, 2.5e-7);
  PenaltyProgram prog;
  prog.s = 3;
  prog.channels = 4;
  prog.free_channels = 1;
  prog.start = Eigen::MatrixXd::Zero(3, 4);
  prog.end = Eigen::MatrixXd::Zero(3, 4);
  prog.start(0, 0) = x0;
  prog.start(1, 0) = v0;
  prog.end(0, 0) = xf;
  prog.end(1, 0) = vf;
  prog.opt = opt;
  prog.constraints = detail::di_constraints(u_max);
  prog.junctions.clear();

  const double dist = std::abs(xf - x0);
  const double v_cap = 0.6 * std::sqrt(std::max(u_max * std::max(dist, 0.1), 1e-6));
  std::vector<Eigen::MatrixXd> seed_stacks{prog.start, prog.end};
  std::vector<double> seed_T{detail::seed_duration(dist, v_cap, u_max)};
  prog.scale_rows(std::max(1.0, 2.0 * N / seed_T[0]));
  PenaltyProgram progN = prog;  // before refinement touches the node set
  detail::ContinuationResult base_run =
      detail::solve_refined(prog, prog.encode(seed_stacks, seed_T), opt);
  Solution base = detail::finish_solution(prog, base_run);
  if (N == 1) return base;

  progN.junctions.assign(N - 1, JunctionSpec{});
  const detail::ContinuationResult run =
      detail::solve_refined(progN, detail::seed_from_split(progN, base, N), opt);
  return detail::finish_solution(progN, run);
}

struct SampleRow {
  double t = 0.0;
  FullState state;
  RotorCommand rotors;
  double collective = 0.0;  // N
  Eigen::Vector3d body_rates = Eigen::Vector3d::Zero();
};

/// Time-discretized trajectory: rows at 0, dt, ... plus an exact final row.
/// Rotor thrusts always come from the order-4 chain (the polynomial supplies
/// snap regardless of s); the lateral-direction hint tracks the previous row
/// for continuity through heading degeneracies.
inline std::vector<SampleRow> sample_solution(const Solution& sol, double dt,
                                              const QuadrotorParams& q,
                                              FlatnessOptions opt = {}) {
  if (!(dt > 0.0)) throw std::invalid_argument{"sample step must be positive"};
  std::vector<SampleRow> rows;
  const double total = sol.total_time;
  std::vector<double> times;
  for (double t = 0.0; t < total - 1e-12 * std::max(1.0, total); t += dt) times.push_back(t);
  times.push_back(total);

  for (double t : times) {
    const Eigen::MatrixXd d = eval(sol.trajectory, t, 4);
    DerivativeStack ds;
    ds.order = 4;
    ds.derivs = d;
    SampleRow row;
    row.t = t;
    row.state = state_map(ds, q, opt);
    row.rotors = input_map(ds, q, opt);
    row.collective = row.rotors.f[0] + row.rotors.f[1] + row.rotors.f[2] + row.rotors.f[3];
    row.body_rates = row.state.body_rates;
    opt.y_b_hint = row.state.attitude * Eigen::Vector3d::UnitY();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace aos
