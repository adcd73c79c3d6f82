#pragma once

#include <aos/quad_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aos {

/// Adjoint parameterization of a planar extremal. The first four adjoint
/// states are determined by c alone; p5 needs an initial value.
struct AdjointConfig {
  Eigen::Vector4d c{0.0, 0.0, 0.0, 1.0};  // c1..c4
  double p5_init = 0.0;

  void validate() const {
    if (c.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument{"adjoint c must be nonzero"};
    if (!c.allFinite() || !std::isfinite(p5_init))
      throw std::invalid_argument{"adjoint config must be finite"};
  }
};

struct AdjointState {
  double p1, p2, p3, p4, p5;
};

/// p1 = c1, p2 = c2 - c1 t, p3 = c3, p4 = c4 - c3 t.
inline Eigen::Vector4d adjoint_at(const AdjointConfig& cfg, double t_hat) {
  return {cfg.c[0], cfg.c[1] - cfg.c[0] * t_hat, cfg.c[2], cfg.c[3] - cfg.c[2] * t_hat};
}

/// Switching data at one instant. phi_r is only known along an integrated
/// trajectory (it equals p5); pointwise evaluation leaves it NaN, same for
/// the Hamiltonian which needs the full state.
struct SwitchingState {
  double phi_t = 0.0;
  double phi_r = std::numeric_limits<double>::quiet_NaN();
  double phi_r_dot = 0.0;
  double hamiltonian = std::numeric_limits<double>::quiet_NaN();
};

inline double hamiltonian(const AdjointConfig& cfg, double t_hat, const PlanarState& s,
                          const PlanarInput& u, double p5) {
  const Eigen::Vector4d p = adjoint_at(cfg, t_hat);
  return p[0] * s.x_hat_dot + p[1] * u.u_t * std::sin(s.theta) + p[2] * s.z_hat_dot +
         p[3] * (u.u_t * std::cos(s.theta) - 1.0) + p5 * u.u_r + 1.0;
}

/// With r = |(p2,p4)| and the flow angle T = atan2(p2,p4), these reduce to
/// phi_t = r cos(theta - T) and phi_r_dot = u_t r sin(theta - T).
inline SwitchingState switching_values(const AdjointConfig& cfg, double t_hat, double theta,
                                       double u_t) {
  if (!(u_t > 0.0)) throw std::invalid_argument{"u_t must be positive"};
  const Eigen::Vector4d p = adjoint_at(cfg, t_hat);
  SwitchingState sw;
  sw.phi_t = p[1] * std::sin(theta) + p[3] * std::cos(theta);
  sw.phi_r_dot = -p[1] * u_t * std::cos(theta) + p[3] * u_t * std::sin(theta);
  return sw;
}

inline SwitchingState switching_values(const AdjointConfig& cfg, double t_hat,
                                       const PlanarState& s, const PlanarInput& u, double p5) {
  SwitchingState sw = switching_values(cfg, t_hat, s.theta, u.u_t);
  sw.phi_r = p5;
  sw.hamiltonian = hamiltonian(cfg, t_hat, s, u, p5);
  return sw;
}

/// Feedback rate on a singular arc; identically zero for flat flows (the
/// numerator vanishes), otherwise the denominator is the squared distance of
/// (p2,p4) from the origin and stays positive.
inline double singular_rate(const AdjointConfig& cfg, double t_hat) {
  const double c1 = cfg.c[0], c2 = cfg.c[1], c3 = cfg.c[2], c4 = cfg.c[3];
  const double num = c2 * c3 - c1 * c4;
  if (std::abs(num) <= 1e-12) return 0.0;
  const double den = (c1 * c1 + c3 * c3) * t_hat * t_hat -
                     2.0 * (c1 * c2 + c3 * c4) * t_hat + c2 * c2 + c4 * c4;
  return num / den;
}

/// Time at which the singular-rate denominator is smallest (the rate
/// magnitude peaks there). Only defined when (c1,c3) != 0.
inline double denominator_minimizer(const AdjointConfig& cfg) {
  const double a = cfg.c[0] * cfg.c[0] + cfg.c[2] * cfg.c[2];
  if (a == 0.0) throw std::invalid_argument{"denominator minimizer needs (c1,c3) != 0"};
  return (cfg.c[0] * cfg.c[1] + cfg.c[2] * cfg.c[3]) / a;
}

/// A continuous angle trajectory on which phi_r_dot vanishes. Branches are
/// pi-separated; branch_index selects value(t) = base(t) + k pi.
struct SingularFlow {
  Eigen::Vector4d c;
  int branch_index = 0;
  bool is_flat = false;
  /// isolated time where p2 = p4 = 0 (flat flows with (c1,c3) != 0 only);
  /// the flow itself continues through it by limits
  std::optional<double> undefined_instant;

  /// continuous base branch
  double base(double t_hat) const {
    const double c1 = c[0], c2 = c[1], c3 = c[2], c4 = c[3];
    if (is_flat) {
      if (c1 == 0.0 && c3 == 0.0) return std::atan2(c2, c4);
      return std::atan2(c1, c3);
    }
    // integral of the singular rate; the discriminant of the denominator
    // collapses to (2K)^2 by the Lagrange identity
    const double K = c2 * c3 - c1 * c4;
    const double a = c1 * c1 + c3 * c3;
    const double b = -2.0 * (c1 * c2 + c3 * c4);
    return std::atan2(c2, c4) + std::atan((2.0 * a * t_hat + b) / (2.0 * K)) -
           std::atan(b / (2.0 * K));
  }

  double value(double t_hat) const { return base(t_hat) + branch_index * M_PI; }

  double rate(double t_hat) const {
    AdjointConfig cfg;
    cfg.c = c;
    return singular_rate(cfg, t_hat);
  }

  /// distance from theta to the nearest branch
  double distance(double theta, double t_hat) const {
    return std::abs(std::remainder(theta - base(t_hat), M_PI));
  }

  /// branch value nearest to theta
  double nearest(double theta, double t_hat) const {
    return theta - std::remainder(theta - base(t_hat), M_PI);
  }
};

inline SingularFlow singular_flow(const AdjointConfig& cfg, int k = 0) {
  cfg.validate();
  SingularFlow f;
  f.c = cfg.c;
  f.branch_index = k;
  const double c1 = cfg.c[0], c2 = cfg.c[1], c3 = cfg.c[2], c4 = cfg.c[3];
  f.is_flat = std::abs(c2 * c3 - c1 * c4) <= 1e-12;
  if (f.is_flat && (c1 != 0.0 || c3 != 0.0))
    f.undefined_instant = (c1 * c2 + c3 * c4) / (c1 * c1 + c3 * c3);
  return f;
}

enum class ArcKind { bang_high, bang_low, singular };
enum class Channel { thrust, rate };

struct Arc {
  ArcKind kind;
  Channel channel;
  double t_start;
  double t_end;
};

struct SwitchingProfile {
  std::vector<Arc> arcs;  // both channels, each channel contiguous in time
  int thrust_switches = 0;
  int rate_switches = 0;
  std::string thrust_structure;
  std::string rate_structure;
  bool degenerate = false;  // chattering: more than max_switches raw events
  int raw_switch_events = 0;

  std::vector<Arc> channel_arcs(Channel ch) const {
    std::vector<Arc> out;
    for (const Arc& a : arcs)
      if (a.channel == ch) out.push_back(a);
    return out;
  }
};

struct ExtremalSample {
  double t_hat;
  PlanarState state;
  PlanarInput input;
  double p5;
  double phi_t;
  double phi_r;
  double phi_r_dot;
  double hamiltonian;
  double theta_flow;  // flow branch nearest to theta
};

struct ExtremalResult {
  std::vector<ExtremalSample> samples;
  SwitchingProfile profile;
};

struct ShootOptions {
  double singular_tol = 1e-6;  // |phi_r| band for singular arcs
  double angle_tol = 1e-4;     // rad, distance to a flow for singular entry
  int max_switches = 50;       // beyond this the run is flagged as chattering
};

/// Solves H(0) = 0 for p5 given the policy-consistent initial control:
/// u_t from the sign of phi_t(0), u_r = sign(p5) with the preferred sign.
/// Fails (nullopt) when the remaining terms are positive, since |p5| = -rest.
inline std::optional<double> solve_p5_init(const AdjointConfig& cfg, const PlanarState& x0,
                                           const PlanarBoundsT& bounds, int sign_pref = +1) {
  const double phi_t0 = cfg.c[1] * std::sin(x0.theta) + cfg.c[3] * std::cos(x0.theta);
  const double u_t = phi_t0 > 0.0 ? bounds.u_t_max : bounds.u_t_min;
  const double rest = cfg.c[0] * x0.x_hat_dot + cfg.c[2] * x0.z_hat_dot + u_t * phi_t0 -
                      cfg.c[3] + 1.0;
  if (rest > 1e-12) return std::nullopt;
  return (sign_pref >= 0 ? 1.0 : -1.0) * (-rest);
}

namespace detail {

struct PmpMode {
  int thrust;  // +1 high, -1 low
  int rate;    // +1, -1 bang; 0 singular
};

struct PmpSys {
  const AdjointConfig* cfg;
  PlanarBoundsT bounds;

  double u_t(const PmpMode& m) const { return m.thrust > 0 ? bounds.u_t_max : bounds.u_t_min; }

  double u_r(const PmpMode& m, double t) const {
    if (m.rate == 0) return singular_rate(*cfg, t);
    return m.rate > 0 ? 1.0 : -1.0;
  }

  // y = (x, xd, z, zd, theta, p5)
  using Y = Eigen::Matrix<double, 6, 1>;

  Y rhs(double t, const Y& y, const PmpMode& m) const {
    const double ut = u_t(m), ur = u_r(m, t);
    const Eigen::Vector4d p = adjoint_at(*cfg, t);
    Y d;
    d[0] = y[1];
    d[1] = ut * std::sin(y[4]);
    d[2] = y[3];
    d[3] = ut * std::cos(y[4]) - 1.0;
    d[4] = ur;
    d[5] = -p[1] * ut * std::cos(y[4]) + p[3] * ut * std::sin(y[4]);
    return d;
  }

  Y step(double t, const Y& y, double h, const PmpMode& m) const {
    const Y k1 = rhs(t, y, m);
    const Y k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, m);
    const Y k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, m);
    const Y k4 = rhs(t + h, y + h * k3, m);
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  double phi_t(double t, const Y& y) const {
    const Eigen::Vector4d p = adjoint_at(*cfg, t);
    return p[1] * std::sin(y[4]) + p[3] * std::cos(y[4]);
  }

  double phi_r_dot(double t, const Y& y, const PmpMode& m) const {
    const Eigen::Vector4d p = adjoint_at(*cfg, t);
    return -p[1] * u_t(m) * std::cos(y[4]) + p[3] * u_t(m) * std::sin(y[4]);
  }
};

/// Root of g on (0, h] by bisection; g(h') is evaluated on the single RK4
/// substep of size h'. ref_sign is the sign g is leaving.
template <typename G>
double bisect_step(const G& g, double h, double ref_sign) {
  double lo = 0.0, hi = h;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) * ref_sign >= 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

inline void append_arc(std::vector<Arc>& arcs, ArcKind kind, Channel ch, double t0, double t1) {
  arcs.push_back(Arc{kind, ch, t0, t1});
}

/// Drops arcs shorter than min_len by absorbing them into their predecessor
/// (or successor for the first arc), then coalesces equal neighbors.
inline std::vector<Arc> merge_short_arcs(std::vector<Arc> arcs, double min_len) {
  bool changed = true;
  while (changed && arcs.size() > 1) {
    changed = false;
    for (size_t i = 0; i < arcs.size(); ++i) {
      if (arcs[i].t_end - arcs[i].t_start >= min_len) continue;
      if (i == 0)
        arcs[1].t_start = arcs[0].t_start;
      else
        arcs[i - 1].t_end = arcs[i].t_end;
      arcs.erase(arcs.begin() + i);
      changed = true;
      break;
    }
    for (size_t i = 0; i + 1 < arcs.size(); ++i) {
      if (arcs[i].kind == arcs[i + 1].kind) {
        arcs[i].t_end = arcs[i + 1].t_end;
        arcs.erase(arcs.begin() + i + 1);
        changed = true;
        break;
      }
    }
  }
  return arcs;
}

inline std::string structure_of(const std::vector<Arc>& arcs) {
  std::string s;
  for (const Arc& a : arcs) {
    if (!s.empty()) s += '-';
    s += (a.kind == ArcKind::singular) ? 'S' : 'B';
  }
  return s;
}

}  // namespace detail

/// Forward integration of the extremal policy: u_t tracks the sign of phi_t,
/// u_r the sign of phi_r, with the singular feedback applied inside the
/// (singular_tol, angle_tol) band. Switch instants are located by bisection
/// inside the step so the Hamiltonian stays conserved across switches.
inline ExtremalResult shoot_extremal(const AdjointConfig& cfg, const PlanarState& x0,
                                     const PlanarBoundsT& bounds, double horizon, double dt,
                                     const ShootOptions& opts = {}) {
  cfg.validate();
  if (!(dt > 0.0) || !(horizon > 0.0))
    throw std::invalid_argument{"horizon and dt must be positive"};
  if (!(bounds.u_t_min > 0.0) || !(bounds.u_t_max > bounds.u_t_min))
    throw std::invalid_argument{"invalid planar thrust bounds"};

  detail::PmpSys sys{&cfg, bounds};
  const SingularFlow flow = singular_flow(cfg);

  detail::PmpSys::Y y;
  y << x0.x_hat, x0.x_hat_dot, x0.z_hat, x0.z_hat_dot, x0.theta, cfg.p5_init;
  double t = 0.0;

  detail::PmpMode mode{};
  mode.thrust = sys.phi_t(0.0, y) > 0.0 ? +1 : -1;
  if (std::abs(y[5]) <= opts.singular_tol && flow.distance(y[4], 0.0) <= opts.angle_tol &&
      std::abs(singular_rate(cfg, 0.0)) < 1.0)
    mode.rate = 0;
  else
    mode.rate = y[5] >= 0.0 ? +1 : -1;

  ExtremalResult out;
  SwitchingProfile& prof = out.profile;
  double thrust_arc_start = 0.0, rate_arc_start = 0.0;
  int thrust_mode_prev = mode.thrust, rate_mode_prev = mode.rate;
  std::vector<Arc> thrust_arcs, rate_arcs;

  const auto record = [&](double tt, const detail::PmpSys::Y& yy) {
    ExtremalSample s;
    s.t_hat = tt;
    s.state = PlanarState{yy[0], yy[1], yy[2], yy[3], yy[4]};
    s.input = PlanarInput{sys.u_r(mode, tt), sys.u_t(mode)};
    s.p5 = yy[5];
    s.phi_t = sys.phi_t(tt, yy);
    s.phi_r = yy[5];
    s.phi_r_dot = sys.phi_r_dot(tt, yy, mode);
    s.hamiltonian = hamiltonian(cfg, tt, s.state, s.input, s.p5);
    s.theta_flow = flow.nearest(yy[4], tt);
    out.samples.push_back(s);
  };
  record(0.0, y);

  const auto close_arc = [&](Channel ch, double t_end) {
    if (ch == Channel::thrust) {
      detail::append_arc(thrust_arcs,
                         thrust_mode_prev > 0 ? ArcKind::bang_high : ArcKind::bang_low,
                         Channel::thrust, thrust_arc_start, t_end);
      thrust_arc_start = t_end;
    } else {
      const ArcKind k = rate_mode_prev == 0
                            ? ArcKind::singular
                            : (rate_mode_prev > 0 ? ArcKind::bang_high : ArcKind::bang_low);
      detail::append_arc(rate_arcs, k, Channel::rate, rate_arc_start, t_end);
      rate_arc_start = t_end;
    }
  };

  const long n_steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  bool stop = false;
  for (long i = 0; i < n_steps && !stop; ++i) {
    const double t_grid = std::min(horizon, (i + 1) * dt);
    while (t < t_grid - 1e-15) {
      const double h = t_grid - t;
      const detail::PmpSys::Y trial = sys.step(t, y, h, mode);

      // earliest event inside (t, t+h]
      double best_h = std::numeric_limits<double>::infinity();
      int best_kind = -1;  // 0 thrust flip, 1 rate flip, 2 singular entry, 3 singular exit

      {  // thrust: phi_t leaving the sign of the current mode
        const double ge = sys.phi_t(t + h, trial);
        if (ge * mode.thrust < 0.0) {
          const auto g = [&](double hh) { return sys.phi_t(t + hh, sys.step(t, y, hh, mode)); };
          const double hc = detail::bisect_step(g, h, static_cast<double>(mode.thrust));
          if (hc < best_h) {
            best_h = hc;
            best_kind = 0;
          }
        }
      }
      if (mode.rate != 0) {
        const double ge = trial[5];
        if (ge * mode.rate < 0.0) {
          const auto g = [&](double hh) { return sys.step(t, y, hh, mode)[5]; };
          const double hc = detail::bisect_step(g, h, static_cast<double>(mode.rate));
          if (hc < best_h) {
            best_h = hc;
            best_kind = 1;
          }
        }
        // theta crossing a flow: phi_r_dot changes sign; entry only if the
        // phi_r band and rate admissibility hold at the crossing
        const double g0 = sys.phi_r_dot(t, y, mode);
        const double ge2 = sys.phi_r_dot(t + h, trial, mode);
        if (g0 != 0.0 && g0 * ge2 < 0.0) {
          const auto g = [&](double hh) {
            return sys.phi_r_dot(t + hh, sys.step(t, y, hh, mode), mode);
          };
          const double hc = detail::bisect_step(g, h, g0 > 0.0 ? 1.0 : -1.0);
          const detail::PmpSys::Y yc = sys.step(t, y, hc, mode);
          if (std::abs(yc[5]) <= opts.singular_tol &&
              std::abs(singular_rate(cfg, t + hc)) < 1.0 && hc < best_h) {
            best_h = hc;
            best_kind = 2;
          }
        }
      } else {
        // singular exits: feedback saturation (closed form in t) or phi_r
        // drifting out of the band. |rate| < 1 is the arc invariant, so the
        // endpoint test must include equality or an exactly-representable
        // touch point slips through.
        const double re = std::abs(singular_rate(cfg, t + h));
        if (re >= 1.0) {
          const auto g = [&](double hh) { return std::abs(singular_rate(cfg, t + hh)) - 1.0; };
          const double hc = detail::bisect_step(g, h, -1.0);
          if (hc < best_h) {
            best_h = hc;
            best_kind = 3;
          }
        }
        const double band = 10.0 * opts.singular_tol;
        if (std::abs(trial[5]) > band) {
          const auto g = [&](double hh) {
            return std::abs(sys.step(t, y, hh, mode)[5]) - band;
          };
          const double hc = detail::bisect_step(g, h, -1.0);
          if (hc < best_h) {
            best_h = hc;
            best_kind = 3;  // same handling: fall back to bang on sign(p5)
          }
        }
      }

      if (best_kind < 0) {
        y = trial;
        t = t_grid;
        break;
      }

      y = sys.step(t, y, best_h, mode);
      t += best_h;
      ++prof.raw_switch_events;
      if (prof.raw_switch_events > opts.max_switches) {
        prof.degenerate = true;
        stop = true;
        break;
      }
      switch (best_kind) {
        case 0:
          close_arc(Channel::thrust, t);
          mode.thrust = -mode.thrust;
          thrust_mode_prev = mode.thrust;
          break;
        case 1:
          close_arc(Channel::rate, t);
          mode.rate = -mode.rate;
          rate_mode_prev = mode.rate;
          break;
        case 2:
          close_arc(Channel::rate, t);
          mode.rate = 0;
          rate_mode_prev = 0;
          break;
        case 3: {
          close_arc(Channel::rate, t);
          // saturation exit continues with the bang the feedback ran into;
          // band exit follows the sign phi_r drifted toward
          const double r = singular_rate(cfg, t);
          mode.rate = (std::abs(r) >= 1.0 - 1e-9 ? (r > 0.0 ? +1 : -1)
                                                 : (y[5] >= 0.0 ? +1 : -1));
          rate_mode_prev = mode.rate;
          break;
        }
      }
    }
    if (!stop) record(t, y);
  }

  close_arc(Channel::thrust, t);
  close_arc(Channel::rate, t);

  thrust_arcs = detail::merge_short_arcs(std::move(thrust_arcs), 10.0 * dt);
  rate_arcs = detail::merge_short_arcs(std::move(rate_arcs), 10.0 * dt);
  prof.thrust_switches = static_cast<int>(thrust_arcs.size()) - 1;
  prof.rate_switches = static_cast<int>(rate_arcs.size()) - 1;
  prof.thrust_structure = detail::structure_of(thrust_arcs);
  prof.rate_structure = detail::structure_of(rate_arcs);
  prof.arcs = std::move(thrust_arcs);
  prof.arcs.insert(prof.arcs.end(), rate_arcs.begin(), rate_arcs.end());
  return out;
}

/// Structural compliance against the two-class arc bounds: flat class
/// admits at most B-S-B-S-B on the rate channel (2 singular arcs, 3 bangs),
/// the non-flat class at most B-S-B (1 singular arc, 2 bangs); thrust is
/// bang-bang with at most 5 switches either way.
struct StructureReport {
  std::string thrust_structure;
  std::string rate_structure;
  int thrust_switches = 0;
  int rate_switches = 0;
  int rate_singular_arcs = 0;
  int rate_bang_arcs = 0;
  bool flat_class = false;
  bool thrust_compliant = false;
  bool rate_compliant = false;
  bool theta_within_central_band = false;  // theta inside some flow branch +/- pi throughout
  bool degenerate = false;
};

inline StructureReport classify_profile(const ExtremalResult& result, const AdjointConfig& cfg) {
  const SwitchingProfile& prof = result.profile;
  StructureReport rep;
  rep.thrust_structure = prof.thrust_structure;
  rep.rate_structure = prof.rate_structure;
  rep.thrust_switches = prof.thrust_switches;
  rep.rate_switches = prof.rate_switches;
  rep.degenerate = prof.degenerate;

  const SingularFlow flow = singular_flow(cfg);
  rep.flat_class = flow.is_flat;

  bool adjacent_bangs = false;
  const std::vector<Arc> rate_arcs = prof.channel_arcs(Channel::rate);
  for (size_t i = 0; i < rate_arcs.size(); ++i) {
    if (rate_arcs[i].kind == ArcKind::singular)
      ++rep.rate_singular_arcs;
    else
      ++rep.rate_bang_arcs;
    if (i > 0 && rate_arcs[i].kind != ArcKind::singular &&
        rate_arcs[i - 1].kind != ArcKind::singular)
      adjacent_bangs = true;
  }

  rep.thrust_compliant = rep.thrust_switches <= 5;
  if (rep.flat_class)
    rep.rate_compliant =
        rep.rate_singular_arcs <= 2 && rep.rate_bang_arcs <= 3 && !adjacent_bangs;
  else
    rep.rate_compliant =
        rep.rate_singular_arcs <= 1 && rep.rate_bang_arcs <= 2 && !adjacent_bangs;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const ExtremalSample& s : result.samples) {
    const double m = s.state.theta - flow.base(s.t_hat);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  const double slack = 1e-9;
  const long k_min = static_cast<long>(std::ceil((hi - M_PI - slack) / M_PI));
  const long k_max = static_cast<long>(std::floor((lo + M_PI + slack) / M_PI));
  rep.theta_within_central_band = k_min <= k_max;
  return rep;
}

/// Minimal piece budget: one more than the total switch count.
inline int piece_count(int n_t, int n_r, int n_se) {
  if (n_t < 0 || n_r < 0 || n_se < 0) throw std::invalid_argument{"switch counts must be >= 0"};
  if (n_se > 2) throw std::invalid_argument{"n_se must be 0, 1 or 2"};
  return n_t + n_r + n_se + 1;
}

}  // namespace aos
