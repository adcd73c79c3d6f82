#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aos {

/// Physical quadrotor description. Inertia is the diagonal of the body-frame
/// inertia tensor in kg m^2 (catalog tables usually list g m^2; convert before
/// constructing). body_rate_max is (roll, pitch, yaw).
struct QuadrotorParams {
  double mass = 1.0;                                        // kg
  double arm_length = 0.15;                                 // m
  Eigen::Vector3d inertia_diag{5.0e-3, 5.0e-3, 10.0e-3};    // kg m^2
  double rotor_thrust_min = 0.25;                           // N
  double rotor_thrust_max = 5.0;                            // N
  double torque_constant = 0.01;                            // drag torque / thrust
  Eigen::Vector3d body_rate_max{10.0, 10.0, 10.0};          // rad/s
  double gravity = 9.81;                                    // m/s^2

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument{"mass must be positive"};
    if (!(arm_length > 0.0)) throw std::invalid_argument{"arm_length must be positive"};
    if (!(inertia_diag.minCoeff() > 0.0))
      throw std::invalid_argument{"inertia components must be positive"};
    if (!(rotor_thrust_min > 0.0) || !(rotor_thrust_max > rotor_thrust_min))
      throw std::invalid_argument{"rotor thrust bounds must satisfy 0 < min < max"};
    if (!(torque_constant > 0.0)) throw std::invalid_argument{"torque_constant must be positive"};
    if (!(body_rate_max.minCoeff() > 0.0))
      throw std::invalid_argument{"body rate bounds must be positive"};
    if (!(gravity > 0.0)) throw std::invalid_argument{"gravity must be positive"};
  }
};

/// Built-in vehicles. Inertia entries are converted from g m^2 at ingest.
inline QuadrotorParams preset(std::string_view name) {
  QuadrotorParams q;
  if (name == "STD") {
    q.mass = 1.0;
    q.arm_length = 0.15;
    q.inertia_diag = Eigen::Vector3d{5.0, 5.0, 10.0} * 1e-3;
    q.rotor_thrust_min = 0.25;
    q.rotor_thrust_max = 5.0;
    q.torque_constant = 0.01;
    q.body_rate_max = Eigen::Vector3d{10.0, 10.0, 10.0};
  } else if (name == "RPG") {
    q.mass = 0.85;
    q.arm_length = 0.15;
    q.inertia_diag = Eigen::Vector3d{1.0, 1.0, 1.7} * 1e-3;
    q.rotor_thrust_min = 0.1;
    q.rotor_thrust_max = 6.88;
    q.torque_constant = 0.05;
    q.body_rate_max = Eigen::Vector3d{15.0, 15.0, 3.0};
  } else if (name == "FGG") {
    q.mass = 1.0;
    q.arm_length = 0.08;
    q.inertia_diag = Eigen::Vector3d{4.9, 4.9, 6.9} * 1e-3;
    q.rotor_thrust_min = 0.1;
    q.rotor_thrust_max = 9.0;
    q.torque_constant = 0.136;
    q.body_rate_max = Eigen::Vector3d{10.0, 10.0, 3.0};
  } else if (name == "FSC") {
    q.mass = 1.005;
    q.arm_length = 0.125;
    q.inertia_diag = Eigen::Vector3d{2.5, 2.1, 4.3} * 1e-3;
    q.rotor_thrust_min = 0.1;
    q.rotor_thrust_max = 9.0;
    q.torque_constant = 0.022;
    q.body_rate_max = Eigen::Vector3d{10.0, 10.0, 3.0};
  } else {
    throw std::invalid_argument{"unknown preset: " + std::string{name}};
  }
  q.validate();
  return q;
}

/// Planar state in non-dimensional units. theta is an unwrapped real so that
/// flips keep accumulating angle.
struct PlanarState {
  double x_hat = 0.0;
  double x_hat_dot = 0.0;
  double z_hat = 0.0;
  double z_hat_dot = 0.0;
  double theta = 0.0;

  bool finite() const {
    return std::isfinite(x_hat) && std::isfinite(x_hat_dot) && std::isfinite(z_hat) &&
           std::isfinite(z_hat_dot) && std::isfinite(theta);
  }
};

/// Non-dimensional planar controls; u_r in [-1, 1], u_t mass-normalized thrust.
struct PlanarInput {
  double u_r = 0.0;
  double u_t = 1.0;
};

struct PlanarBoundsT {
  double u_t_min;
  double u_t_max;
};

/// The scaling rate is the pitch-axis body-rate bound: the planar model
/// rotates about pitch.
inline double body_rate_scale(const QuadrotorParams& q) { return q.body_rate_max.y(); }

/// t_hat = w t, pos_hat = w^2 pos / g with w the pitch-axis rate bound.
inline std::pair<double, double> nondimensionalize(const QuadrotorParams& q, double t,
                                                   double pos) {
  const double w = body_rate_scale(q);
  return {w * t, w * w * pos / q.gravity};
}

inline std::pair<double, double> dimensionalize(const QuadrotorParams& q, double t_hat,
                                                double pos_hat) {
  const double w = body_rate_scale(q);
  return {t_hat / w, q.gravity * pos_hat / (w * w)};
}

/// Mass-normalized collective-thrust range; total thrust is four rotors.
inline PlanarBoundsT planar_bounds(const QuadrotorParams& q) {
  return {4.0 * q.rotor_thrust_min / (q.mass * q.gravity),
          4.0 * q.rotor_thrust_max / (q.mass * q.gravity)};
}

/// Right-hand side of the non-dimensional planar model, derivative taken
/// with respect to t_hat.
inline PlanarState planar_dynamics(const PlanarState& s, const PlanarInput& u) {
  PlanarState d;
  d.x_hat = s.x_hat_dot;
  d.x_hat_dot = u.u_t * std::sin(s.theta);
  d.z_hat = s.z_hat_dot;
  d.z_hat_dot = u.u_t * std::cos(s.theta) - 1.0;
  d.theta = u.u_r;
  return d;
}

}  // namespace aos
