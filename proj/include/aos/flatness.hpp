#pragma once

#include "aos/dual.hpp"
#include "aos/quad_model.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>

namespace aos {

/// Thrown when the thrust-direction norm falls below the singularity floor
/// and clamping is turned off.
struct SingularThrust : std::runtime_error {
  SingularThrust() : std::runtime_error{"thrust direction norm below singularity floor"} {}
};

/// Flat output and its time derivatives at one instant. Row r of derivs is
/// the r-th derivative of (px, py, pz, psi); order s is 3 when only body
/// rates are commanded and 4 when torques (hence snap) are needed.
struct DerivativeStack {
  int order = 4;
  Eigen::MatrixXd derivs;  // (s+1) x 4

  static DerivativeStack hover(int s) {
    DerivativeStack d;
    d.order = s;
    d.derivs = Eigen::MatrixXd::Zero(s + 1, 4);
    return d;
  }
};

struct FullState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d body_rates = Eigen::Vector3d::Zero();
};

struct RotorCommand {
  std::array<double, 4> f{};  // N, order front-left/front-right/rear-right/rear-left
};

/// Constraint set selector: S bounds the collective thrust and body rates,
/// R bounds each rotor thrust and the body rates.
enum class Model { S, R };

struct FlatnessOptions {
  /// When the thrust-direction norm drops below 0.05 g, divide rates and
  /// thrust by the floor instead of failing. Off means SingularThrust.
  bool clamp_singular = true;
  /// Replacement lateral direction when the yaw heading is parallel to the
  /// thrust axis; pass the previous sample's y_B for continuity.
  Eigen::Vector3d y_b_hint{0.0, 1.0, 0.0};
};

namespace detail {

/// Truncated Taylor scalar: c[k] holds f^(k)(0)/k!. Propagating the whole
/// attitude construction through these yields body rates and angular
/// accelerations as exact derivatives of the construction, so no separate
/// hand-derived yaw-coupling formula can drift out of sync.
template <class T, int K>
struct Taylor {
  std::array<T, K + 1> c{};

  Taylor() = default;
  explicit Taylor(const T& constant) { c[0] = constant; }
};

template <class T, int K>
Taylor<T, K> operator+(const Taylor<T, K>& a, const Taylor<T, K>& b) {
  Taylor<T, K> r;
  for (int k = 0; k <= K; ++k) r.c[k] = a.c[k] + b.c[k];
  return r;
}
template <class T, int K>
Taylor<T, K> operator-(const Taylor<T, K>& a, const Taylor<T, K>& b) {
  Taylor<T, K> r;
  for (int k = 0; k <= K; ++k) r.c[k] = a.c[k] - b.c[k];
  return r;
}
template <class T, int K>
Taylor<T, K> operator-(const Taylor<T, K>& a) {
  Taylor<T, K> r;
  for (int k = 0; k <= K; ++k) r.c[k] = -a.c[k];
  return r;
}
template <class T, int K>
Taylor<T, K> operator*(const Taylor<T, K>& a, const Taylor<T, K>& b) {
  Taylor<T, K> r;
  for (int k = 0; k <= K; ++k) {
    T acc = a.c[0] * b.c[k];
    for (int i = 1; i <= k; ++i) acc = acc + a.c[i] * b.c[k - i];
    r.c[k] = acc;
  }
  return r;
}
template <class T, int K>
Taylor<T, K> operator/(const Taylor<T, K>& a, const Taylor<T, K>& b) {
  Taylor<T, K> q;
  for (int k = 0; k <= K; ++k) {
    T acc = a.c[k];
    for (int i = 0; i < k; ++i) acc = acc - q.c[i] * b.c[k - i];
    q.c[k] = acc / b.c[0];
  }
  return q;
}
template <class T, int K>
Taylor<T, K> sqrt_series(const Taylor<T, K>& a) {
  using aos::sqrt;
  using std::sqrt;
  Taylor<T, K> s;
  s.c[0] = sqrt(a.c[0]);
  for (int k = 1; k <= K; ++k) {
    T acc = a.c[k];
    for (int i = 1; i < k; ++i) acc = acc - s.c[i] * s.c[k - i];
    s.c[k] = acc / (2.0 * s.c[0]);
  }
  return s;
}
/// sin and cos share the recurrence k f_k = sum i a_i g_{k-i}.
template <class T, int K>
void sincos_series(const Taylor<T, K>& a, Taylor<T, K>& s, Taylor<T, K>& c) {
  using aos::cos;
  using aos::sin;
  using std::cos;
  using std::sin;
  s.c[0] = sin(a.c[0]);
  c.c[0] = cos(a.c[0]);
  for (int k = 1; k <= K; ++k) {
    T fs = (1.0 * 1) * a.c[1] * c.c[k - 1];
    T fc = (1.0 * 1) * a.c[1] * s.c[k - 1];
    for (int i = 2; i <= k; ++i) {
      fs = fs + (1.0 * i) * a.c[i] * c.c[k - i];
      fc = fc + (1.0 * i) * a.c[i] * s.c[k - i];
    }
    s.c[k] = fs / (1.0 * k);
    c.c[k] = -fc / (1.0 * k);
  }
}
/// Derivative series; the top coefficient is unknowable at this truncation
/// and is left zero, so only coefficients 0..K-1 of results that consume it
/// are meaningful.
template <class T, int K>
Taylor<T, K> deriv(const Taylor<T, K>& a) {
  Taylor<T, K> d;
  for (int k = 0; k < K; ++k) d.c[k] = (1.0 * (k + 1)) * a.c[k + 1];
  return d;
}

template <class S>
struct V3 {
  S x, y, z;
};
template <class S>
V3<S> operator+(const V3<S>& a, const V3<S>& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
template <class S>
V3<S> operator-(const V3<S>& a, const V3<S>& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <class S>
V3<S> operator*(const S& a, const V3<S>& b) {
  return {a * b.x, a * b.y, a * b.z};
}
template <class S>
V3<S> operator/(const V3<S>& a, const S& b) {
  return {a.x / b, a.y / b, a.z / b};
}
template <class S>
S dot(const V3<S>& a, const V3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <class S>
V3<S> cross(const V3<S>& a, const V3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Everything downstream of the flat output at one instant, over scalar T.
///
/// Frames and conventions, fixed here once:
///  - world: x forward, y left, z up; gravity acts along -z
///  - R = [x_B y_B z_B], body z along thrust: m a = F_T z_B - m g e3
///  - body rates from R^T dR/dt, i.e. w_x = -y_B . z_B', w_y = x_B . z_B',
///    w_z = y_B . x_B'; with z_B' = (j - (z_B.j) z_B)/c these reduce to the
///    textbook w_x = -(y_B.j)/c and w_y = (x_B.j)/c, and w_z picks up the
///    yaw/tilt coupling automatically
///  - attitude: z_B along a + g e3, x_C = (cos psi, sin psi, 0),
///    y_B = z_B x x_C normalized, x_B = y_B x z_B
template <class T>
struct FlatPoint {
  using Series = Taylor<T, 2>;
  V3<Series> x_b, y_b, z_b;
  Series thrust_norm;             // clamped ||a + g e3||
  T w[3], w_dot[3];               // body rates and their derivatives
  bool clamped = false;
};

/// stack rows as Taylor series of each channel: c[k] = row_{k+base}/k!.
template <class T, int K>
Taylor<T, K> channel_series(int rows, int base, int channel, const T* seeds) {
  Taylor<T, K> s;
  double fact = 1.0;
  for (int k = 0; k <= K; ++k) {
    if (k > 0) fact *= k;
    const int row = base + k;
    if (row < rows) s.c[k] = seeds[row * 4 + channel] / fact;
  }
  return s;
}

template <class T>
FlatPoint<T> flat_point(int rows, const T* seeds, const QuadrotorParams& q,
                        const FlatnessOptions& opt) {
  using Series = Taylor<T, 2>;
  FlatPoint<T> fp;

  V3<Series> alpha{channel_series<T, 2>(rows, 2, 0, seeds),
                   channel_series<T, 2>(rows, 2, 1, seeds),
                   channel_series<T, 2>(rows, 2, 2, seeds)};
  alpha.z.c[0] = alpha.z.c[0] + q.gravity;
  const Series psi = channel_series<T, 2>(rows, 0, 3, seeds);

  const Series norm2 = dot(alpha, alpha);
  const double eps = 0.05 * q.gravity;
  if (value(norm2.c[0]) < eps * eps) {
    if (!opt.clamp_singular) throw SingularThrust{};
    fp.clamped = true;
  }
  // the direction keeps the true norm (a short z_B would break the unit
  // quaternion); only the magnitude used for thrust and rate division clamps
  Series raw_norm;
  if (value(norm2.c[0]) > 1e-24) {
    raw_norm = sqrt_series(norm2);
    fp.z_b = {alpha.x / raw_norm, alpha.y / raw_norm, alpha.z / raw_norm};
  } else {
    raw_norm = Series{T{1.0}};
    fp.z_b = {Series{T{0.0}}, Series{T{0.0}}, Series{T{1.0}}};
  }
  fp.thrust_norm = fp.clamped ? Series{T{eps}} : raw_norm;

  Series sin_psi, cos_psi;
  sincos_series(psi, sin_psi, cos_psi);
  V3<Series> x_c{cos_psi, sin_psi, Series{}};

  V3<Series> w = cross(fp.z_b, x_c);
  Series wn2 = dot(w, w);
  if (value(wn2.c[0]) < 1e-20) {
    // heading parallel to thrust: rebuild from the caller's lateral hint
    // projected off z_B
    V3<Series> hint{Series{T{opt.y_b_hint.x()}}, Series{T{opt.y_b_hint.y()}},
                    Series{T{opt.y_b_hint.z()}}};
    const Series along = dot(hint, fp.z_b);
    w = hint - along * fp.z_b;
    wn2 = dot(w, w);
  }
  const Series wn = sqrt_series(wn2);
  fp.y_b = {w.x / wn, w.y / wn, w.z / wn};
  fp.x_b = cross(fp.y_b, fp.z_b);

  const V3<Series> zd{deriv(fp.z_b.x), deriv(fp.z_b.y), deriv(fp.z_b.z)};
  const V3<Series> xd{deriv(fp.x_b.x), deriv(fp.x_b.y), deriv(fp.x_b.z)};
  const Series wx = -dot(fp.y_b, zd);
  const Series wy = dot(fp.x_b, zd);
  const Series wz = dot(fp.y_b, xd);
  fp.w[0] = wx.c[0];
  fp.w[1] = wy.c[0];
  fp.w[2] = wz.c[0];
  fp.w_dot[0] = wx.c[1];
  fp.w_dot[1] = wy.c[1];
  fp.w_dot[2] = wz.c[1];
  return fp;
}

/// X mixer. Rotor positions (+-l/sqrt2, +-l/sqrt2) in order FL, FR, RR, RL;
/// FL and RR spin clockwise seen from above, so their drag reaction is +z.
/// Rows of M map rotor thrusts to (F_T, tau_x, tau_y, tau_z); the rows are
/// orthogonal, which gives the closed-form inverse used in mix_inverse.
inline Eigen::Matrix4d mixer_matrix(const QuadrotorParams& q) {
  const double d = q.arm_length / std::sqrt(2.0);
  Eigen::Matrix4d m;
  m << 1, 1, 1, 1,                                                          //
      d, -d, -d, d,                                                         //
      -d, -d, d, d,                                                         //
      q.torque_constant, -q.torque_constant, q.torque_constant, -q.torque_constant;
  return m;
}

template <class T>
std::array<T, 4> mix_inverse(const T& f_total, const T wrench[3], const QuadrotorParams& q) {
  const double d = q.arm_length / std::sqrt(2.0);
  const T a = f_total / 4.0;
  const T b = wrench[0] / (4.0 * d);
  const T c = wrench[1] / (4.0 * d);
  const T e = wrench[2] / (4.0 * q.torque_constant);
  return {a + b - c + e, a - b - c - e, a - b + c + e, a + b + c - e};
}

template <class T>
std::array<T, 4> rotor_thrusts(const FlatPoint<T>& fp, const QuadrotorParams& q) {
  const T f_total = q.mass * fp.thrust_norm.c[0];
  const Eigen::Vector3d& j_diag = q.inertia_diag;
  T jw[3] = {j_diag.x() * fp.w[0], j_diag.y() * fp.w[1], j_diag.z() * fp.w[2]};
  T tau[3] = {j_diag.x() * fp.w_dot[0] + fp.w[1] * jw[2] - fp.w[2] * jw[1],
              j_diag.y() * fp.w_dot[1] + fp.w[2] * jw[0] - fp.w[0] * jw[2],
              j_diag.z() * fp.w_dot[2] + fp.w[0] * jw[1] - fp.w[1] * jw[0]};
  return mix_inverse(f_total, tau, q);
}

inline void check_stack(const DerivativeStack& stack, int min_rows) {
  if (stack.order != 3 && stack.order != 4)
    throw std::invalid_argument{"stack order must be 3 or 4"};
  if (stack.derivs.rows() != stack.order + 1 || stack.derivs.cols() != 4)
    throw std::invalid_argument{"stack shape must be (order+1) x 4"};
  if (stack.derivs.rows() < min_rows)
    throw std::invalid_argument{"stack lacks required derivative rows"};
  if (!stack.derivs.allFinite()) throw std::invalid_argument{"stack entries must be finite"};
}

/// Row-major flatten (row r, channel c -> 4r + c), the seed layout shared by
/// the plain and dual evaluations.
inline std::array<double, 20> flatten_stack(const Eigen::MatrixXd& derivs) {
  std::array<double, 20> out{};
  for (int r = 0; r < derivs.rows(); ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = derivs(r, c);
  return out;
}

/// Violation entries over scalar T. Layout, fixed here:
///   R: [ |w_x|-w_max.x, |w_y|-w_max.y, |w_z|-w_max.z,
///        f1-f_hi, f2-f_hi, f3-f_hi, f4-f_hi,
///        f_lo-f1, f_lo-f2, f_lo-f3, f_lo-f4 ]            (11 entries)
///   S: [ rate rows as above, m*c - 4 f_hi, 4 f_lo - m*c ] (5 entries)
/// Two-sided rotor rows stay separate so each bound keeps its own smooth
/// gradient; the rate rows use |.| with the zero treated as positive.
template <class T>
void violation_entries(const FlatPoint<T>& fp, const QuadrotorParams& q, Model model, T* out) {
  using aos::abs;
  using std::abs;
  const T wx = fp.w[0], wy = fp.w[1], wz = fp.w[2];
  out[0] = abs(wx) - q.body_rate_max.x();
  out[1] = abs(wy) - q.body_rate_max.y();
  out[2] = abs(wz) - q.body_rate_max.z();
  if (model == Model::S) {
    const T f_total = q.mass * fp.thrust_norm.c[0];
    out[3] = f_total - 4.0 * q.rotor_thrust_max;
    out[4] = 4.0 * q.rotor_thrust_min - f_total;
    return;
  }
  const std::array<T, 4> f = rotor_thrusts(fp, q);
  for (int i = 0; i < 4; ++i) {
    out[3 + i] = f[i] - q.rotor_thrust_max;
    out[7 + i] = q.rotor_thrust_min - f[i];
  }
}

}  // namespace detail

inline int constraint_count(Model model) { return model == Model::S ? 5 : 11; }

inline FullState state_map(const DerivativeStack& stack, const QuadrotorParams& q,
                           const FlatnessOptions& opt = {}) {
  detail::check_stack(stack, 4);
  const std::array<double, 20> flat = detail::flatten_stack(stack.derivs);
  const detail::FlatPoint<double> fp = detail::flat_point<double>(static_cast<int>(stack.derivs.rows()), flat.data(), q, opt);
  FullState s;
  s.position = stack.derivs.row(0).head<3>().transpose();
  s.velocity = stack.derivs.row(1).head<3>().transpose();
  Eigen::Matrix3d r;
  r.col(0) << fp.x_b.x.c[0], fp.x_b.y.c[0], fp.x_b.z.c[0];
  r.col(1) << fp.y_b.x.c[0], fp.y_b.y.c[0], fp.y_b.z.c[0];
  r.col(2) << fp.z_b.x.c[0], fp.z_b.y.c[0], fp.z_b.z.c[0];
  s.attitude = Eigen::Quaterniond{r}.normalized();
  s.body_rates = Eigen::Vector3d{fp.w[0], fp.w[1], fp.w[2]};
  return s;
}

inline RotorCommand input_map(const DerivativeStack& stack, const QuadrotorParams& q,
                              const FlatnessOptions& opt = {}) {
  detail::check_stack(stack, 5);  // torques need snap
  const std::array<double, 20> flat = detail::flatten_stack(stack.derivs);
  const detail::FlatPoint<double> fp = detail::flat_point<double>(static_cast<int>(stack.derivs.rows()), flat.data(), q, opt);
  const std::array<double, 4> f = detail::rotor_thrusts(fp, q);
  RotorCommand cmd;
  cmd.f = f;
  return cmd;
}

inline Eigen::VectorXd constraint_map(const DerivativeStack& stack, const QuadrotorParams& q,
                                      Model model, const FlatnessOptions& opt = {}) {
  detail::check_stack(stack, model == Model::R ? 5 : 4);
  const std::array<double, 20> flat = detail::flatten_stack(stack.derivs);
  const detail::FlatPoint<double> fp = detail::flat_point<double>(static_cast<int>(stack.derivs.rows()), flat.data(), q, opt);
  Eigen::VectorXd out(constraint_count(model));
  detail::violation_entries(fp, q, model, out.data());
  return out;
}

/// Violations and their exact jacobian against the stack entries, flattened
/// row-major: column index = 4*derivative_row + channel. Capacities are
/// static (11 rows covers the full-rotor layout, 20 columns a five-row
/// stack) so the solver's inner loop never touches the heap.
struct ConstraintSystem {
  Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 11, 1> values;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, 11, 20> jacobian;
};

namespace detail {

template <int NV>
ConstraintSystem constraint_system_impl(const Eigen::Ref<const Eigen::MatrixXd>& derivs,
                                        const QuadrotorParams& q, Model model,
                                        const FlatnessOptions& opt) {
  std::array<Dual<NV>, NV> seeds;
  for (int r = 0; r < derivs.rows(); ++r)
    for (int c = 0; c < 4; ++c)
      seeds[r * 4 + c] = Dual<NV>::seeded(derivs(r, c), r * 4 + c);
  const FlatPoint<Dual<NV>> fp =
      flat_point<Dual<NV>>(static_cast<int>(derivs.rows()), seeds.data(), q, opt);
  const int n = constraint_count(model);
  std::array<Dual<NV>, 11> vio;
  violation_entries(fp, q, model, vio.data());
  ConstraintSystem sys;
  sys.values.resize(n);
  sys.jacobian.resize(n, NV);
  for (int i = 0; i < n; ++i) {
    sys.values[i] = vio[i].v;
    sys.jacobian.row(i) = vio[i].g.transpose();
  }
  return sys;
}

}  // namespace detail

/// Allocation-free entry for the solver's inner loop; rows = order + 1.
inline ConstraintSystem constraint_system(const Eigen::Ref<const Eigen::MatrixXd>& derivs,
                                          int order, const QuadrotorParams& q, Model model,
                                          const FlatnessOptions& opt = {}) {
  return order == 3 ? detail::constraint_system_impl<16>(derivs, q, model, opt)
                    : detail::constraint_system_impl<20>(derivs, q, model, opt);
}

inline ConstraintSystem constraint_system(const DerivativeStack& stack, const QuadrotorParams& q,
                                          Model model, const FlatnessOptions& opt = {}) {
  detail::check_stack(stack, model == Model::R ? 5 : 4);
  return constraint_system(stack.derivs, stack.order, q, model, opt);
}

inline Eigen::MatrixXd constraint_jacobian(const DerivativeStack& stack, const QuadrotorParams& q,
                                           Model model, const FlatnessOptions& opt = {}) {
  return constraint_system(stack, q, model, opt).jacobian;
}

}  // namespace aos
