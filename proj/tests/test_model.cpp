#include <catch2/catch_amalgamated.hpp>

#include <aos/quad_model.hpp>

#include <cmath>
#include <random>

using namespace aos;
using Catch::Approx;

TEST_CASE("nondimensionalize follows the rate/gravity scaling") {
  QuadrotorParams q = preset("STD");  // pitch bound 10, g = 9.81
  auto [t_hat, p_hat] = nondimensionalize(q, 1.0, 9.81);
  REQUIRE(t_hat == Approx(10.0));
  REQUIRE(p_hat == Approx(100.0));

  auto [t, p] = dimensionalize(q, t_hat, p_hat);
  REQUIRE(t == Approx(1.0).margin(1e-15));
  REQUIRE(p == Approx(9.81).margin(1e-12));
}

TEST_CASE("round trip is exact to machine precision") {
  QuadrotorParams q = preset("FGG");
  std::mt19937_64 rng{7};
  std::uniform_real_distribution<double> u{-100.0, 100.0};
  for (int i = 0; i < 100; ++i) {
    const double t = u(rng), p = u(rng);
    auto [th, ph] = nondimensionalize(q, t, p);
    auto [t2, p2] = dimensionalize(q, th, ph);
    REQUIRE(t2 == Approx(t).margin(1e-12 * (1.0 + std::abs(t))));
    REQUIRE(p2 == Approx(p).margin(1e-12 * (1.0 + std::abs(p))));
  }
}

TEST_CASE("planar dynamics matches the model equations") {
  SECTION("hover equilibrium") {
    PlanarState s;
    PlanarInput u{0.0, 1.0};
    const PlanarState d = planar_dynamics(s, u);
    REQUIRE(d.x_hat == 0.0);
    REQUIRE(d.x_hat_dot == Approx(0.0).margin(1e-15));
    REQUIRE(d.z_hat == 0.0);
    REQUIRE(d.z_hat_dot == Approx(0.0).margin(1e-15));
    REQUIRE(d.theta == 0.0);
  }
  SECTION("quarter turn pushes sideways and loses lift") {
    PlanarState s;
    s.theta = M_PI / 2.0;
    const PlanarState d = planar_dynamics(s, PlanarInput{0.0, 2.0});
    REQUIRE(d.x_hat_dot == Approx(2.0));
    REQUIRE(d.z_hat_dot == Approx(-1.0).margin(1e-12));
  }
  SECTION("inverted thrust doubles the fall") {
    PlanarState s;
    s.theta = M_PI;
    const PlanarState d = planar_dynamics(s, PlanarInput{0.0, 1.0});
    REQUIRE(d.z_hat_dot == Approx(-2.0).margin(1e-12));
  }
}

TEST_CASE("planar bounds are the four-rotor envelope") {
  {
    const PlanarBoundsT b = planar_bounds(preset("STD"));
    REQUIRE(b.u_t_min == Approx(0.1019).margin(1e-4));
    REQUIRE(b.u_t_max == Approx(2.0387).margin(1e-4));
  }
  {
    QuadrotorParams q = preset("STD");
    q.rotor_thrust_max = q.gravity / 4.0;
    REQUIRE(planar_bounds(q).u_t_max == Approx(1.0));
  }
  {
    const PlanarBoundsT b = planar_bounds(preset("FSC"));
    REQUIRE(b.u_t_min == Approx(0.0406).margin(1e-4));
    REQUIRE(b.u_t_max == Approx(3.652).margin(1e-3));
  }
}

TEST_CASE("presets carry catalog values with inertia converted") {
  const QuadrotorParams std_q = preset("STD");
  REQUIRE(std_q.inertia_diag.z() == Approx(0.010));
  const QuadrotorParams rpg = preset("RPG");
  REQUIRE(rpg.mass == Approx(0.85));
  REQUIRE(rpg.body_rate_max.z() == Approx(3.0));
  REQUIRE(rpg.inertia_diag.x() == Approx(1.0e-3));
  const QuadrotorParams fsc = preset("FSC");
  REQUIRE(fsc.mass == Approx(1.005));
  REQUIRE(fsc.torque_constant == Approx(0.022));
  REQUIRE_THROWS_AS(preset("std"), std::invalid_argument);
  REQUIRE_THROWS_AS(preset("QUAD"), std::invalid_argument);
}

TEST_CASE("dynamics is affine in the input at fixed state") {
  std::mt19937_64 rng{11};
  std::uniform_real_distribution<double> u{-2.0, 2.0};
  for (int i = 0; i < 50; ++i) {
    PlanarState s;
    s.x_hat = u(rng);
    s.x_hat_dot = u(rng);
    s.z_hat = u(rng);
    s.z_hat_dot = u(rng);
    s.theta = 2.0 * u(rng);
    PlanarInput a{u(rng) / 2.0, std::abs(u(rng)) + 0.1};
    PlanarInput b{u(rng) / 2.0, std::abs(u(rng)) + 0.1};
    PlanarInput mid{0.5 * (a.u_r + b.u_r), 0.5 * (a.u_t + b.u_t)};
    const PlanarState da = planar_dynamics(s, a);
    const PlanarState db = planar_dynamics(s, b);
    const PlanarState dm = planar_dynamics(s, mid);
    REQUIRE(dm.x_hat_dot == Approx(0.5 * (da.x_hat_dot + db.x_hat_dot)).margin(1e-12));
    REQUIRE(dm.z_hat_dot == Approx(0.5 * (da.z_hat_dot + db.z_hat_dot)).margin(1e-12));
    REQUIRE(dm.theta == Approx(0.5 * (da.theta + db.theta)).margin(1e-12));
  }
}

namespace {

struct Planar5 {
  double v[5];
};

template <typename F>
Planar5 rk4(const F& f, Planar5 y, double t0, double t1, double h) {
  double t = t0;
  while (t < t1 - 1e-15) {
    const double step = std::min(h, t1 - t);
    const Planar5 k1 = f(t, y);
    Planar5 y2, y3, y4;
    for (int i = 0; i < 5; ++i) y2.v[i] = y.v[i] + 0.5 * step * k1.v[i];
    const Planar5 k2 = f(t + 0.5 * step, y2);
    for (int i = 0; i < 5; ++i) y3.v[i] = y.v[i] + 0.5 * step * k2.v[i];
    const Planar5 k3 = f(t + 0.5 * step, y3);
    for (int i = 0; i < 5; ++i) y4.v[i] = y.v[i] + step * k3.v[i];
    const Planar5 k4 = f(t + step, y4);
    for (int i = 0; i < 5; ++i)
      y.v[i] += step / 6.0 * (k1.v[i] + 2.0 * k2.v[i] + 2.0 * k3.v[i] + k4.v[i]);
    t += step;
  }
  return y;
}

}  // namespace

TEST_CASE("non-dimensional integration matches the dimensional planar model") {
  const QuadrotorParams q = preset("STD");
  const double w = body_rate_scale(q);
  const double g = q.gravity;

  // smooth open-loop controls given in non-dimensional time
  const auto u_t = [](double t_hat) { return 1.0 + 0.3 * std::sin(0.7 * t_hat); };
  const auto u_r = [](double t_hat) { return 0.5 * std::cos(1.3 * t_hat); };

  const auto f_hat = [&](double t_hat, const Planar5& y) {
    PlanarState s{y.v[0], y.v[1], y.v[2], y.v[3], y.v[4]};
    const PlanarState d = planar_dynamics(s, PlanarInput{u_r(t_hat), u_t(t_hat)});
    return Planar5{{d.x_hat, d.x_hat_dot, d.z_hat, d.z_hat_dot, d.theta}};
  };
  // dimensional planar model: x" = g u_t sin(theta), z" = g u_t cos(theta) - g,
  // theta' = w u_r, with the controls evaluated at t_hat = w t
  const auto f_dim = [&](double t, const Planar5& y) {
    const double th = y.v[4];
    const double ut = u_t(w * t), ur = u_r(w * t);
    return Planar5{{y.v[1], g * ut * std::sin(th), y.v[3], g * ut * std::cos(th) - g, w * ur}};
  };

  Planar5 y0_hat{{0.3, -0.2, 0.1, 0.4, 0.2}};
  Planar5 y0_dim{{g * y0_hat.v[0] / (w * w), g * y0_hat.v[1] / w, g * y0_hat.v[2] / (w * w),
                  g * y0_hat.v[3] / w, y0_hat.v[4]}};

  const double horizon_hat = 5.0;
  const Planar5 yh = rk4(f_hat, y0_hat, 0.0, horizon_hat, 1e-4);
  const Planar5 yd = rk4(f_dim, y0_dim, 0.0, horizon_hat / w, 1e-4 / w);

  const double back[5] = {w * w * yd.v[0] / g, w * yd.v[1] / g, w * w * yd.v[2] / g,
                          w * yd.v[3] / g, yd.v[4]};
  for (int i = 0; i < 5; ++i) {
    const double scale = std::max(1.0, std::abs(yh.v[i]));
    REQUIRE(std::abs(yh.v[i] - back[i]) / scale <= 1e-8);
  }
}
