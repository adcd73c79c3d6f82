#include "aos/oracle.hpp"
#include "aos/solver.hpp"

#include <chrono>
#include <cstdio>
#include <random>

using namespace aos;

int main() {
  // 1) gradient FD check on a random two-state decision vector
  {
    PlanProblem p = PlanProblem::two_state(Model::R, preset("STD"), {0, 0, 0}, {3, 0, 0});
    const int N = 3;
    PenaltyProgram prog = two_state_program(p, N);
    std::mt19937 rng(1);
    std::normal_distribution<double> n(0.0, 0.5);
    Eigen::VectorXd x(prog.dimension());
    for (int i = 0; i < x.size(); ++i) x[i] = n(rng);
    x.tail(N).array() += 0.5;  // durations ~ 1 s
    Eigen::VectorXd g;
    const double f0 = prog.objective(x, g, 1e3);
    double worst = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      const double h = 1e-6;
      Eigen::VectorXd xp = x, xm = x, dummy;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (prog.objective(xp, dummy, 1e3) - prog.objective(xm, dummy, 1e3)) / (2 * h);
      const double rel = std::abs(fd - g[i]) / (1.0 + std::abs(g[i]));
      if (rel > worst) worst = rel;
    }
    std::printf("grad check: f=%.6f dim=%d worst rel err=%.3e\n", f0, (int)x.size(), worst);
  }

  // 2) hover
  {
    PlanProblem p = PlanProblem::two_state(Model::R, preset("STD"), {0, 0, 0}, {0, 0, 0});
    auto t0 = std::chrono::steady_clock::now();
    Solution s = solve_two_state(p, 1);
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("hover: T=%.6f conv=%d viol=%.2e iters=%d (%.0f ms)\n", s.total_time,
                s.converged, s.max_violation, s.iterations, ms);
  }

  // 3) DI gaps
  for (int N : {1, 4, 7, 10}) {
    auto t0 = std::chrono::steady_clock::now();
    Solution s = solve_double_integrator(-2, 0, 0, 0, 1.0, N);
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const DiSolution ref = di_min_time({-2, 0, 0, 0, 1.0});
    std::printf("di N=%2d: T=%.4f ref=%.4f gap=%5.1f%% conv=%d viol=%.2e (%.0f ms)\n", N,
                s.total_time, ref.total_time, 100 * (s.total_time / ref.total_time - 1),
                s.converged, s.max_violation, ms);
  }

  // 4) 3 m horizontal, Model R, N=5
  {
    PlanProblem p = PlanProblem::two_state(Model::R, preset("STD"), {0, 0, 0}, {3, 0, 0});
    auto t0 = std::chrono::steady_clock::now();
    Solution s = solve_two_state(p, 5);
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("3m R N=5: T=%.4f (want ~1.084+-8%%) conv=%d viol=%.2e iters=%d (%.0f ms)\n",
                s.total_time, s.converged, s.max_violation, s.iterations, ms);
  }
  // 5) 3 m Model S
  {
    PlanProblem p = PlanProblem::two_state(Model::S, preset("STD"), {0, 0, 0}, {3, 0, 0});
    auto t0 = std::chrono::steady_clock::now();
    Solution s = solve_two_state(p, 5);
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("3m S N=5: T=%.4f (want ~0.956+-8%%) conv=%d viol=%.2e iters=%d (%.0f ms)\n",
                s.total_time, s.converged, s.max_violation, s.iterations, ms);
  }
  return 0;
}
