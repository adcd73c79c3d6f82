#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

namespace aos {

struct LbfgsOptions {
  int memory = 8;
  int max_iters = 500;
  /// converged when ||g|| <= grad_tol_rel * (1 + |f|)
  double grad_tol_rel = 1e-5;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 40;
  /// also converged when f improves by less than progress_tol_rel * (1 + |f|)
  /// in total over progress_window consecutive accepted steps; penalty
  /// landscapes can hold ||g|| high inside a valley the iterate has
  /// effectively stopped moving along
  double progress_tol_rel = 2e-5;
  int progress_window = 25;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

/// Limited-memory quasi-Newton descent with Armijo backtracking. The functor
/// is f(x, grad) -> double. Accepted iterates are monotone in f; history, if
/// given, records f after every accepted step (starting with f(x0)).
template <class F>
LbfgsResult lbfgs_minimize(F&& fg, Eigen::VectorXd x0, const LbfgsOptions& opt,
                           std::vector<double>* history = nullptr) {
  const int n = static_cast<int>(x0.size());
  LbfgsResult res;
  res.x = std::move(x0);
  res.grad.resize(n);
  res.f = fg(res.x, res.grad);
  if (history) history->push_back(res.f);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::deque<double> f_window;

  for (int it = 0; it < opt.max_iters; ++it) {
    res.iterations = it;
    if (res.grad.norm() <= opt.grad_tol_rel * (1.0 + std::abs(res.f))) {
      res.converged = true;
      return res;
    }
    f_window.push_back(res.f);
    if (static_cast<int>(f_window.size()) > opt.progress_window + 1) f_window.pop_front();
    if (static_cast<int>(f_window.size()) == opt.progress_window + 1 &&
        f_window.front() - res.f <= opt.progress_tol_rel * (1.0 + std::abs(res.f))) {
      res.converged = true;
      return res;
    }

    // two-loop recursion
    Eigen::VectorXd p = -res.grad;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(p);
      p -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      p *= gamma;
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(p);
      p += (alpha[i] - beta) * s_hist[i];
    }

    double dir_deriv = res.grad.dot(p);
    if (!(dir_deriv < 0.0)) {  // curvature info went bad; fall back to steepest
      p = -res.grad;
      dir_deriv = res.grad.dot(p);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    Eigen::VectorXd x_new(n), g_new(n);
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = res.x + step * p;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.f + opt.armijo_c * step * dir_deriv) {
        accepted = true;
        break;
      }
      step *= opt.backtrack;
    }
    if (!accepted) {
      if (s_hist.empty()) {
        // no acceptable step even along steepest descent at 1e-12 scale:
        // f is at its numerical floor here
        res.converged = true;
        return res;
      }
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;  // retry the iteration as plain gradient descent
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    res.x = std::move(x_new);
    res.f = f_new;
    res.grad = std::move(g_new);
    if (history) history->push_back(res.f);
  }
  res.iterations = opt.max_iters;
  res.converged = res.grad.norm() <= opt.grad_tol_rel * (1.0 + std::abs(res.f));
  return res;
}

}  // namespace aos
