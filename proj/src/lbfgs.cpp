#include "cpcure/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "cpcure/util.hpp"

namespace cpcure {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const Box& box) {
  return x.cwiseMax(box.lower).cwiseMin(box.upper);
}

// Gradient with components zeroed where a bound is active and the step would
// leave the box; its norm is the stationarity measure under constraints.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                   const Box& box) {
  Eigen::VectorXd pg = g;
  for (int i = 0; i < x.size(); ++i) {
    if (x(i) <= box.lower(i) && g(i) > 0.0) pg(i) = 0.0;
    if (x(i) >= box.upper(i) && g(i) < 0.0) pg(i) = 0.0;
  }
  return pg;
}

}  // namespace

OptimResult minimize_box_lbfgs(const ObjectiveFn& f, Eigen::VectorXd x0, const Box& box,
                               int max_iter, double grad_tol, int memory) {
  const int n = static_cast<int>(x0.size());
  if (box.lower.size() != n || box.upper.size() != n)
    fail("minimize_box_lbfgs: bound sizes do not match the variable count");
  for (int i = 0; i < n; ++i)
    if (!(box.lower(i) <= box.upper(i))) fail("minimize_box_lbfgs: empty box");

  OptimResult res;
  Eigen::VectorXd x = clamp(x0, box);
  Eigen::VectorXd g(n), g_new(n);
  double fx = f(x, g);
  if (!std::isfinite(fx)) fail("minimize_box_lbfgs: objective not finite at the start");

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (s, y)
  double gamma = 1.0;  // scaling of the initial inverse Hessian

  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd pg = projected_gradient(x, g, box);
    if (pg.cwiseAbs().maxCoeff() < grad_tol) {
      res.converged = true;
      res.iterations = iter;
      break;
    }

    // Two-loop recursion on the projected gradient; coordinates pinned at an
    // active bound keep a plain (scaled) steepest-descent component.
    Eigen::VectorXd q = pg;
    std::vector<double> alpha(pairs.size());
    for (int i = static_cast<int>(pairs.size()) - 1; i >= 0; --i) {
      const auto& [s, yv] = pairs[i];
      alpha[i] = s.dot(q) / yv.dot(s);
      q -= alpha[i] * yv;
    }
    q *= gamma;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [s, yv] = pairs[i];
      const double beta = yv.dot(q) / yv.dot(s);
      q += (alpha[i] - beta) * s;
    }
    Eigen::VectorXd d = -q;
    if (d.dot(pg) >= 0.0) d = -pg;  // defective direction: fall back

    // Weak-Wolfe line search by bisection with expansion. Sufficient decrease
    // (Armijo, never above the current value) controls the step from above;
    // the curvature condition g_new'd >= c2 g'd controls it from below and
    // guarantees s'y > 0 for every pair stored, which keeps the quasi-Newton
    // memory positive definite. Trials truncated by the box accept on
    // sufficient decrease alone, matching a gradient-projection step.
    const double c1 = 1e-4, c2 = 0.9;
    const double gd = g.dot(d);
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double step = 1.0;
    double f_new = fx;
    Eigen::VectorXd x_new = x;
    bool accepted = false;
    bool have_fallback = false;  // best sufficient-decrease trial seen
    double f_fb = fx;
    Eigen::VectorXd x_fb, g_fb;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = clamp(x + step * d, box);
      const Eigen::VectorXd dx = x_new - x;
      if (dx.cwiseAbs().maxCoeff() == 0.0) break;  // vanished at box/fp resolution
      f_new = f(x_new, g_new);
      const bool decrease =
          std::isfinite(f_new) && f_new <= fx + c1 * g.dot(dx) && f_new <= fx;
      if (!decrease) {
        hi = step;
      } else {
        const bool truncated = ((x + step * d - x_new).cwiseAbs().maxCoeff() != 0.0);
        if (f_new < f_fb) {
          have_fallback = true;
          f_fb = f_new;
          x_fb = x_new;
          g_fb = g_new;
        }
        if (truncated || g_new.dot(d) >= c2 * gd) {
          accepted = true;
          break;
        }
        lo = step;  // decrease fine, curvature says the step is too short
      }
      step = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * step;
    }
    if (!accepted && have_fallback) {
      // Curvature never satisfied within the budget: take the best
      // sufficient-decrease point; the s'y guard below drops its pair.
      x_new = x_fb;
      f_new = f_fb;
      g_new = g_fb;
      accepted = true;
    }
    if (!accepted) {
      // One more attempt straight down the projected gradient before giving up.
      bool rescue = false;
      step = 1.0 / std::max(1.0, pg.cwiseAbs().maxCoeff());
      for (int ls = 0; ls < 60; ++ls) {
        x_new = clamp(x - step * pg, box);
        const Eigen::VectorXd dx = x_new - x;
        if (dx.cwiseAbs().maxCoeff() == 0.0) break;
        f_new = f(x_new, g_new);
        if (std::isfinite(f_new) && f_new < fx) {
          rescue = true;
          break;
        }
        step *= 0.5;
      }
      if (!rescue) {
        res.iterations = iter;
        break;  // no descent possible at floating-point resolution
      }
      pairs.clear();  // curvature history no longer trustworthy
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      pairs.emplace_back(s, yv);
      if (static_cast<int>(pairs.size()) > memory) pairs.pop_front();
      gamma = sy / yv.squaredNorm();
    }
    x = x_new;
    fx = f_new;
    g = g_new;
    res.iterations = iter + 1;
  }

  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace cpcure
