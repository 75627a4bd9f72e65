#pragma once

#include <Eigen/Dense>
#include <functional>

namespace cpcure {

// Objective callback: returns f(x) and fills grad (same size as x).
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;  // projected gradient below tolerance
};

// Limited-memory BFGS with box constraints handled by gradient projection:
// search directions come from the two-loop recursion restricted to free
// coordinates, steps are projected onto the box, and a weak-Wolfe line
// search (bisection with expansion) enforces sufficient decrease -- never
// accepting a point above the current value -- plus the curvature condition
// for interior steps. Pairs failing the curvature guard are dropped, so the
// inverse Hessian stays positive definite. Deterministic: no randomness, no
// tolerance on ties.
OptimResult minimize_box_lbfgs(const ObjectiveFn& f, Eigen::VectorXd x0, const Box& box,
                               int max_iter = 200, double grad_tol = 1e-7, int memory = 10);

}  // namespace cpcure
