#pragma once

#include "bmc/common.hpp"
#include "bmc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

namespace bmc {

struct LbfgsOptions {
  Index max_iters = 200;  // accepted iterates, the starting point included
  double grad_tol = 1e-5;  // on the infinity norm
  Index memory = 10;
  double armijo_c1 = 1e-4;
  double shrink = 0.5;
  Index max_backtracks = 40;
  double max_step = 4.0;  // largest coordinate move per iteration
  // Stop once an accepted step lowers the value by at most
  // f_rel_tol * max(|f_old|, |f_new|, 1). Zero disables the test.
  double f_rel_tol = 0.0;
};

enum class LbfgsStatus { converged, max_iters, line_search_failure, terminal_point };

struct LbfgsPoint {
  double value = 0.0;
  Vector gradient;
  bool terminal = false;  // the objective asks to stop here
};

struct LbfgsResult {
  Vector x;
  LbfgsPoint point;
  LbfgsStatus status = LbfgsStatus::max_iters;
  Index iterations = 0;
  Index evaluations = 0;
};

/// Limited-memory BFGS (two-loop recursion) with Armijo backtracking.
/// `eval(x)` returns value and gradient, or nullopt when x is infeasible
/// (treated as an infinite value during the line search).
/// `on_accept(x, point, evaluations)` is called for every accepted iterate.
template <class Eval, class OnAccept>
LbfgsResult lbfgs_minimize(Eval&& eval, Vector x0, const LbfgsOptions& opts, OnAccept&& on_accept) {
  LbfgsResult res;
  res.x = std::move(x0);
  std::optional<LbfgsPoint> first = eval(res.x);
  ++res.evaluations;
  if (!first) throw InvalidArgument("objective is not finite at the starting point");
  res.point = std::move(*first);
  res.iterations = 1;
  on_accept(res.x, res.point, res.evaluations);

  std::deque<std::pair<Vector, Vector>> history;  // (s, y)
  while (true) {
    if (res.point.terminal) {
      res.status = LbfgsStatus::terminal_point;
      return res;
    }
    const Vector& g = res.point.gradient;
    const double gmax = g.lpNorm<Eigen::Infinity>();
    if (gmax < opts.grad_tol) {
      res.status = LbfgsStatus::converged;
      return res;
    }
    if (res.iterations >= opts.max_iters) {
      res.status = LbfgsStatus::max_iters;
      return res;
    }

    Vector d = -g;
    double t = 1.0;
    if (history.empty()) {
      t = std::min(1.0, 1.0 / gmax);
    } else {
      std::vector<double> alpha(history.size());
      Vector q = g;
      for (std::size_t k = history.size(); k-- > 0;) {
        const auto& [s, y] = history[k];
        alpha[k] = s.dot(q) / y.dot(s);
        q -= alpha[k] * y;
      }
      const auto& [s_last, y_last] = history.back();
      q *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t k = 0; k < history.size(); ++k) {
        const auto& [s, y] = history[k];
        const double beta = y.dot(q) / y.dot(s);
        q += (alpha[k] - beta) * s;
      }
      d = -q;
      if (!(g.dot(d) < 0.0)) {
        history.clear();
        d = -g;
        t = std::min(1.0, 1.0 / gmax);
      }
    }
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (t * dmax > opts.max_step) t = opts.max_step / dmax;

    const double slope = g.dot(d);
    bool accepted = false;
    Vector x_new;
    LbfgsPoint p_new;
    for (Index bt = 0; bt <= opts.max_backtracks; ++bt, t *= opts.shrink) {
      x_new = res.x + t * d;
      std::optional<LbfgsPoint> trial = eval(x_new);
      ++res.evaluations;
      if (trial && std::isfinite(trial->value) && trial->value <= res.point.value + opts.armijo_c1 * t * slope) {
        p_new = std::move(*trial);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.status = LbfgsStatus::line_search_failure;
      return res;
    }

    const double drop = res.point.value - p_new.value;
    const double scale = std::max({std::abs(res.point.value), std::abs(p_new.value), 1.0});
    Vector s = x_new - res.x;
    Vector y = p_new.gradient - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      history.emplace_back(std::move(s), std::move(y));
      if (static_cast<Index>(history.size()) > opts.memory) history.pop_front();
    }
    res.x = std::move(x_new);
    res.point = std::move(p_new);
    ++res.iterations;
    on_accept(res.x, res.point, res.evaluations);
    if (opts.f_rel_tol > 0.0 && drop <= opts.f_rel_tol * scale) {
      res.status = LbfgsStatus::converged;
      return res;
    }
  }
}

}  // namespace bmc
