#include "spdegrf/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "spdegrf/errors.hpp"

namespace spdegrf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Sample {
  double step = 0.0;
  double value = kInf;
  double slope = 0.0;  // directional derivative
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
  bool finite() const { return std::isfinite(value); }
};

class LineSearch {
 public:
  LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir,
             double f0, double slope0, const LbfgsOptions& opt, int& evaluations)
      : f_(f), x_(x), dir_(dir), f0_(f0), slope0_(slope0), opt_(opt), evals_(evaluations) {}

  // Strong Wolfe search (bracketing then zoom). Returns false when no
  // acceptable point was found; `best` then holds the lowest value seen.
  bool run(double step, Sample& best) {
    Sample prev{0.0, f0_, slope0_, {}, {}};
    best = prev;
    for (int it = 0; it < opt_.max_line_search_steps; ++it) {
      Sample cur = evaluate(step);
      if (cur.finite() && cur.value < best.value) best = cur;
      if (!cur.finite() || cur.value > f0_ + opt_.wolfe_c1 * step * slope0_ ||
          (it > 0 && cur.value >= prev.value)) {
        return zoom(prev, cur, best);
      }
      if (std::abs(cur.slope) <= -opt_.wolfe_c2 * slope0_) {
        best = cur;
        return true;
      }
      if (cur.slope >= 0.0) return zoom(cur, prev, best);
      prev = cur;
      step *= 2.0;
    }
    return false;
  }

 private:
  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  double f0_;
  double slope0_;
  const LbfgsOptions& opt_;
  int& evals_;

  Sample evaluate(double step) {
    Sample s;
    s.step = step;
    s.x = x_ + step * dir_;
    s.grad = Eigen::VectorXd::Zero(x_.size());
    ++evals_;
    try {
      s.value = f_(s.x, s.grad);
    } catch (const Error&) {
      s.value = kInf;
    }
    if (!std::isfinite(s.value) || !s.grad.allFinite()) {
      s.value = kInf;
      return s;
    }
    s.slope = s.grad.dot(dir_);
    return s;
  }

  bool zoom(Sample lo, Sample hi, Sample& best) {
    for (int it = 0; it < opt_.max_line_search_steps; ++it) {
      double step = 0.5 * (lo.step + hi.step);
      if (hi.finite()) {
        // Cubic interpolation between the bracket ends, kept inside the bracket.
        const double d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.step - hi.step);
        const double disc = d1 * d1 - lo.slope * hi.slope;
        if (disc >= 0.0) {
          const double d2 = std::copysign(std::sqrt(disc), hi.step - lo.step);
          const double trial =
              hi.step - (hi.step - lo.step) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2 * d2);
          const double a = std::min(lo.step, hi.step);
          const double b = std::max(lo.step, hi.step);
          const double margin = 0.1 * (b - a);
          if (std::isfinite(trial) && trial > a + margin && trial < b - margin) step = trial;
        }
      }
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, std::abs(lo.step))) return false;
      Sample cur = evaluate(step);
      if (cur.finite() && cur.value < best.value) best = cur;
      if (!cur.finite() || cur.value > f0_ + opt_.wolfe_c1 * step * slope0_ ||
          cur.value >= lo.value) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -opt_.wolfe_c2 * slope0_) {
          best = cur;
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    return false;
  }
};

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, const Eigen::VectorXd& x0,
                           const LbfgsOptions& options) {
  LbfgsResult result;
  result.x = x0;
  result.gradient = Eigen::VectorXd::Zero(x0.size());
  result.value = objective(result.x, result.gradient);
  result.evaluations = 1;
  if (!std::isfinite(result.value) || !result.gradient.allFinite()) {
    throw InvalidArgumentError("objective is not finite at the starting point");
  }

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  auto converged = [&] {
    return result.gradient.lpNorm<Eigen::Infinity>() <
           options.gradient_tolerance * std::max(1.0, std::abs(result.value));
  };

  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    if (converged()) {
      result.converged = true;
      result.message = "gradient tolerance reached";
      return result;
    }

    // Two-loop recursion.
    Eigen::VectorXd q = result.gradient;
    std::vector<double> a(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      a[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= a[i] * y_hist[i];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(q);
      q += (a[i] - b) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    double slope = dir.dot(result.gradient);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -result.gradient;
      slope = dir.dot(result.gradient);
    }
    const double step0 = s_hist.empty() ? std::min(1.0, 1.0 / result.gradient.norm()) : 1.0;

    LineSearch search(objective, result.x, dir, result.value, slope, options, result.evaluations);
    Sample best;
    const bool ok = search.run(step0, best);
    if (!ok && !(best.step > 0.0 && best.value < result.value)) {
      if (!s_hist.empty()) {
        // Retry once along steepest descent with fresh curvature.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      result.message = "line search failed to make progress";
      result.converged = converged();
      return result;
    }

    Eigen::VectorXd s = best.x - result.x;
    Eigen::VectorXd y = best.grad - result.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double previous = result.value;
    result.x = best.x;
    result.value = best.value;
    result.gradient = best.grad;
    if (std::abs(previous - result.value) <= 1e-15 * std::max(1.0, std::abs(result.value)) &&
        s_hist.empty()) {
      result.message = "no further decrease";
      result.converged = converged();
      return result;
    }
  }
  result.converged = converged();
  result.message = result.converged ? "gradient tolerance reached" : "iteration limit reached";
  return result;
}

}  // namespace spdegrf
