#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fanet/params.hpp"
#include "fanet/random.hpp"
#include "fanet/tensor.hpp"

// Central finite-difference verification of the registered backward rules.
// Intended for double precision; single precision drowns the differences in
// rounding noise.

namespace fanet {

// Relative error with an absolute floor: differences at or below the floor
// count as zero (gradients that are exactly zero otherwise drown in the
// rounding noise of the difference quotient).
inline double rel_error(double analytic, double numeric, double abs_floor) {
  double diff = std::fabs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::fabs(analytic), std::fabs(numeric));
}

namespace detail {

inline std::vector<int64_t> pick_coords(int64_t numel, int64_t max_coords,
                                        uint64_t seed) {
  std::vector<int64_t> coords;
  if (max_coords < 0 || max_coords >= numel) {
    coords.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) coords[static_cast<size_t>(i)] = i;
    return coords;
  }
  Rng rng(derive_seed(seed, 0x6f72616e676573ULL));
  std::unordered_set<int64_t> seen;
  while (static_cast<int64_t>(coords.size()) < max_coords) {
    int64_t i = rng.uniform_int(0, numel - 1);
    if (seen.insert(i).second) coords.push_back(i);
  }
  return coords;
}

}  // namespace detail

// Max relative error between backward() and central differences of the
// scalar function f over the coordinates of x. max_coords < 0 checks every
// coordinate; otherwise a seeded random subset.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(Tensor<T>&)>& f,
                         Tensor<T>& x, double eps = 1e-4,
                         double abs_floor = 1e-8, int64_t max_coords = -1,
                         uint64_t seed = 0) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> y = f(x);
  y.backward();
  std::vector<T> analytic = x.grad();

  double max_err = 0;
  for (int64_t i : detail::pick_coords(x.numel(), max_coords, seed)) {
    T saved = x.values()[static_cast<size_t>(i)];
    x.values()[static_cast<size_t>(i)] = saved + static_cast<T>(eps);
    double fp = static_cast<double>(f(x).item());
    x.values()[static_cast<size_t>(i)] = saved - static_cast<T>(eps);
    double fm = static_cast<double>(f(x).item());
    x.values()[static_cast<size_t>(i)] = saved;
    double numeric = (fp - fm) / (2.0 * eps);
    max_err = std::max(
        max_err,
        rel_error(static_cast<double>(analytic[static_cast<size_t>(i)]),
                  numeric, abs_floor));
  }
  return max_err;
}

template <typename T>
struct ParamGradReport {
  std::string name;
  double max_rel_err = 0;
};

// Finite-difference check of d(loss)/d(theta) for every registered
// parameter. loss_fn rebuilds the forward graph on each call; parameters are
// perturbed in place. Samples up to coords_per_tensor coordinates per
// parameter tensor (negative: all).
template <typename T>
std::vector<ParamGradReport<T>> finite_diff_check_params(
    const std::function<Tensor<T>()>& loss_fn,
    const std::vector<Parameter<T>>& params, double eps = 1e-4,
    double abs_floor = 1e-8, int64_t coords_per_tensor = -1,
    uint64_t seed = 0) {
  for (const auto& p : params) p.tensor.zero_grad();
  Tensor<T> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.tensor.grad());

  std::vector<ParamGradReport<T>> reports;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Parameter<T>& p = params[pi];
    ParamGradReport<T> rep{p.name, 0.0};
    std::vector<T>& vals = p.tensor.values();
    for (int64_t i : detail::pick_coords(p.tensor.numel(), coords_per_tensor,
                                         derive_seed(seed, pi))) {
      T saved = vals[static_cast<size_t>(i)];
      vals[static_cast<size_t>(i)] = saved + static_cast<T>(eps);
      double fp = static_cast<double>(loss_fn().item());
      vals[static_cast<size_t>(i)] = saved - static_cast<T>(eps);
      double fm = static_cast<double>(loss_fn().item());
      vals[static_cast<size_t>(i)] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          rel_error(static_cast<double>(analytic[pi][static_cast<size_t>(i)]),
                    numeric, abs_floor));
    }
    reports.push_back(rep);
  }
  return reports;
}

template <typename T>
double max_report_error(const std::vector<ParamGradReport<T>>& reports) {
  double m = 0;
  for (const auto& r : reports) m = std::max(m, r.max_rel_err);
  return m;
}

}  // namespace fanet
