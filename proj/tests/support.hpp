#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace jfbctrl::test {

// Central finite difference of a scalar function over a flat vector.
inline std::vector<double> central_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double eps = 1e-6) {
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x);
    x[i] = saved - eps;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

inline std::vector<double> to_vec(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
  return out;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = (a.size() == b.size()) ? 0.0
                                    : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Small deterministic value pattern for seeding test inputs.
inline std::vector<double> pattern(std::size_t n, double scale = 1.0,
                                   double shift = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = scale * std::sin(1.7 * static_cast<double>(i) + 0.3) + shift;
  return v;
}

}  // namespace jfbctrl::test
