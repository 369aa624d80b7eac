#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace galqr {

struct QuadratureFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
inline constexpr double gk_nodes[8] = {
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000};

inline constexpr double gk_weights[8] = {
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714};

inline constexpr double g_weights[4] = {
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327};

template <typename F>
void gauss_kronrod_15(F& f, double a, double b, double& result, double& err) {
  double c = 0.5 * (a + b);
  double h = 0.5 * (b - a);
  double fc = f(c);
  double res_g = fc * g_weights[3];
  double res_k = fc * gk_weights[7];
  for (int i = 0; i < 7; ++i) {
    double x = h * gk_nodes[i];
    double f1 = f(c - x);
    double f2 = f(c + x);
    res_k += gk_weights[i] * (f1 + f2);
    if (i % 2 == 1) res_g += g_weights[i / 2] * (f1 + f2);
  }
  result = res_k * h;
  err = std::abs((res_k - res_g) * h);
}

}  // namespace detail

/// Adaptive Gauss-Kronrod integration of f over [a,b].
/// Bisects the worst panel until the summed error estimate meets
/// max(abs_tol, rel_tol*|integral|); throws QuadratureFailure if the
/// panel budget is exhausted first.
template <typename F>
double integrate(F f, double a, double b, double rel_tol = 1e-10,
                 double abs_tol = 1e-14, int max_panels = 2000) {
  if (!(b >= a)) throw std::invalid_argument("integrate: b < a");
  if (a == b) return 0.0;

  struct Panel {
    double a, b, value, err;
  };
  std::vector<Panel> panels;
  panels.reserve(64);
  double v, e;
  detail::gauss_kronrod_15(f, a, b, v, e);
  panels.push_back({a, b, v, e});

  for (int iter = 0; iter < max_panels; ++iter) {
    double total = 0.0, total_err = 0.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < panels.size(); ++i) {
      total += panels[i].value;
      total_err += panels[i].err;
      if (panels[i].err > panels[worst].err) worst = i;
    }
    if (total_err <= std::max(abs_tol, rel_tol * std::abs(total))) return total;

    Panel p = panels[worst];
    if (p.b - p.a < 1e-14 * (std::abs(p.a) + std::abs(p.b) + 1.0))
      throw QuadratureFailure("integrate: panel underflow before tolerance met");
    double mid = 0.5 * (p.a + p.b);
    Panel left, right;
    left.a = p.a;
    left.b = mid;
    right.a = mid;
    right.b = p.b;
    detail::gauss_kronrod_15(f, left.a, left.b, left.value, left.err);
    detail::gauss_kronrod_15(f, right.a, right.b, right.value, right.err);
    panels[worst] = left;
    panels.push_back(right);
  }
  throw QuadratureFailure("integrate: panel budget exhausted before tolerance met");
}

}  // namespace galqr
