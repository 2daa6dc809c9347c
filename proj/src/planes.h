#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace forcelens::detail {

// Texel-centred linear interpolation coordinate along one plane axis.
// Texel i sits at normalized coordinate (i + 0.5) / R; outside the first and
// last centres the sample clamps to the edge texel and the derivative is 0.
struct AxisCoord {
  int i0 = 0;
  double frac = 0.0;
  double dfrac = 0.0;  // d frac / d s, where s is the normalized coordinate
};

inline AxisCoord axis_coord(double s, int resolution) {
  AxisCoord c;
  const double g = s * resolution - 0.5;
  if (!(g > 0.0)) {
    c.i0 = 0;
    c.frac = 0.0;
  } else if (g >= resolution - 1) {
    c.i0 = resolution - 2;
    c.frac = 1.0;
  } else {
    c.i0 = std::min(static_cast<int>(std::floor(g)), resolution - 2);
    c.frac = g - c.i0;
    c.dfrac = resolution;
  }
  return c;
}

// Bilinear lookup into a plane stored as [(v * ru + u) * F + f].
struct PlaneLookup {
  AxisCoord u, v;
  int ru = 0;
  int features = 0;

  std::size_t index(int du, int dv, int f) const {
    return (static_cast<std::size_t>(v.i0 + dv) * ru + (u.i0 + du)) * features + f;
  }
  double weight(int du, int dv) const {
    return (du ? u.frac : 1.0 - u.frac) * (dv ? v.frac : 1.0 - v.frac);
  }

  double sample(const double* plane, int f) const {
    double out = 0.0;
    for (int dv = 0; dv < 2; ++dv)
      for (int du = 0; du < 2; ++du) out += weight(du, dv) * plane[index(du, dv, f)];
    return out;
  }

  // d sample / d u_normalized and d sample / d v_normalized.
  double du_sample(const double* plane, int f) const {
    const double a = plane[index(1, 0, f)] - plane[index(0, 0, f)];
    const double b = plane[index(1, 1, f)] - plane[index(0, 1, f)];
    return u.dfrac * ((1.0 - v.frac) * a + v.frac * b);
  }
  double dv_sample(const double* plane, int f) const {
    const double a = plane[index(0, 1, f)] - plane[index(0, 0, f)];
    const double b = plane[index(1, 1, f)] - plane[index(1, 0, f)];
    return v.dfrac * ((1.0 - u.frac) * a + u.frac * b);
  }

  void scatter(double* grad_plane, int f, double g) const {
    for (int dv = 0; dv < 2; ++dv)
      for (int du = 0; du < 2; ++du) grad_plane[index(du, dv, f)] += weight(du, dv) * g;
  }
};

inline PlaneLookup plane_lookup(double su, double sv, int ru, int rv, int features) {
  return {axis_coord(su, ru), axis_coord(sv, rv), ru, features};
}

// Mean squared difference over all adjacent texel pairs along both axes of a
// (rv x ru x F) plane. Adds the gradient scaled by `weight` when grad != null.
inline double plane_tv(const double* plane, int ru, int rv, int features, double* grad,
                       double weight) {
  const std::size_t pairs =
      static_cast<std::size_t>(features) * ((ru - 1) * rv + ru * (rv - 1));
  if (pairs == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(pairs);
  auto at = [&](int u, int v, int f) {
    return (static_cast<std::size_t>(v) * ru + u) * features + f;
  };
  double sum = 0.0;
  for (int v = 0; v < rv; ++v) {
    for (int u = 0; u < ru; ++u) {
      for (int f = 0; f < features; ++f) {
        const std::size_t i = at(u, v, f);
        if (u + 1 < ru) {
          const std::size_t j = at(u + 1, v, f);
          const double d = plane[j] - plane[i];
          sum += d * d;
          if (grad) {
            grad[j] += weight * 2.0 * d * inv;
            grad[i] -= weight * 2.0 * d * inv;
          }
        }
        if (v + 1 < rv) {
          const std::size_t j = at(u, v + 1, f);
          const double d = plane[j] - plane[i];
          sum += d * d;
          if (grad) {
            grad[j] += weight * 2.0 * d * inv;
            grad[i] -= weight * 2.0 * d * inv;
          }
        }
      }
    }
  }
  return sum * inv;
}

}  // namespace forcelens::detail
