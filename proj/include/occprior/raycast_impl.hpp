#pragma once

// Template definitions for raycast.hpp.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace occprior {

template <typename Visit>
bool traverse_segment(const GridSpec& spec, const Eigen::Vector3d& from,
                      const Eigen::Vector3d& to, Visit&& visit) {
  const Eigen::Vector3d o = (from - spec.p_min) / spec.v_size;
  const Eigen::Vector3d d = (to - spec.p_min) / spec.v_size - o;
  const Eigen::Vector3i dims(spec.h, spec.w, spec.z);

  // Slab clip of the parametric segment o + t d, t in [0, 1].
  double t_enter = 0.0, t_exit = 1.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < 0.0 || o[a] > dims[a]) return true;
      continue;
    }
    double t0 = (0.0 - o[a]) / d[a];
    double t1 = (dims[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit) return true;

  auto cell_at = [&](double t) {
    Eigen::Vector3i c;
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(int(std::floor(o[a] + t * d[a])), 0, dims[a] - 1);
    return c;
  };
  Eigen::Vector3i cur = cell_at(t_enter);
  const Eigen::Vector3i end = cell_at(t_exit);

  Eigen::Vector3i step, remaining;
  Eigen::Vector3d t_max, t_delta;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    step[a] = end[a] > cur[a] ? 1 : (end[a] < cur[a] ? -1 : 0);
    remaining[a] = std::abs(end[a] - cur[a]);
    if (d[a] == 0.0) {
      t_max[a] = inf;
      t_delta[a] = inf;
    } else {
      const double boundary = cur[a] + (d[a] > 0.0 ? 1.0 : 0.0);
      t_max[a] = (boundary - o[a]) / d[a];
      t_delta[a] = 1.0 / std::abs(d[a]);
    }
  }

  for (;;) {
    if (!visit(spec.voxel_offset(cur.x(), cur.y(), cur.z()))) return false;
    // Axes that already reached the end cell are frozen, so the walk always
    // terminates at `end` even when rounding disagrees with cell_at().
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
      if (remaining[a] == 0) continue;
      if (axis < 0 || t_max[a] < t_max[axis]) axis = a;
    }
    if (axis < 0) return true;
    cur[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    --remaining[axis];
  }
}

}  // namespace occprior
