#pragma once

// Slow reference implementations shared by the unit and acceptance tests.
// They are written from the equations, without reusing library internals.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "occprior/fusion.hpp"
#include "occprior/geometry.hpp"
#include "occprior/grid.hpp"
#include "occprior/raycast.hpp"

namespace occprior::oracle {

inline bool in_grid_cell(const Eigen::Vector3d& p, const GridSpec& s, int out[3]) {
  const double dims[3] = {double(s.h), double(s.w), double(s.z)};
  for (int a = 0; a < 3; ++a) {
    const double q = std::floor((p[a] - s.p_min[a]) / s.v_size);
    if (!(q >= 0.0 && q < dims[a])) return false;
    out[a] = int(q);
  }
  return true;
}

/// Marches each camera -> voxel-center segment with a fixed step. per_ray
/// marks every sampled voxel up to the first occupied one; per_target marks
/// only the target, when the march reaches it.
inline VisibilityMask dense_visibility(const LabelGrid& labels,
                                       const std::vector<CameraModel>& cams,
                                       double step, VisibilityRule rule) {
  const GridSpec& s = labels.spec;
  VisibilityMask m(s);
  for (const CameraModel& cam : cams) {
    const Eigen::Vector3d o = cam.cam_to_ego.matrix().block<3, 1>(0, 3);
    for (int ih = 0; ih < s.h; ++ih)
      for (int iw = 0; iw < s.w; ++iw)
        for (int iz = 0; iz < s.z; ++iz) {
          const Eigen::Vector3d target(s.p_min.x() + (ih + 0.5) * s.v_size,
                                       s.p_min.y() + (iw + 0.5) * s.v_size,
                                       s.p_min.z() + (iz + 0.5) * s.v_size);
          const double len = (target - o).norm();
          const int n = int(std::ceil(len / step));
          for (int i = 0; i <= n; ++i) {
            const double t = n == 0 ? 1.0 : double(i) / n;
            int c[3];
            if (!in_grid_cell(o + t * (target - o), s, c)) continue;
            const std::size_t v = (std::size_t(c[0]) * s.w + c[1]) * s.z + c[2];
            const bool is_target = c[0] == ih && c[1] == iw && c[2] == iz;
            if (rule == VisibilityRule::per_ray || is_target) m.observed[v] = 1;
            if (is_target || labels.labels[v] != s.l_free) break;
          }
        }
  }
  return m;
}

/// Per-pixel depth written out literally: ray = K^-1 (u, v, 1) with unit
/// third component, samples d_i = i * dd, ego point = T_cam (d_i r, 1),
/// voxel = floor((p - p_min) / v), first non-free in-grid voxel wins.
inline std::vector<double> literal_depth(const LabelGrid& labels, const CameraModel& cam,
                                         double dd, double d_max) {
  const GridSpec& s = labels.spec;
  const Eigen::Matrix3d& k = cam.k;
  const Eigen::Matrix4d& t = cam.cam_to_ego.matrix();
  const int n_d = int(std::floor(d_max / dd + 1e-9));
  std::vector<double> out(std::size_t(cam.width) * cam.height, d_max);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const double ry = (v - k(1, 2)) / k(1, 1);
      const double rx = (u - k(0, 1) * ry - k(0, 2)) / k(0, 0);
      for (int i = 1; i <= n_d; ++i) {
        const double d = i * dd;
        const double pc[4] = {d * rx, d * ry, d * 1.0, 1.0};
        Eigen::Vector3d pe;
        for (int r = 0; r < 3; ++r)
          pe[r] = t(r, 0) * pc[0] + t(r, 1) * pc[1] + t(r, 2) * pc[2] + t(r, 3) * pc[3];
        int c[3];
        if (!in_grid_cell(pe, s, c)) continue;
        if (labels.labels[(std::size_t(c[0]) * s.w + c[1]) * s.z + c[2]] != s.l_free) {
          out[std::size_t(v) * cam.width + u] = d;
          break;
        }
      }
    }
  return out;
}

inline GridSpec random_small_spec(std::mt19937_64& rng, int max_hw = 12, int max_z = 6) {
  std::uniform_int_distribution<int> hw(3, max_hw), zz(2, max_z);
  std::uniform_real_distribution<double> vs(0.2, 0.6);
  GridSpec s;
  s.h = hw(rng);
  s.w = hw(rng);
  s.z = zz(rng);
  s.n_classes = 18;
  s.l_free = 17;
  s.v_size = vs(rng);
  s.p_min = Eigen::Vector3d(-0.5 * s.h * s.v_size, -0.5 * s.w * s.v_size, -1.0);
  return s;
}

inline LabelGrid random_labels(const GridSpec& s, double density, std::mt19937_64& rng) {
  LabelGrid g(s);
  std::bernoulli_distribution occ(density);
  std::uniform_int_distribution<int> cls(0, s.l_free - 1);
  for (auto& l : g.labels)
    if (occ(rng)) l = std::uint8_t(cls(rng));
  return g;
}

/// Camera somewhere inside the grid volume with a random heading.
inline CameraModel random_camera(const GridSpec& s, std::mt19937_64& rng, int width = 32,
                                 int height = 24) {
  std::uniform_real_distribution<double> f(0.05, 0.95), yaw(-M_PI, M_PI),
      fov(M_PI / 3, M_PI * 0.6);
  const Eigen::Vector3d o(s.p_min.x() + f(rng) * s.h * s.v_size,
                          s.p_min.y() + f(rng) * s.w * s.v_size,
                          s.p_min.z() + f(rng) * s.z * s.v_size);
  return CameraModel::looking_along(yaw(rng), o, fov(rng), width, height);
}

/// Quadruple-loop same-padded cross-correlation.
inline FeatureGrid naive_conv(const FeatureGrid& in, const ConvLayer& l) {
  FeatureGrid out(in.h, in.w, l.out_ch);
  const int ph = l.kh / 2, pw = l.kw / 2;
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int o = 0; o < l.out_ch; ++o) {
        double acc = l.bias[o];
        for (int i = 0; i < l.in_ch; ++i)
          for (int dy = 0; dy < l.kh; ++dy)
            for (int dx = 0; dx < l.kw; ++dx) {
              const int yy = y + dy - ph, xx = x + dx - pw;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += l.k(o, i, dy, dx) * in.at(yy, xx, i);
            }
        out.at(y, x, o) = acc;
      }
  return out;
}

inline FeatureGrid random_feature(int h, int w, int c, std::mt19937_64& rng,
                                  double scale = 1.0) {
  FeatureGrid f(h, w, c);
  std::normal_distribution<double> n(0.0, scale);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) f.at(y, x, k) = n(rng);
  return f;
}

/// Random weights at a scale where the gate is far from saturation.
inline FusionWeights random_weights(int c, int p, std::mt19937_64& rng) {
  FusionWeights w = init_weights(c, p, rng());
  std::normal_distribution<double> n(0.0, 0.1);
  for (ConvLayer* l : w.layers())
    for (Eigen::Index i = 0; i < l->bias.size(); ++i) l->bias[i] = n(rng);
  return w;
}

/// Central finite differences of L = sum(G * F_agg) against fuse_backward,
/// over every fusion parameter and every input element. Returns the largest
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double fuse_gradient_error(int h, int w, int c, int p, std::mt19937_64& rng,
                                  double step = 1e-4, double floor = 1e-6) {
  FusionWeights wt = random_weights(c, p, rng);
  FeatureGrid fc = random_feature(h, w, c, rng);
  FeatureGrid prior = random_feature(h, w, p, rng);
  const FeatureGrid g = random_feature(h, w, c, rng);
  auto objective = [&] { return (fuse(fc, prior, wt).f_agg.values * g.values).sum(); };
  const FusionGrads an = fuse_backward(g, fuse(fc, prior, wt), wt);

  double worst = 0.0;
  auto check = [&](double& x, double analytic) {
    const double keep = x;
    x = keep + step;
    const double up = objective();
    x = keep - step;
    const double down = objective();
    x = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  auto layers = wt.layers();
  auto grads = an.weights.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    for (Eigen::Index i = 0; i < layers[l]->kernel.size(); ++i)
      check(layers[l]->kernel[i], grads[l]->kernel[i]);
    for (Eigen::Index i = 0; i < layers[l]->bias.size(); ++i)
      check(layers[l]->bias[i], grads[l]->bias[i]);
  }
  for (Eigen::Index i = 0; i < fc.values.size(); ++i) check(fc.values[i], an.f_c.values[i]);
  for (Eigen::Index i = 0; i < prior.values.size(); ++i)
    check(prior.values[i], an.prior.values[i]);
  return worst;
}

/// Random logits with a random observed subset (probability `observed`).
inline MaskedLogits random_payload(const GridSpec& s, double observed, std::mt19937_64& rng) {
  LogitsGrid l(s);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (Eigen::Index i = 0; i < l.values.size(); ++i) l.values[i] = n(rng);
  VisibilityMask m(s);
  std::bernoulli_distribution obs(observed);
  for (auto& o : m.observed) o = obs(rng) ? 1 : 0;
  return {std::move(l), std::move(m)};
}

}  // namespace occprior::oracle
