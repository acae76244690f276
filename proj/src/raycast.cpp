#include "occprior/raycast.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace occprior {

std::size_t VisibilityMask::observed_count() const {
  return std::size_t(std::count(observed.begin(), observed.end(), 1));
}

void SamplingParams::validate() const {
  if (!(delta_d > 0.0) || !(delta_d <= d_max) || !std::isfinite(d_max))
    throw std::invalid_argument("SamplingParams: need 0 < delta_d <= d_max");
}

int SamplingParams::sample_count() const {
  return int(std::floor(d_max / delta_d + 1e-9));
}

VisibilityMask visibility_mask(const LabelGrid& labels,
                               std::span<const CameraModel> cams,
                               VisibilityRule rule) {
  const GridSpec& s = labels.spec;
  VisibilityMask mask(s);
  for (const CameraModel& cam : cams) {
    const Eigen::Vector3d origin = cam.origin();
    for (int ih = 0; ih < s.h; ++ih)
      for (int iw = 0; iw < s.w; ++iw)
        for (int iz = 0; iz < s.z; ++iz) {
          const std::size_t target = s.voxel_offset(ih, iw, iz);
          if (rule == VisibilityRule::per_target && mask.observed[target]) continue;
          traverse_segment(s, origin, s.voxel_center(ih, iw, iz), [&](std::size_t v) {
            if (rule == VisibilityRule::per_ray || v == target) mask.observed[v] = 1;
            return v != target && !labels.occupied(v);
          });
        }
  }
  return mask;
}

MaskedLogits apply_visibility(LogitsGrid logits, VisibilityMask mask) {
  if (!(logits.spec == mask.spec) ||
      mask.observed.size() != logits.spec.voxel_count())
    throw ShapeError("apply_visibility: mask and logits disagree on shape");
  return {std::move(logits), std::move(mask)};
}

DepthMap render_depth(const LabelGrid& labels, const CameraModel& cam,
                      const SamplingParams& params) {
  params.validate();
  cam.validate();
  DepthMap out;
  out.width = cam.width;
  out.height = cam.height;
  out.d_max = params.d_max;
  out.depth.assign(std::size_t(cam.width) * cam.height, params.d_max);

  const int n_d = params.sample_count();
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Eigen::Vector3d ray = pixel_ray(cam, u, v);
      for (int i = 1; i <= n_d; ++i) {
        const double d_i = i * params.delta_d;
        const Eigen::Vector3d p_ego = camera_point_to_ego(d_i * ray, cam);
        const auto idx = voxel_index(p_ego, labels.spec);
        if (!idx) continue;
        if (labels.at(idx->x(), idx->y(), idx->z()) != labels.spec.l_free) {
          out.depth[std::size_t(v) * cam.width + u] = d_i;
          break;
        }
      }
    }
  return out;
}

namespace {

std::ofstream open_binary(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  return os;
}

}  // namespace

void write_pfm(const DepthMap& depth, const std::filesystem::path& path) {
  std::ofstream os = open_binary(path);
  os << "Pf\n" << depth.width << ' ' << depth.height << "\n-1.0\n";
  for (int v = depth.height - 1; v >= 0; --v)
    for (int u = 0; u < depth.width; ++u) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(float(depth.at(u, v)));
      const char bytes[4] = {char(bits & 0xff), char((bits >> 8) & 0xff),
                             char((bits >> 16) & 0xff), char(bits >> 24)};
      os.write(bytes, 4);
    }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_pgm16(const DepthMap& depth, const std::filesystem::path& path) {
  std::ofstream os = open_binary(path);
  os << "P5\n" << depth.width << ' ' << depth.height << "\n65535\n";
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double mm = std::round(depth.at(u, v) * 1000.0);
      const auto q = std::uint16_t(std::clamp(mm, 0.0, 65535.0));
      const char bytes[2] = {char(q >> 8), char(q & 0xff)};
      os.write(bytes, 2);
    }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace occprior
