#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "occprior/fusion.hpp"
#include "occprior/geometry.hpp"
#include "occprior/raycast.hpp"

namespace occprior {

// JSON text documents. A pose is 16 row-major numbers, either as a bare
// array or under a "matrix" key. A camera is
// {"k": [9 numbers], "cam_to_ego": [16 numbers], "width": W, "height": H}.

Pose pose_from_json(std::string_view text);
std::string pose_to_json(const Pose& pose);
Pose load_pose(const std::filesystem::path& path);

/// Accepts a single camera object or an array of them.
std::vector<CameraModel> cameras_from_json(std::string_view text);
std::string cameras_to_json(const std::vector<CameraModel>& cams);
std::vector<CameraModel> load_cameras(const std::filesystem::path& path);

/// Masked-logits payload container ("LMPL", version 1): grid spec, float32
/// logits in (h, w, z, class) order, bit-packed observed flags, CRC-32.
std::string encode_payload(const MaskedLogits& payload);
MaskedLogits decode_payload(std::string_view bytes);
void save_payload(const MaskedLogits& payload, const std::filesystem::path& path);
MaskedLogits load_payload(const std::filesystem::path& path);

/// Weight checkpoint ("LMPW", version 1): named layer records, each with
/// shape, float64 kernel and bias, and a CRC-32.
std::string encode_weights(const FusionWeights& weights);
FusionWeights decode_weights(std::string_view bytes);
void save_weights(const FusionWeights& weights, const std::filesystem::path& path);
FusionWeights load_weights(const std::filesystem::path& path);

}  // namespace occprior
