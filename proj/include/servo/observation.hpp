#pragma once

// Keypoint observation of a scene: projection with occlusion, coordinate and
// relative-depth normalization, depth-provider emulation and the three
// training augmentations (mismatch, dropout, uniform noise).

#include <limits>
#include <utility>
#include <vector>

#include "servo/scene.hpp"

namespace servo {

struct RawKeypoint {
    int point_id = -1;    // scene-wide identity
    int cluster_id = -1;
    Eigen::Vector2d pixel{0, 0};
    double depth = 0.0;   // metric Z in the camera frame
};

struct Keypoint {
    int point_id = -1;
    int cluster_id = -1;
    Eigen::Vector2d xy{0, 0};   // normalized image coordinates, [-1,1]^2
    double z_norm = 0.5;        // per-frame min-max normalized relative depth
    double metric_depth = 0.0;  // true Z, kept for the classical baseline
};

enum class DepthMode { TrueDepth, AffineRelative, CameraNoise };

struct DepthProvider {
    DepthMode mode = DepthMode::TrueDepth;
    double a = 1.0;         // scale, > 0 (affine-relative)
    double b = 0.0;         // offset, meters (affine-relative)
    double noise_amp = 0.0; // uniform noise amplitude, meters
    double range_cap = std::numeric_limits<double>::infinity();  // camera-noise cutoff
};

// Reported depth for a true Z; NaN marks a dropped measurement.
double provider_depth(const DepthProvider& provider, double true_z, RngEngine& rng);
inline bool provider_dropped(double reported) { return !(reported == reported); }

// Visible keypoints of the scene from a camera pose: frustum filter, hidden
// points removal, pinhole projection. point_ids number scene points in
// cluster-major order.
std::vector<RawKeypoint> project(const Scene& scene, const Pose& camera,
                                 const CameraIntrinsics& intr, const HprParams& hpr);

// Pixel coordinates to [-1,1]^2; provider-reported depths min-max normalized
// per frame (all 0.5 when fewer than two distinct depths survive). Keypoints
// whose provider measurement drops out are removed.
std::vector<Keypoint> normalize(const std::vector<RawKeypoint>& raw, const CameraIntrinsics& intr,
                                const DepthProvider& provider, RngEngine& rng);

struct ObservationPair {
    std::vector<Keypoint> current;
    std::vector<Keypoint> target;
    std::vector<std::pair<int, int>> matches;  // (current index, target index)
};

// Matches by point identity; lists and matches are sorted by (cluster, point_id).
ObservationPair match_observations(std::vector<Keypoint> current, std::vector<Keypoint> target);

struct AugmentationParams {
    double mismatch_ratio = 0.0;
    double dropout_ratio = 0.0;
    double noise_amplitude = 0.0;  // normalized-coordinate units, <= 0.1
};

// Rewires floor(mismatch_ratio*m) matches to wrong partners, drops
// floor(dropout_ratio*m) keypoints with their matches (never below 4 matches),
// then jitters surviving keypoint coordinates with uniform noise.
ObservationPair augment(const ObservationPair& pair, const AugmentationParams& params,
                        RngEngine& rng);

// Mean Euclidean error between matched current/target coordinates.
double mean_feature_error(const ObservationPair& pair);

}  // namespace servo
