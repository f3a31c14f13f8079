#pragma once

// Training-set generation: randomized scenes, pose pairs spread along the
// approach path, teacher rollouts with bounded exploration noise.

#include "servo/control.hpp"
#include "servo/sim.hpp"

namespace servo {

struct DataGenConfig {
    int num_scenes = 2000;
    int steps_per_episode = 16;
    std::vector<Level> levels{Level::S, Level::M, Level::L};
    double teacher_lambda = 2.5;
    double dt = 0.04;
    double v_max = 0.5;
    double w_max = 1.0;
    DepthProvider provider;  // true depth by default
    HprParams hpr;
    CameraIntrinsics intr;
    CylinderRegion region;
    SceneGenParams scene_params;
    // Start poses are geodesically interpolated toward the target (a mixture
    // of full-deviation, uniform and near-goal starts); the rollout perturbs
    // the applied command to broaden the visited state distribution.
    bool interpolate_start = true;
    double rollout_noise_v = 0.05;  // m/s, uniform per axis
    double rollout_noise_w = 0.10;  // rad/s
    int min_matches = 4;
    int max_pose_retries = 10;
    int workers = 0;
    uint64_t seed = 1;
};

Dataset generate_dataset(const std::vector<ObjectModel>& models, const DataGenConfig& cfg,
                         const std::function<void(int, int)>& progress = nullptr);

}  // namespace servo
