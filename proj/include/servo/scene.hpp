#pragma once

// Randomized cluster scenes from object point clouds, plus the occlusion
// machinery: voxel downsampling, spherical flipping, incremental 3D convex
// hull and hidden-points removal.

#include <array>
#include <string>
#include <vector>

#include "servo/geometry.hpp"

namespace servo {

struct ObjectModel {
    std::string id;
    std::vector<Eigen::Vector3d> points;  // object frame, meters
};

struct Cluster {
    std::string object_id;
    Pose pose;                             // object-to-world
    std::vector<Eigen::Vector3d> points;   // world frame
    Eigen::Vector3d centroid;              // arithmetic mean of points
};

struct Scene {
    CylinderRegion region;
    std::vector<Cluster> clusters;
    int total_budget = 512;  // N; sum of cluster sizes stays strictly below

    int total_points() const {
        int n = 0;
        for (const auto& c : clusters) n += static_cast<int>(c.points.size());
        return n;
    }
};

struct SceneGenParams {
    int min_clusters = 2;
    int max_clusters = 6;
    int min_cluster_points = 8;
    int max_cluster_points = 64;
    int total_budget = 512;
    double voxel_size = 0.01;  // meters, applied to models before selection
};

struct HprParams {
    double gamma = 100.0;  // flip radius multiplier, R = gamma * max|p|
};

// One output point per occupied voxel, at the centroid of that voxel's points.
std::vector<Eigen::Vector3d> voxel_downsample(const std::vector<Eigen::Vector3d>& points,
                                              double voxel_size);

Scene build_scene(const std::vector<ObjectModel>& models, const CylinderRegion& region,
                  const SceneGenParams& params, RngEngine& rng);

// p -> p + 2(R - |p|) * p/|p|. Requires |p| > 0 and R >= max|p|.
std::vector<Eigen::Vector3d> spherical_flip(const std::vector<Eigen::Vector3d>& points_cam,
                                            double R);

// Indices of points (camera frame) whose flipped images are convex-hull
// vertices of the flipped set plus the camera origin. Points with z <= 0 are
// never reported visible.
std::vector<int> hidden_points_removal(const std::vector<Eigen::Vector3d>& points_cam,
                                       const HprParams& params);

struct HullResult {
    std::vector<int> vertices;                // sorted indices of extreme points
    std::vector<std::array<int, 3>> faces;    // outward-oriented triangles (empty if degenerate)
    bool degenerate = false;                  // input was coplanar/collinear
};

// Incremental hull with deterministic insertion order. eps_scale multiplies
// the cloud extent to form the degeneracy threshold.
HullResult convex_hull_3d(const std::vector<Eigen::Vector3d>& points, double eps_scale = 1e-10);

// Object model I/O: plain text "x y z" per line, or little-endian float32 triples.
ObjectModel load_model_txt(const std::string& path);
ObjectModel load_model_bin(const std::string& path);
void save_model_txt(const ObjectModel& model, const std::string& path);
void save_model_bin(const ObjectModel& model, const std::string& path);
std::vector<ObjectModel> load_models_dir(const std::string& dir);

// Procedural stand-ins for scanned objects (sphere/box/cylinder/torus shells),
// deterministic under the rng.
std::vector<ObjectModel> synthetic_models(int count, int points_per_model, RngEngine& rng);

}  // namespace servo
