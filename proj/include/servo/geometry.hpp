#pragma once

// Rigid-body poses, twists, pinhole camera model and pose sampling.
// Poses are camera-in-world transforms (unit quaternion + translation);
// twists are expressed in the camera (body) frame.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>

#include "servo/random.hpp"

namespace servo {

struct Pose {
    Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
    Eigen::Vector3d translation{0.0, 0.0, 0.0};

    static Pose identity() { return Pose{}; }

    // world point -> camera frame
    Eigen::Vector3d to_local(const Eigen::Vector3d& p_world) const {
        return rotation.conjugate() * (p_world - translation);
    }
    // camera-frame point -> world
    Eigen::Vector3d to_world(const Eigen::Vector3d& p_local) const {
        return rotation * p_local + translation;
    }
};

struct Twist {
    Eigen::Vector3d linear{0.0, 0.0, 0.0};
    Eigen::Vector3d angular{0.0, 0.0, 0.0};

    static Twist zero() { return Twist{}; }
    bool finite() const { return linear.allFinite() && angular.allFinite(); }
};

struct CameraIntrinsics {
    double fx = 525.0, fy = 525.0;
    double cx = 320.0, cy = 240.0;
    int width = 640, height = 480;
    double z_near = 0.1, z_far = 10.0;
};

struct CylinderRegion {
    double radius = 0.3;
    double height = 1.0;
    Eigen::Vector3d center{0.0, 0.0, 0.0};
};

enum class Level { S, M, L };

double level_deviation_deg(Level level);
const char* level_name(Level level);
Level level_from_name(const std::string& name);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

struct PoseError {
    double te = 0.0;      // meters
    double re_deg = 0.0;  // degrees, geodesic
};
PoseError pose_error(const Pose& current, const Pose& target);

// Advance a pose by the exponential map of v*dt, v given in the body frame.
Pose integrate_twist(const Pose& pose, const Twist& v, double dt);

// Rotation-vector exponential/logarithm (Taylor-guarded near zero).
Eigen::Quaterniond quat_exp(const Eigen::Vector3d& rotvec);
Eigen::Vector3d quat_log(const Eigen::Quaterniond& q);

struct DecoupledError {
    Eigen::Vector3d t_err;      // translation error in the current camera frame
    Eigen::Vector3d axis_angle; // log of the relative orientation
};
DecoupledError decoupled_log(const Pose& current, const Pose& target);

struct PosePair {
    Pose initial;
    Pose target;
};

// Samples a (initial, target) camera pair around the region. The target looks
// at the region center from a sphere of radius uniform in [1.2h, 2h]; the
// initial pose is perturbed from it by a rotation with geodesic angle uniform
// in [0.5*level, level] (tilt capped so the region stays in view, remainder
// taken as roll) and a translation uniform in [0.1, 0.4]*r.
PosePair sample_pose_pair(const CylinderRegion& region, Level level, RngEngine& rng);

// Geodesic interpolation: s=0 -> from, s=1 -> to.
Pose interpolate_pose(const Pose& from, const Pose& to, double s);

}  // namespace servo
