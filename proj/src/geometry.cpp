#include "servo/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace servo {

double level_deviation_deg(Level level) {
    switch (level) {
        case Level::S: return 24.06;
        case Level::M: return 67.38;
        case Level::L: return 136.46;
    }
    return 0.0;
}

const char* level_name(Level level) {
    switch (level) {
        case Level::S: return "S";
        case Level::M: return "M";
        case Level::L: return "L";
    }
    return "?";
}

Level level_from_name(const std::string& name) {
    if (name == "S" || name == "s") return Level::S;
    if (name == "M" || name == "m") return Level::M;
    if (name == "L" || name == "l") return Level::L;
    throw std::invalid_argument("unknown level: " + name);
}

Pose compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = (a.rotation * b.rotation).normalized();
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

Pose inverse(const Pose& p) {
    Pose out;
    out.rotation = p.rotation.conjugate();
    out.translation = -(out.rotation * p.translation);
    return out;
}

PoseError pose_error(const Pose& current, const Pose& target) {
    PoseError e;
    e.te = (current.translation - target.translation).norm();
    // geodesic angle 2*acos(|w|), evaluated in the atan2 form which stays
    // well conditioned near zero
    const Eigen::Quaterniond rel = current.rotation.conjugate() * target.rotation;
    const double vn = rel.vec().norm();
    e.re_deg = 2.0 * std::atan2(vn, std::abs(rel.w())) * 180.0 / M_PI;
    return e;
}

Eigen::Quaterniond quat_exp(const Eigen::Vector3d& rotvec) {
    const double theta = rotvec.norm();
    const double half = 0.5 * theta;
    double k;  // sin(half)/theta
    if (theta < 1e-8) {
        k = 0.5 - theta * theta / 48.0;
    } else {
        k = std::sin(half) / theta;
    }
    Eigen::Quaterniond q(std::cos(half), k * rotvec.x(), k * rotvec.y(), k * rotvec.z());
    return q.normalized();
}

Eigen::Vector3d quat_log(const Eigen::Quaterniond& q_in) {
    Eigen::Quaterniond q = q_in.normalized();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();  // shortest arc
    const Eigen::Vector3d v(q.x(), q.y(), q.z());
    const double vn = v.norm();
    if (vn < 1e-12) return 2.0 * v;
    const double theta = 2.0 * std::atan2(vn, q.w());
    return (theta / vn) * v;
}

Pose integrate_twist(const Pose& pose, const Twist& v, double dt) {
    // Full SE(3) exponential: n steps of a constant body twist then composes
    // to the single closed-form screw.
    const Eigen::Vector3d w = v.angular * dt;
    const Eigen::Vector3d u = v.linear * dt;
    const double theta = w.norm();
    Pose delta;
    delta.rotation = quat_exp(w);
    if (theta < 1e-10) {
        delta.translation = u;
    } else {
        const Eigen::Vector3d a = w / theta;
        Eigen::Matrix3d ax;
        ax << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
        const Eigen::Matrix3d V = Eigen::Matrix3d::Identity() +
                                  ((1.0 - std::cos(theta)) / theta) * ax +
                                  ((theta - std::sin(theta)) / theta) * ax * ax;
        delta.translation = V * u;
    }
    Pose out = compose(pose, delta);
    out.rotation.normalize();
    return out;
}

DecoupledError decoupled_log(const Pose& current, const Pose& target) {
    DecoupledError e;
    e.t_err = current.rotation.conjugate() * (target.translation - current.translation);
    e.axis_angle = quat_log(current.rotation.conjugate() * target.rotation);
    return e;
}

namespace {

Eigen::Vector3d random_unit_vector(RngEngine& rng) {
    // Uniform on the sphere via z + azimuth.
    const double z = uniform(rng, -1.0, 1.0);
    const double phi = uniform(rng, 0.0, 2.0 * M_PI);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

// Camera orientation whose +z axis points from `eye` toward `at`, with a roll
// angle about the optical axis.
Eigen::Quaterniond look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& at, double roll) {
    Eigen::Vector3d z = (at - eye).normalized();
    Eigen::Vector3d up(0.0, 0.0, 1.0);
    if (std::abs(z.dot(up)) > 0.99) up = Eigen::Vector3d(0.0, 1.0, 0.0);
    Eigen::Vector3d x = up.cross(z).normalized();
    Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    Eigen::Quaterniond q(r);
    return (q * quat_exp(Eigen::Vector3d(0.0, 0.0, roll))).normalized();
}

}  // namespace

PosePair sample_pose_pair(const CylinderRegion& region, Level level, RngEngine& rng) {
    const double dev_rad = level_deviation_deg(level) * M_PI / 180.0;

    PosePair pair;
    const double dist = uniform(rng, 1.2 * region.height, 2.0 * region.height);
    Eigen::Vector3d dir = random_unit_vector(rng);
    pair.target.translation = region.center + dist * dir;
    pair.target.rotation = look_at(pair.target.translation, region.center, uniform(rng, 0.0, 2.0 * M_PI));

    // Relative rotation with total geodesic angle alpha: a bounded tilt off the
    // optical axis composed with roll about it. Tilt is capped so the perturbed
    // camera still faces the region even at the L deviation.
    const double alpha = uniform(rng, 0.5 * dev_rad, dev_rad);
    constexpr double kTiltCap = 15.0 * M_PI / 180.0;
    const double beta = std::min(alpha, kTiltCap) * uniform(rng, 0.0, 1.0);
    // Orthogonal-axis composition: cos(alpha/2) = cos(beta/2) * cos(gamma/2).
    const double cg = std::cos(0.5 * alpha) / std::cos(0.5 * beta);
    const double gamma = 2.0 * std::acos(std::min(1.0, cg));
    const double tilt_dir = uniform(rng, 0.0, 2.0 * M_PI);
    const Eigen::Vector3d tilt_axis(std::cos(tilt_dir), std::sin(tilt_dir), 0.0);
    const double roll_sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    Eigen::Quaterniond q_rel =
        quat_exp(beta * tilt_axis) * quat_exp(Eigen::Vector3d(0.0, 0.0, roll_sign * gamma));

    const double t_off = uniform(rng, 0.1, 0.4) * region.radius;
    Eigen::Vector3d t_dir = random_unit_vector(rng);

    pair.initial.rotation = (pair.target.rotation * q_rel).normalized();
    pair.initial.translation = pair.target.translation + t_off * t_dir;
    return pair;
}

Pose interpolate_pose(const Pose& from, const Pose& to, double s) {
    Pose out;
    out.rotation = from.rotation.slerp(s, to.rotation).normalized();
    out.translation = (1.0 - s) * from.translation + s * to.translation;
    return out;
}

}  // namespace servo
