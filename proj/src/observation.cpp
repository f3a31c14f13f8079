#include "servo/observation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace servo {

double provider_depth(const DepthProvider& provider, double true_z, RngEngine& rng) {
    if (true_z <= 0.0) throw std::invalid_argument("provider_depth: true_z must be > 0");
    switch (provider.mode) {
        case DepthMode::TrueDepth:
            return true_z;
        case DepthMode::AffineRelative: {
            double noise = provider.noise_amp > 0.0
                               ? uniform(rng, -provider.noise_amp, provider.noise_amp)
                               : 0.0;
            return provider.a * true_z + provider.b + noise;
        }
        case DepthMode::CameraNoise: {
            if (true_z > provider.range_cap) return std::nan("");
            double noise = provider.noise_amp > 0.0
                               ? uniform(rng, -provider.noise_amp, provider.noise_amp)
                               : 0.0;
            return true_z + noise;
        }
    }
    return true_z;
}

std::vector<RawKeypoint> project(const Scene& scene, const Pose& camera,
                                 const CameraIntrinsics& intr, const HprParams& hpr) {
    std::vector<RawKeypoint> candidates;  // frustum survivors
    std::vector<Eigen::Vector3d> cam_points;
    int point_id = 0;
    for (int c = 0; c < static_cast<int>(scene.clusters.size()); ++c) {
        for (const auto& pw : scene.clusters[c].points) {
            const Eigen::Vector3d pc = camera.to_local(pw);
            const int id = point_id++;
            if (pc.z() < intr.z_near || pc.z() > intr.z_far) continue;
            const double u = intr.cx + intr.fx * pc.x() / pc.z();
            const double v = intr.cy + intr.fy * pc.y() / pc.z();
            if (u < 0.0 || u > intr.width || v < 0.0 || v > intr.height) continue;
            RawKeypoint kp;
            kp.point_id = id;
            kp.cluster_id = c;
            kp.pixel = {u, v};
            kp.depth = pc.z();
            candidates.push_back(kp);
            cam_points.push_back(pc);
        }
    }
    if (candidates.empty()) return {};

    const std::vector<int> visible = hidden_points_removal(cam_points, hpr);
    std::vector<RawKeypoint> out;
    out.reserve(visible.size());
    for (int i : visible) out.push_back(candidates[i]);
    return out;
}

std::vector<Keypoint> normalize(const std::vector<RawKeypoint>& raw, const CameraIntrinsics& intr,
                                const DepthProvider& provider, RngEngine& rng) {
    std::vector<Keypoint> out;
    std::vector<double> reported;
    out.reserve(raw.size());
    reported.reserve(raw.size());
    for (const auto& r : raw) {
        const double d = provider_depth(provider, r.depth, rng);
        if (provider_dropped(d)) continue;
        Keypoint kp;
        kp.point_id = r.point_id;
        kp.cluster_id = r.cluster_id;
        kp.xy = {2.0 * r.pixel.x() / intr.width - 1.0, 2.0 * r.pixel.y() / intr.height - 1.0};
        kp.metric_depth = r.depth;
        out.push_back(kp);
        reported.push_back(d);
    }
    if (out.empty()) return out;
    double lo = reported[0], hi = reported[0];
    for (double d : reported) {
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    const double range = hi - lo;
    for (size_t i = 0; i < out.size(); ++i)
        out[i].z_norm = range > 0.0 ? (reported[i] - lo) / range : 0.5;
    return out;
}

ObservationPair match_observations(std::vector<Keypoint> current, std::vector<Keypoint> target) {
    auto order = [](const Keypoint& a, const Keypoint& b) {
        if (a.cluster_id != b.cluster_id) return a.cluster_id < b.cluster_id;
        return a.point_id < b.point_id;
    };
    std::sort(current.begin(), current.end(), order);
    std::sort(target.begin(), target.end(), order);

    std::unordered_map<int, int> target_by_id;
    target_by_id.reserve(target.size());
    for (int j = 0; j < static_cast<int>(target.size()); ++j)
        target_by_id.emplace(target[j].point_id, j);

    ObservationPair pair;
    pair.current = std::move(current);
    pair.target = std::move(target);
    for (int i = 0; i < static_cast<int>(pair.current.size()); ++i) {
        auto it = target_by_id.find(pair.current[i].point_id);
        if (it != target_by_id.end()) pair.matches.emplace_back(i, it->second);
    }
    return pair;
}

ObservationPair augment(const ObservationPair& pair, const AugmentationParams& params,
                        RngEngine& rng) {
    ObservationPair out = pair;
    const int m = static_cast<int>(out.matches.size());
    if (m == 0) return out;

    // 1. Mismatch: rewire a fixed count of matches to wrong target partners.
    const int n_mismatch = static_cast<int>(std::floor(params.mismatch_ratio * m));
    if (n_mismatch > 0 && static_cast<int>(out.target.size()) > 1) {
        std::vector<int> pick(m);
        for (int i = 0; i < m; ++i) pick[i] = i;
        for (int i = 0; i < n_mismatch; ++i)
            std::swap(pick[i], pick[uniform_int(rng, i, m - 1)]);
        for (int i = 0; i < n_mismatch; ++i) {
            auto& match = out.matches[pick[i]];
            const int right_id = out.current[match.first].point_id;
            for (int attempt = 0; attempt < 16; ++attempt) {
                const int j = uniform_int(rng, 0, static_cast<int>(out.target.size()) - 1);
                if (out.target[j].point_id != right_id) {
                    match.second = j;
                    break;
                }
            }
        }
    }

    // 2. Dropout: remove keypoints together with their matches, keeping at
    // least 4 matches alive.
    const int n_drop_req = static_cast<int>(std::floor(params.dropout_ratio * m));
    const int n_drop = std::min(n_drop_req, std::max(0, m - 4));
    if (n_drop > 0) {
        std::vector<int> pick(m);
        for (int i = 0; i < m; ++i) pick[i] = i;
        for (int i = 0; i < n_drop; ++i)
            std::swap(pick[i], pick[uniform_int(rng, i, m - 1)]);
        std::vector<char> drop_match(m, 0);
        for (int i = 0; i < n_drop; ++i) drop_match[pick[i]] = 1;

        std::vector<char> keep_cur(out.current.size(), 1), keep_tgt(out.target.size(), 1);
        for (int i = 0; i < m; ++i) {
            if (!drop_match[i]) continue;
            keep_cur[out.matches[i].first] = 0;
            keep_tgt[out.matches[i].second] = 0;
        }
        std::vector<int> cur_map(out.current.size(), -1), tgt_map(out.target.size(), -1);
        std::vector<Keypoint> cur2, tgt2;
        for (size_t i = 0; i < out.current.size(); ++i)
            if (keep_cur[i]) {
                cur_map[i] = static_cast<int>(cur2.size());
                cur2.push_back(out.current[i]);
            }
        for (size_t i = 0; i < out.target.size(); ++i)
            if (keep_tgt[i]) {
                tgt_map[i] = static_cast<int>(tgt2.size());
                tgt2.push_back(out.target[i]);
            }
        std::vector<std::pair<int, int>> matches2;
        for (int i = 0; i < m; ++i) {
            if (drop_match[i]) continue;
            const int a = cur_map[out.matches[i].first];
            const int b = tgt_map[out.matches[i].second];
            if (a >= 0 && b >= 0) matches2.emplace_back(a, b);
        }
        out.current = std::move(cur2);
        out.target = std::move(tgt2);
        out.matches = std::move(matches2);
    }

    // 3. Uniform coordinate noise on surviving keypoints.
    if (params.noise_amplitude > 0.0) {
        const double amp = params.noise_amplitude;
        for (auto& kp : out.current)
            kp.xy += Eigen::Vector2d(uniform(rng, -amp, amp), uniform(rng, -amp, amp));
        for (auto& kp : out.target)
            kp.xy += Eigen::Vector2d(uniform(rng, -amp, amp), uniform(rng, -amp, amp));
    }
    return out;
}

double mean_feature_error(const ObservationPair& pair) {
    if (pair.matches.empty()) return std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& [i, j] : pair.matches)
        sum += (pair.current[i].xy - pair.target[j].xy).norm();
    return sum / static_cast<double>(pair.matches.size());
}

}  // namespace servo
