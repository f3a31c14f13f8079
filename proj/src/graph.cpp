#include "servo/graph.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <stdexcept>

namespace servo {

ServoGraph build_graph(const ObservationPair& pair) {
    if (pair.matches.empty()) throw std::runtime_error("build_graph: no matches (unservoable)");

    // Group matches by the current keypoint's cluster, sorted for determinism.
    std::map<int, std::vector<int>> by_cluster;  // cluster_id -> match indices
    for (int mi = 0; mi < static_cast<int>(pair.matches.size()); ++mi)
        by_cluster[pair.current[pair.matches[mi].first].cluster_id].push_back(mi);

    ServoGraph g;
    for (auto& [cluster_id, match_ids] : by_cluster) {
        std::sort(match_ids.begin(), match_ids.end(), [&](int a, int b) {
            return pair.current[pair.matches[a].first].point_id <
                   pair.current[pair.matches[b].first].point_id;
        });
        const int begin = static_cast<int>(g.nodes.size());
        GraphNode center;
        center.cluster_id = cluster_id;
        center.is_center = true;
        center.cur_z = 0.0;
        center.tgt_z = 0.0;
        for (int mi : match_ids) {
            const Keypoint& cur = pair.current[pair.matches[mi].first];
            const Keypoint& tgt = pair.target[pair.matches[mi].second];
            GraphNode node;
            node.cur_xy = cur.xy;
            node.tgt_xy = tgt.xy;
            node.cur_z = cur.z_norm;
            node.tgt_z = tgt.z_norm;
            node.metric_depth = cur.metric_depth;
            node.cluster_id = cluster_id;
            node.point_id = cur.point_id;
            g.nodes.push_back(node);
            center.cur_xy += node.cur_xy;
            center.tgt_xy += node.tgt_xy;
            center.cur_z += node.cur_z;
            center.tgt_z += node.tgt_z;
            center.metric_depth += node.metric_depth;
        }
        const double inv = 1.0 / static_cast<double>(match_ids.size());
        center.cur_xy *= inv;
        center.tgt_xy *= inv;
        center.cur_z *= inv;
        center.tgt_z *= inv;
        center.metric_depth *= inv;
        const int center_idx = static_cast<int>(g.nodes.size());
        g.nodes.push_back(center);
        g.cluster_ranges.emplace_back(begin, center_idx + 1);
        g.center_index.push_back(center_idx);

        // Full intra connectivity: member<->member and member<->center.
        for (int i = begin; i <= center_idx; ++i) {
            for (int j = begin; j <= center_idx; ++j) {
                if (i != j) g.intra_edges.emplace_back(i, j);
            }
        }
    }

    for (size_t a = 0; a < g.center_index.size(); ++a) {
        for (size_t b = 0; b < g.center_index.size(); ++b) {
            if (a != b) g.inter_edges.emplace_back(g.center_index[a], g.center_index[b]);
        }
    }
    return g;
}

GraphStats graph_stats(const ServoGraph& g) {
    GraphStats s;
    s.node_count = static_cast<int>(g.nodes.size());
    s.intra_count = static_cast<int>(g.intra_edges.size());
    s.inter_count = static_cast<int>(g.inter_edges.size());
    for (int c = 0; c < g.num_clusters(); ++c) s.cluster_sizes.push_back(g.members_in(c));
    return s;
}

uint64_t graph_hash(const ServoGraph& g) {
    uint64_t h = mix64(g.nodes.size());
    auto feed = [&h](double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = seed_combine(h, bits);
    };
    for (const auto& n : g.nodes) {
        feed(n.cur_xy.x());
        feed(n.cur_xy.y());
        feed(n.tgt_xy.x());
        feed(n.tgt_xy.y());
        feed(n.cur_z);
        feed(n.tgt_z);
        h = seed_combine(h, static_cast<uint64_t>(n.cluster_id + 1));
        h = seed_combine(h, static_cast<uint64_t>(n.point_id + 2));
        h = seed_combine(h, n.is_center ? 7 : 3);
    }
    for (const auto& [a, b] : g.intra_edges) h = seed_combine(h, (uint64_t(a) << 20) ^ uint64_t(b));
    for (const auto& [a, b] : g.inter_edges) h = seed_combine(h, (uint64_t(a) << 40) ^ uint64_t(b));
    return h;
}

}  // namespace servo
