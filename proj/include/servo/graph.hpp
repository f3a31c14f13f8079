#pragma once

// Intra-/inter-cluster graph over matched keypoints: one node per match, a
// virtual mean node per cluster, full intra connectivity and pairwise
// center-to-center links. All edges are directed and stored symmetrically.

#include <cstdint>
#include <utility>
#include <vector>

#include "servo/observation.hpp"

namespace servo {

struct GraphNode {
    Eigen::Vector2d cur_xy{0, 0};
    Eigen::Vector2d tgt_xy{0, 0};
    double cur_z = 0.5;
    double tgt_z = 0.5;
    double metric_depth = 0.0;
    int cluster_id = -1;
    int point_id = -1;     // -1 for virtual centers
    bool is_center = false;
};

struct ServoGraph {
    std::vector<GraphNode> nodes;
    std::vector<std::pair<int, int>> intra_edges;  // within clusters, (src, dst)
    std::vector<std::pair<int, int>> inter_edges;  // between center nodes
    std::vector<std::pair<int, int>> cluster_ranges;  // node [begin, end) per cluster
    std::vector<int> center_index;                    // per cluster

    int num_clusters() const { return static_cast<int>(cluster_ranges.size()); }
    int members_in(int cluster) const {
        return cluster_ranges[cluster].second - cluster_ranges[cluster].first - 1;
    }
};

// One node per match, ordered by (cluster of the current keypoint, point_id);
// each cluster's virtual center node closes its range. Throws on zero matches.
ServoGraph build_graph(const ObservationPair& pair);

struct GraphStats {
    int node_count = 0;
    int intra_count = 0;
    int inter_count = 0;
    std::vector<int> cluster_sizes;  // member counts, centers excluded
};

GraphStats graph_stats(const ServoGraph& g);

// Stable content hash of node ordering and raw channels, for golden tests.
uint64_t graph_hash(const ServoGraph& g);

}  // namespace servo
