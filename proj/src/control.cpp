#include "servo/control.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace servo {

IbvsResult ibvs_velocity(const ObservationPair& pair, const CameraIntrinsics& intr,
                         const IbvsConfig& cfg) {
    const int m = static_cast<int>(pair.matches.size());
    if (m < 3) throw std::runtime_error("ibvs_velocity: need at least 3 matches");

    Eigen::MatrixXd L(2 * m, 6);
    Eigen::VectorXd e(2 * m);
    for (int i = 0; i < m; ++i) {
        const Keypoint& cur = pair.current[pair.matches[i].first];
        const Keypoint& tgt = pair.target[pair.matches[i].second];
        // normalized [-1,1] back to pinhole-normalized coordinates
        const double u = (cur.xy.x() + 1.0) * 0.5 * intr.width;
        const double v = (cur.xy.y() + 1.0) * 0.5 * intr.height;
        const double x = (u - intr.cx) / intr.fx;
        const double y = (v - intr.cy) / intr.fy;
        const double ut = (tgt.xy.x() + 1.0) * 0.5 * intr.width;
        const double vt = (tgt.xy.y() + 1.0) * 0.5 * intr.height;
        const double xt = (ut - intr.cx) / intr.fx;
        const double yt = (vt - intr.cy) / intr.fy;
        const double z = cfg.use_true_depth ? std::max(1e-6, cur.metric_depth)
                                            : cfg.constant_depth;
        L.row(2 * i) << -1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y;
        L.row(2 * i + 1) << 0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x;
        e(2 * i) = x - xt;
        e(2 * i + 1) = y - yt;
    }

    Eigen::MatrixXd lhs = L.transpose() * L;
    lhs.diagonal().array() += cfg.mu * cfg.mu;
    const Eigen::VectorXd sol = lhs.ldlt().solve(L.transpose() * e);
    const Eigen::VectorXd vel = -cfg.lambda * sol;

    IbvsResult out;
    out.twist.linear = vel.head<3>();
    out.twist.angular = vel.tail<3>();
    const auto svd = L.jacobiSvd();
    out.low_rank = svd.singularValues().minCoeff() <
                   1e-8 * std::max(1.0, svd.singularValues().maxCoeff());
    return out;
}

Twist teacher_velocity(const Pose& current, const Pose& target, double lambda) {
    const DecoupledError err = decoupled_log(current, target);
    Twist v;
    v.linear = lambda * err.t_err;
    v.angular = lambda * err.axis_angle;
    return v;
}

Twist clamp_twist(const Twist& v, double v_max, double w_max) {
    Twist out = v;
    const double vn = out.linear.norm();
    if (vn > v_max) out.linear *= v_max / vn;
    const double wn = out.angular.norm();
    if (wn > w_max) out.angular *= w_max / wn;
    return out;
}

// --- learned controller -------------------------------------------------------

namespace nn_ = servo::nn;

nn_::TensorPtr graph_pos_channels(const ServoGraph& g) {
    Eigen::MatrixXd m(static_cast<int>(g.nodes.size()), 4);
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
        const auto& n = g.nodes[i];
        m.row(i) << n.cur_xy.x(), n.cur_xy.y(), n.tgt_xy.x(), n.tgt_xy.y();
    }
    return nn_::make_tensor(std::move(m));
}

nn_::TensorPtr graph_z_channels(const ServoGraph& g) {
    Eigen::MatrixXd m(static_cast<int>(g.nodes.size()), 2);
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i)
        m.row(i) << g.nodes[i].cur_z, g.nodes[i].tgt_z;
    return nn_::make_tensor(std::move(m));
}

DepthPcModel::DepthPcModel(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), store_(seed) {
    bind_layers();
    store_.meta["fusion"] = nn_::fusion_mode_name(cfg_.fusion);
    store_.meta["d"] = std::to_string(cfg_.d);
    store_.meta["d_z"] = std::to_string(cfg_.d_z);
    store_.meta["hidden"] = std::to_string(cfg_.hidden);
    store_.meta["head_hidden"] = std::to_string(cfg_.head_hidden);
    store_.meta["v_max"] = std::to_string(cfg_.v_max);
    store_.meta["w_max"] = std::to_string(cfg_.w_max);
}

DepthPcModel::DepthPcModel(const ModelConfig& cfg, nn_::ParamStore store)
    : cfg_(cfg), store_(std::move(store)) {
    bind_layers();
}

void DepthPcModel::bind_layers() {
    const int w = cfg_.width();
    fusion_ = nn_::FusionModule::create(store_, cfg_.fusion, cfg_.pos_channels(),
                                        cfg_.z_channels(), cfg_.d, cfg_.d_z);
    intra_ = nn_::IntraAggregator::create(store_, "intra", w);
    inter_ = nn_::InterAggregator::create(store_, "inter", w);
    gru_ = nn_::GruCell::create(store_, "gru", w + cfg_.d_z, cfg_.hidden);
    head_linear_ = nn_::Mlp::create(store_, "head_lin", cfg_.hidden, cfg_.head_hidden, 3);
    head_angular_ = nn_::Mlp::create(store_, "head_ang", cfg_.hidden, cfg_.head_hidden, 3);
}

nn_::TensorPtr DepthPcModel::initial_hidden() const {
    return nn_::make_tensor(Eigen::MatrixXd::Zero(1, cfg_.hidden));
}

DepthPcModel::Forward DepthPcModel::forward(const ServoGraph& graph,
                                            const nn_::TensorPtr& hidden) const {
    if (graph.nodes.empty()) throw std::runtime_error("depth_pc_forward: empty graph");
    nn_::TensorPtr pos_raw = graph_pos_channels(graph);
    nn_::TensorPtr z_raw = graph_z_channels(graph);

    nn_::FusionResult fusion = fusion_.apply(pos_raw, z_raw, graph.cluster_ranges);
    nn_::TensorPtr x = intra_.apply(graph, fusion.fused, pos_raw);
    x = inter_.apply(graph, x);
    nn_::TensorPtr pooled = nn_::mean_rows(x);
    nn_::TensorPtr state_in = nn_::concat_cols({pooled, fusion.phi_z});
    nn_::TensorPtr h = gru_.step(hidden, state_in);

    Forward out;
    out.linear = head_linear_.apply(h);
    out.angular = head_angular_.apply(h);
    out.hidden = h;
    out.fusion_madds = fusion.madds;
    Twist raw;
    raw.linear = out.linear->value.row(0).transpose();
    raw.angular = out.angular->value.row(0).transpose();
    out.twist = clamp_twist(raw, cfg_.v_max, cfg_.w_max);
    return out;
}

void DepthPcModel::save(const std::string& path) const { store_.save(path); }

DepthPcModel DepthPcModel::load(const std::string& path) {
    const auto meta = nn_::read_checkpoint_meta(path);
    ModelConfig cfg;
    cfg.fusion = nn_::fusion_mode_from_name(meta.at("fusion"));
    cfg.d = std::stoi(meta.at("d"));
    cfg.d_z = std::stoi(meta.at("d_z"));
    cfg.hidden = std::stoi(meta.at("hidden"));
    cfg.head_hidden = std::stoi(meta.at("head_hidden"));
    cfg.v_max = std::stod(meta.at("v_max"));
    cfg.w_max = std::stod(meta.at("w_max"));
    DepthPcModel model(cfg, std::stoull(meta.at("seed")));
    model.store_.load(path);
    return model;
}

DepthPcModel DepthPcModel::clone(bool with_grad) const {
    return DepthPcModel(cfg_, store_.clone(with_grad));
}

}  // namespace servo
