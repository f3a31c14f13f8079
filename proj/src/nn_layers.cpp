#include "servo/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace servo::nn {

ParamStore::ParamStore(uint64_t seed) : seed_(seed), init_rng_(substream(seed, {stream::kInit})) {}

TensorPtr ParamStore::create(const std::string& name, int rows, int cols, int fan_in,
                             double init_gain) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    const double bound = init_gain / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    Eigen::MatrixXd v(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) v(i, j) = uniform(init_rng_, -bound, bound);
    auto t = make_tensor(std::move(v), true);
    params_.emplace(name, t);
    order_.push_back(name);
    return t;
}

TensorPtr ParamStore::zeros(const std::string& name, int rows, int cols) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    auto t = make_tensor(Eigen::MatrixXd::Zero(rows, cols), true);
    params_.emplace(name, t);
    order_.push_back(name);
    return t;
}

TensorPtr ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return params_.count(name) > 0; }

void ParamStore::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << "SERVOCKPT 1\n";
    out << "seed " << seed_ << "\n";
    for (const auto& [k, v] : meta) out << "meta " << k << " " << v << "\n";
    for (const auto& name : order_) {
        const auto& t = params_.at(name);
        out << "tensor " << name << " " << t->rows() << " " << t->cols() << "\n";
    }
    out << "data\n";
    for (const auto& name : order_) {
        const auto& t = params_.at(name);
        for (int i = 0; i < t->rows(); ++i) {
            for (int j = 0; j < t->cols(); ++j) {
                const float f = static_cast<float>(t->value(i, j));
                out.write(reinterpret_cast<const char*>(&f), sizeof(f));
            }
        }
    }
}

namespace {

struct CheckpointHeader {
    uint64_t seed = 0;
    std::map<std::string, std::string> meta;
    std::vector<std::tuple<std::string, int, int>> tensors;
    std::streampos data_start;
};

CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
    CheckpointHeader h;
    std::string line;
    if (!std::getline(in, line) || line != "SERVOCKPT 1")
        throw std::runtime_error("bad checkpoint header: " + path);
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "seed") {
            ss >> h.seed;
        } else if (tag == "meta") {
            std::string k, v;
            ss >> k;
            std::getline(ss, v);
            if (!v.empty() && v[0] == ' ') v.erase(0, 1);
            h.meta[k] = v;
        } else if (tag == "tensor") {
            std::string name;
            int r, c;
            ss >> name >> r >> c;
            h.tensors.emplace_back(name, r, c);
        } else {
            throw std::runtime_error("bad checkpoint line: " + line);
        }
    }
    h.data_start = in.tellg();
    return h;
}

}  // namespace

void ParamStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    CheckpointHeader h = read_header(in, path);
    meta = h.meta;
    seed_ = h.seed;
    for (const auto& [name, r, c] : h.tensors) {
        auto it = params_.find(name);
        if (it == params_.end())
            throw std::runtime_error("checkpoint tensor not in model: " + name);
        auto& t = it->second;
        if (t->rows() != r || t->cols() != c)
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                float f;
                in.read(reinterpret_cast<char*>(&f), sizeof(f));
                t->value(i, j) = static_cast<double>(f);
            }
        }
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
}

ParamStore ParamStore::clone(bool with_grad) const {
    ParamStore out(seed_);
    out.meta = meta;
    for (const auto& name : order_) {
        const auto& t = params_.at(name);
        auto copy = make_tensor(t->value, with_grad);
        out.params_.emplace(name, copy);
        out.order_.push_back(name);
    }
    return out;
}

std::map<std::string, std::string> read_checkpoint_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    CheckpointHeader h = read_header(in, path);
    auto meta = h.meta;
    meta["seed"] = std::to_string(h.seed);
    return meta;
}

Linear Linear::create(ParamStore& ps, const std::string& name, int in, int out,
                      double init_gain) {
    Linear l;
    l.w = ps.create(name + ".w", in, out, in, init_gain);
    l.b = ps.zeros(name + ".b", 1, out);
    return l;
}

Mlp Mlp::create(ParamStore& ps, const std::string& name, int in, int hidden, int out,
                double last_gain) {
    Mlp m;
    m.l1 = Linear::create(ps, name + ".1", in, hidden);
    m.l2 = Linear::create(ps, name + ".2", hidden, out, last_gain);
    return m;
}

const char* fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::Cluster: return "cluster";
        case FusionMode::Full: return "full";
        case FusionMode::Concat: return "concat";
    }
    return "?";
}

FusionMode fusion_mode_from_name(const std::string& name) {
    if (name == "cluster") return FusionMode::Cluster;
    if (name == "full") return FusionMode::Full;
    if (name == "concat") return FusionMode::Concat;
    throw std::invalid_argument("unknown fusion mode: " + name);
}

uint64_t fusion_madds(FusionMode mode, const std::vector<int>& block_sizes, int d) {
    if (mode == FusionMode::Concat) return 0;
    uint64_t total = 0;
    if (mode == FusionMode::Full) {
        uint64_t n = 0;
        for (int b : block_sizes) n += static_cast<uint64_t>(b);
        return 4ull * n * n * static_cast<uint64_t>(d);
    }
    for (int b : block_sizes)
        total += 4ull * static_cast<uint64_t>(b) * static_cast<uint64_t>(b) *
                 static_cast<uint64_t>(d);
    return total;
}

FusionModule FusionModule::create(ParamStore& ps, FusionMode mode, int pos_in, int z_in, int d,
                                  int d_z) {
    FusionModule f;
    f.mode = mode;
    f.d = d;
    f.d_z = d_z;
    f.fal_pos = Linear::create(ps, "fal_pos", pos_in, d);
    f.fal_z = Linear::create(ps, "fal_z", z_in, d);
    f.phi_mlp = Mlp::create(ps, "phi", d, d, d_z);
    return f;
}

namespace {

// One reciprocal cross-attention block. Row softmax of the score weights the
// depth features; the transposed column softmax weights the coordinate
// features, so every output row is a convex mixture.
TensorPtr attention_block(const TensorPtr& xp, const TensorPtr& xz) {
    TensorPtr score = matmul(xp, transpose_t(xz));
    TensorPtr a_z = softmax_rows(score);
    TensorPtr a_pos = softmax_rows(transpose_t(score));  // = column-softmax, transposed
    return concat_cols({matmul(a_z, xz), matmul(a_pos, xp)});
}

}  // namespace

FusionResult FusionModule::apply(const TensorPtr& pos_raw, const TensorPtr& z_raw,
                                 const std::vector<std::pair<int, int>>& blocks) const {
    const int n = pos_raw->rows();
    if (n == 0) throw std::runtime_error("fusion: empty input");
    TensorPtr xp = tanh_t(fal_pos.apply(pos_raw));
    TensorPtr xz = tanh_t(fal_z.apply(z_raw));

    FusionResult out;
    std::vector<int> sizes;
    switch (mode) {
        case FusionMode::Concat:
            out.fused = concat_cols({xz, xp});
            break;
        case FusionMode::Full:
            out.fused = attention_block(xp, xz);
            sizes.push_back(n);
            break;
        case FusionMode::Cluster: {
            std::vector<TensorPtr> parts;
            parts.reserve(blocks.size());
            for (const auto& [b, e] : blocks) {
                if (e <= b) continue;
                parts.push_back(
                    attention_block(slice_rows(xp, b, e), slice_rows(xz, b, e)));
                sizes.push_back(e - b);
            }
            if (parts.empty()) throw std::runtime_error("fusion: all blocks empty");
            out.fused = concat_rows(parts);
            break;
        }
    }
    out.madds = fusion_madds(mode, sizes, d);
    out.phi_z = phi_mlp.apply(mean_rows(slice_cols(out.fused, 0, d)));
    return out;
}

IntraAggregator IntraAggregator::create(ParamStore& ps, const std::string& name, int width) {
    IntraAggregator a;
    a.q = Linear::create(ps, name + ".q", width, width);
    a.k = Linear::create(ps, name + ".k", width, width);
    a.v = Linear::create(ps, name + ".v", width, width);
    a.pos_k = ps.create(name + ".pk", kRelBasis, width, kRelBasis);
    a.pos_v = ps.create(name + ".pv", kRelBasis, width, kRelBasis);
    a.w_out = ps.create(name + ".out", width, width, width);
    return a;
}

// Quadratic polynomial basis of the relative raw channels. The second-order
// monomials span the pairwise expansion/curl/shear moments of the match
// displacement field, which linear-then-tanh features cannot represent.
Eigen::MatrixXd relative_position_basis(const Eigen::MatrixXd& pos_raw,
                                        const std::vector<std::pair<int, int>>& edges) {
    Eigen::MatrixXd rel(static_cast<int>(edges.size()), kRelBasis);
    for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
        const auto& [s, t] = edges[e];
        const Eigen::RowVector4d d = pos_raw.row(t) - pos_raw.row(s);
        int c = 0;
        for (int i = 0; i < 4; ++i) rel(e, c++) = d(i);
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j) rel(e, c++) = d(i) * d(j);
    }
    return rel;
}

TensorPtr IntraAggregator::apply(const ServoGraph& g, const TensorPtr& feats,
                                 const TensorPtr& pos_raw) const {
    if (g.intra_edges.empty()) return feats;
    const int n = feats->rows();
    std::vector<int> src, dst;
    src.reserve(g.intra_edges.size());
    dst.reserve(g.intra_edges.size());
    for (const auto& [s, t] : g.intra_edges) {
        src.push_back(s);
        dst.push_back(t);
    }
    TensorPtr qv = q.apply(feats), kv = k.apply(feats), vv = v.apply(feats);
    // raw channels carry no gradient; the edge basis is plain data
    Eigen::MatrixXd rel = relative_position_basis(pos_raw->value, g.intra_edges);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(feats->cols()));

    // logit_e = q[dst] . (k[src] + rel_e * pos_k); the positional part
    // contracts as (q * pos_k^T) . rel_e, one 14-dot per edge
    TensorPtr q_pos = matmul(qv, transpose_t(pos_k));  // n x kRelBasis
    std::vector<int> iota(src.size());
    for (size_t e = 0; e < iota.size(); ++e) iota[e] = static_cast<int>(e);
    TensorPtr logits =
        scale(add(edge_dot(qv, kv, src, dst), edge_dot(q_pos, make_tensor(rel), iota, dst)),
              inv_sqrt);
    TensorPtr weights = segment_softmax(logits, dst, n);

    // sum_e w_e (v[src] + rel_e * pos_v) = weighted feature sum + pos_v applied
    // to the weighted relative basis, by linearity
    TensorPtr agg = add(edge_weighted_sum(vv, weights, src, dst, n),
                        matmul(edge_weighted_const_sum(rel, weights, dst, n), pos_v));
    return add(feats, matmul(agg, w_out));
}

InterAggregator InterAggregator::create(ParamStore& ps, const std::string& name, int width) {
    InterAggregator a;
    a.edge_mlp = Mlp::create(ps, name + ".mlp", 2 * width, width, width);
    return a;
}

TensorPtr InterAggregator::apply(const ServoGraph& g, const TensorPtr& feats) const {
    if (g.inter_edges.empty()) return feats;
    const int n_clusters = g.num_clusters();
    std::vector<int> cluster_of_center(feats->rows(), -1);
    for (int c = 0; c < n_clusters; ++c) cluster_of_center[g.center_index[c]] = c;

    std::vector<int> src, seg;
    src.reserve(g.inter_edges.size());
    seg.reserve(g.inter_edges.size());
    std::vector<int> dst;
    dst.reserve(g.inter_edges.size());
    for (const auto& [s, t] : g.inter_edges) {
        src.push_back(s);
        dst.push_back(t);
        seg.push_back(cluster_of_center[t]);
    }
    TensorPtr fc = gather_rows(feats, dst);
    TensorPtr fo = gather_rows(feats, src);
    TensorPtr h = edge_mlp.apply(concat_cols({fc, sub(fo, fc)}));
    TensorPtr delta_centers = segment_max_rows(h, seg, n_clusters);  // per-cluster update

    std::vector<int> cluster_of_node(feats->rows(), 0);
    for (int c = 0; c < n_clusters; ++c) {
        for (int i = g.cluster_ranges[c].first; i < g.cluster_ranges[c].second; ++i)
            cluster_of_node[i] = c;
    }
    return add(feats, gather_rows(delta_centers, cluster_of_node));
}

GruCell GruCell::create(ParamStore& ps, const std::string& name, int in, int hidden) {
    GruCell c;
    c.hidden = hidden;
    c.wz = Linear::create(ps, name + ".wz", in, hidden);
    c.wr = Linear::create(ps, name + ".wr", in, hidden);
    c.wh = Linear::create(ps, name + ".wh", in, hidden);
    c.uz = ps.create(name + ".uz", hidden, hidden, hidden);
    c.ur = ps.create(name + ".ur", hidden, hidden, hidden);
    c.uh = ps.create(name + ".uh", hidden, hidden, hidden);
    return c;
}

TensorPtr GruCell::step(const TensorPtr& h, const TensorPtr& x) const {
    TensorPtr z = sigmoid_t(add(wz.apply(x), matmul(h, uz)));
    TensorPtr r = sigmoid_t(add(wr.apply(x), matmul(h, ur)));
    TensorPtr hbar = tanh_t(add(wh.apply(x), matmul(cmul(r, h), uh)));
    TensorPtr one_minus_z = add_scalar(scale(z, -1.0), 1.0);
    return add(cmul(z, h), cmul(one_minus_z, hbar));
}

}  // namespace servo::nn
