#pragma once

// Layer set of the servo controller: feature alignment, the three fusion
// variants (per-cluster cross attention, global cross attention, plain
// concatenation), intra-/inter-cluster graph aggregation, a gated recurrent
// cell and small perceptrons, all over named parameters with checkpoint I/O.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "servo/graph.hpp"
#include "servo/nn/tensor.hpp"

namespace servo::nn {

// Named parameter tensors with deterministic, seed-controlled initialization
// (uniform, scaled by 1/sqrt(fan_in)). Creation order fixes the init stream.
class ParamStore {
  public:
    explicit ParamStore(uint64_t seed);

    // Uniform init over +-init_gain/sqrt(fan_in); reuses an existing entry.
    TensorPtr create(const std::string& name, int rows, int cols, int fan_in,
                     double init_gain = 1.0);
    TensorPtr zeros(const std::string& name, int rows, int cols);
    TensorPtr get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    uint64_t seed() const { return seed_; }

    std::map<std::string, std::string> meta;  // echoed into checkpoint manifests

    // Single-file checkpoint: text manifest (meta + tensor shapes) followed by
    // row-major little-endian float32 data. Round-trips bit-exactly.
    void save(const std::string& path) const;
    void load(const std::string& path);  // fills existing tensors, shape-checked

    // Deep copy; with_grad=false detaches parameters from the tape (inference).
    ParamStore clone(bool with_grad = true) const;

  private:
    uint64_t seed_;
    RngEngine init_rng_;
    std::vector<std::string> order_;
    std::map<std::string, TensorPtr> params_;
};

// Reads only the manifest of a checkpoint (meta key/values).
std::map<std::string, std::string> read_checkpoint_meta(const std::string& path);

struct Linear {
    TensorPtr w, b;
    static Linear create(ParamStore& ps, const std::string& name, int in, int out,
                         double init_gain = 1.0);
    TensorPtr apply(const TensorPtr& x) const { return affine(x, w, b); }
};

struct Mlp {
    Linear l1, l2;
    static Mlp create(ParamStore& ps, const std::string& name, int in, int hidden, int out,
                      double last_gain = 1.0);
    TensorPtr apply(const TensorPtr& x) const { return l2.apply(tanh_t(l1.apply(x))); }
};

enum class FusionMode { Cluster, Full, Concat };
const char* fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_name(const std::string& name);

struct FusionResult {
    TensorPtr fused;   // n x 2d, depth half first
    TensorPtr phi_z;   // 1 x d_z depth embedding
    uint64_t madds = 0;  // multiply-add count of the attention math
};

// Closed-form operation count: 4*d*sum(block^2) for attended variants
// (one global block for Full), 0 for Concat.
uint64_t fusion_madds(FusionMode mode, const std::vector<int>& block_sizes, int d);

struct FusionModule {
    FusionMode mode = FusionMode::Cluster;
    int d = 32, d_z = 16;
    Linear fal_pos, fal_z;  // feature alignment into the shared space
    Mlp phi_mlp;

    static FusionModule create(ParamStore& ps, FusionMode mode, int pos_in, int z_in, int d,
                               int d_z);
    // block ranges follow the graph's cluster node ranges
    FusionResult apply(const TensorPtr& pos_raw, const TensorPtr& z_raw,
                       const std::vector<std::pair<int, int>>& blocks) const;
};

// 4 relative channels plus their 10 second-order monomials
constexpr int kRelBasis = 14;

// Quadratic encoding of per-edge relative raw channels; exposed for tests.
Eigen::MatrixXd relative_position_basis(const Eigen::MatrixXd& pos_raw,
                                        const std::vector<std::pair<int, int>>& edges);

// Scalar dot-product attention over intra-cluster edges with learned q/k/v
// maps and relative-position terms encoded from the raw xy channels
// (quadratic basis); residual output.
struct IntraAggregator {
    Linear q, k, v;
    TensorPtr pos_k, pos_v;  // bias-free positional maps (a shared bias cannot move a softmax)
    TensorPtr w_out;         // no bias: zero aggregate must stay a pure residual

    static IntraAggregator create(ParamStore& ps, const std::string& name, int width);
    TensorPtr apply(const ServoGraph& g, const TensorPtr& feats, const TensorPtr& pos_raw) const;
};

// Edge-convolution over center nodes: max-aggregated perceptron of
// [center, neighbor - center], broadcast back to each cluster as a residual.
struct InterAggregator {
    Mlp edge_mlp;

    static InterAggregator create(ParamStore& ps, const std::string& name, int width);
    TensorPtr apply(const ServoGraph& g, const TensorPtr& feats) const;
};

// Gated recurrent cell; the update gate holds the previous state (gate
// saturated at 1 leaves the hidden unchanged).
struct GruCell {
    Linear wz, wr, wh;        // input maps carry the biases
    TensorPtr uz, ur, uh;     // recurrent weights
    int hidden = 64;

    static GruCell create(ParamStore& ps, const std::string& name, int in, int hidden);
    TensorPtr step(const TensorPtr& h, const TensorPtr& x) const;
};

}  // namespace servo::nn
