#pragma once

// Velocity controllers: the classical image-based baseline, the decoupled
// pose-log teacher, and the learned graph controller with its training loop.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "servo/graph.hpp"
#include "servo/nn/layers.hpp"

namespace servo {

// --- classical baseline -----------------------------------------------------

struct IbvsConfig {
    double lambda = 2.5;   // gain, 1/s
    double mu = 0.01;      // damping
    bool use_true_depth = true;
    double constant_depth = 1.5;  // meters, when not using true depth
};

struct IbvsResult {
    Twist twist;
    bool low_rank = false;
};

// Damped least-squares point-feature control: stacks the 2x6 interaction
// matrix per match in pinhole-normalized coordinates and solves
// v = -lambda * (L^T L + mu^2 I)^-1 L^T e.
IbvsResult ibvs_velocity(const ObservationPair& pair, const CameraIntrinsics& intr,
                         const IbvsConfig& cfg);

// --- teacher ----------------------------------------------------------------

// Decoupled log velocity toward the target pose: linear = lambda * t_err,
// angular = lambda * axis_angle, both in the current camera frame.
Twist teacher_velocity(const Pose& current, const Pose& target, double lambda);

Twist clamp_twist(const Twist& v, double v_max, double w_max);

// --- learned controller -------------------------------------------------------

struct ModelConfig {
    int d = 32;        // shared feature width
    int d_z = 16;      // depth embedding width
    int hidden = 64;   // recurrent state width
    int head_hidden = 32;
    nn::FusionMode fusion = nn::FusionMode::Cluster;
    double v_max = 0.5;  // m/s
    double w_max = 1.0;  // rad/s

    int pos_channels() const { return 4; }  // current xy + target xy
    int z_channels() const { return 2; }    // current + target relative depth
    int width() const { return 2 * d; }
};

class DepthPcModel {
  public:
    DepthPcModel(const ModelConfig& cfg, uint64_t seed);

    struct Forward {
        Twist twist;             // clamped to the speed limits
        nn::TensorPtr linear;    // raw head outputs, 1x3 each
        nn::TensorPtr angular;
        nn::TensorPtr hidden;    // next recurrent state
        uint64_t fusion_madds = 0;
    };

    Forward forward(const ServoGraph& graph, const nn::TensorPtr& hidden) const;
    nn::TensorPtr initial_hidden() const;

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    void save(const std::string& path) const;
    static DepthPcModel load(const std::string& path);

    // Deep copy; with_grad=false gives a tape-free inference model.
    DepthPcModel clone(bool with_grad = true) const;

  private:
    DepthPcModel(const ModelConfig& cfg, nn::ParamStore store);
    void bind_layers();

    ModelConfig cfg_;
    nn::ParamStore store_;
    nn::FusionModule fusion_;
    nn::IntraAggregator intra_;
    nn::InterAggregator inter_;
    nn::GruCell gru_;
    nn::Mlp head_linear_, head_angular_;
};

// Raw channel matrices for a graph: n x 4 coordinates and n x 2 depths.
nn::TensorPtr graph_pos_channels(const ServoGraph& g);
nn::TensorPtr graph_z_channels(const ServoGraph& g);

// --- training ----------------------------------------------------------------

struct EpisodeStep {
    ObservationPair pair;  // clean observation; augmentation happens in train
    Twist teacher;         // applied (clamped) teacher command
};

struct TrainEpisode {
    Pose initial, target;
    uint64_t seed = 0;
    std::vector<EpisodeStep> steps;
};

struct Dataset {
    std::vector<Scene> scenes;
    std::vector<TrainEpisode> episodes;
    std::map<std::string, std::string> provenance;  // config echo of the generator
};

struct TrainConfig {
    double lr = 3e-3;
    double beta1 = 0.9;       // first-moment decay
    double beta2 = 0.999;     // second-moment decay
    double adam_eps = 1e-8;
    double grad_clip = 5.0;   // global-norm clip; <= 0 disables
    int batch = 8;
    int epochs = 5;
    double w_mag = 1.0;       // squared-error weight
    double w_dir = 0.1;       // per-branch cosine weight
    double dir_floor_v = 0.02;  // m/s; cosine skipped below (near-zero target)
    double dir_floor_w = 0.05;  // rad/s
    AugmentationParams aug;
    uint64_t seed = 1;
    int workers = 0;          // 0 -> hardware concurrency
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double loss_mag = 0.0;
    double loss_dir = 0.0;
};

struct TrainCurve {
    std::vector<EpochStats> epochs;
};

// Adam over gradients accumulated through unrolled recurrent steps.
// Deterministic under cfg.seed for any worker count. Throws on divergence.
TrainCurve train(DepthPcModel& model, const Dataset& data, const TrainConfig& cfg,
                 const std::function<void(const EpochStats&)>& on_epoch = nullptr);

}  // namespace servo
