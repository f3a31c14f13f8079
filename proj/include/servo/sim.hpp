#pragma once

// Closed-loop episode execution and the benchmark protocol: S/M/L batteries,
// success criteria (terminal pose within thresholds plus a sustained
// feature-error hold), paired noise streams across controllers, aggregation.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "servo/control.hpp"

namespace servo {

struct SuccessConfig {
    double re_deg = 3.0;
    double te_m = 0.03;
    double feature_err = 0.01;  // mean matched-feature error, normalized units
    int hold_steps = 20;
};

struct EpisodeConfig {
    double dt = 0.04;
    int max_steps = 600;
    SuccessConfig success;
    DepthProvider provider;
    AugmentationParams obs_noise;  // detector-noise emulation seen by the controller
    HprParams hpr;
    CameraIntrinsics intr;
    double v_max = 0.5;
    double w_max = 1.0;
    int min_matches = 4;
};

struct StepInputs {
    const ObservationPair& pair;  // augmented view handed to the controller
    const ServoGraph& graph;
    const Pose& current_pose;  // oracle access, used by the teacher only
    const Pose& target_pose;
    const CameraIntrinsics& intr;
    double dt;
};

class Controller {
  public:
    virtual ~Controller() = default;
    virtual void reset() {}
    virtual Twist step(const StepInputs& in) = 0;
    virtual uint64_t consumed_madds() const { return 0; }
};

struct ControllerSpec {
    std::string name;
    std::function<std::unique_ptr<Controller>()> make;
};

ControllerSpec make_teacher_spec(double lambda = 2.5);
ControllerSpec make_ibvs_spec(const IbvsConfig& cfg = {});
ControllerSpec make_model_spec(std::shared_ptr<const DepthPcModel> model,
                               const std::string& name = "");

struct StepRecord {
    Pose pose;           // camera pose at observation time
    Twist twist;         // applied command (zero on the terminating step)
    double feature_err;  // clean mean matched-feature error
    double te;
    double re_deg;
};

struct EpisodeResult {
    bool success = false;
    double te = 0.0;       // at termination
    double re_deg = 0.0;
    int ts = 0;            // steps before the satisfied hold window (max_steps on failure)
    double wall_time = 0.0;
    std::string fail_cause;  // empty on success
    uint64_t fusion_madds = 0;
    int steps_run = 0;
    std::vector<StepRecord> trajectory;
};

// One closed-loop run. noise_seed derives the per-step provider/augmentation
// streams; identical seeds give identical streams for every controller.
EpisodeResult run_episode(const Scene& scene, const PosePair& poses, Controller& controller,
                          const EpisodeConfig& cfg, uint64_t noise_seed,
                          bool keep_trajectory = true);

struct BenchmarkConfig {
    std::vector<Level> levels{Level::S, Level::M, Level::L};
    int runs_per_level = 50;
    uint64_t seed = 1;
    EpisodeConfig episode;
    SceneGenParams scene_params;
    CylinderRegion region;
    int workers = 0;               // 0 -> hardware concurrency
    int min_initial_matches = 8;   // visibility requirement at both poses
    int max_pose_retries = 10;     // then the seed is skipped and logged
    bool keep_trajectories = false;
};

struct BenchEpisode {
    std::string controller;
    Level level = Level::S;
    int run = 0;
    uint64_t stream_hash = 0;  // scene + poses + noise seed; equal across controllers
    EpisodeResult result;
};

struct AggregateRow {
    std::string controller;
    Level level = Level::S;
    int runs = 0;
    int successes = 0;
    double sr = 0.0;           // percent
    double mean_te_mm = 0.0;   // over successful runs
    double mean_re_deg = 0.0;
    double mean_ts = 0.0;
    double mtt_s = 0.0;        // mean_ts * dt (simulated time; deterministic)
    double mean_madds = 0.0;   // fusion multiply-adds per step, model rows only
};

struct BenchmarkReport {
    std::vector<BenchEpisode> episodes;  // ordered by (level, run, controller)
    std::vector<AggregateRow> rows;      // ordered by (controller, level)
    std::vector<std::pair<Level, uint64_t>> skipped_seeds;
    std::map<std::string, std::string> provenance;
    double dt = 0.04;
};

BenchmarkReport run_benchmark(const std::vector<ControllerSpec>& controllers,
                              const std::vector<ObjectModel>& models,
                              const BenchmarkConfig& cfg);

// Aggregation used both by run_benchmark and the log-replay path.
std::vector<AggregateRow> aggregate_episodes(const std::vector<BenchEpisode>& episodes,
                                             double dt);

struct AblationRow {
    std::string mode;
    AggregateRow agg;            // pooled over levels
    double mean_madds = 0.0;     // measured per-step fusion multiply-adds
};

struct FusionAblationTable {
    std::vector<AblationRow> rows;  // cluster, full, concat order
    bool ordering_ok = false;       // SR(cluster) >= SR(full) >= SR(concat)
    std::string warning;            // set when the expected ordering fails
};

// Assembles the fusion comparison from one single-controller report per mode.
FusionAblationTable ablation_fusion(
    const std::vector<std::pair<std::string, BenchmarkReport>>& per_mode);

}  // namespace servo
