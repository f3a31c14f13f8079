#include "servo/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

namespace servo {

namespace {

class TeacherController : public Controller {
  public:
    explicit TeacherController(double lambda) : lambda_(lambda) {}
    Twist step(const StepInputs& in) override {
        return teacher_velocity(in.current_pose, in.target_pose, lambda_);
    }

  private:
    double lambda_;
};

class IbvsController : public Controller {
  public:
    explicit IbvsController(const IbvsConfig& cfg) : cfg_(cfg) {}
    Twist step(const StepInputs& in) override {
        if (static_cast<int>(in.pair.matches.size()) < 3) return Twist::zero();
        return ibvs_velocity(in.pair, in.intr, cfg_).twist;
    }

  private:
    IbvsConfig cfg_;
};

class ModelController : public Controller {
  public:
    explicit ModelController(std::shared_ptr<const DepthPcModel> model)
        : model_(std::move(model)) {}
    void reset() override {
        hidden_ = model_->initial_hidden();
        madds_ = 0;
    }
    Twist step(const StepInputs& in) override {
        auto fwd = model_->forward(in.graph, hidden_);
        // detach: inference must not accumulate the tape across steps
        hidden_ = nn::make_tensor(fwd.hidden->value);
        madds_ += fwd.fusion_madds;
        return fwd.twist;
    }
    uint64_t consumed_madds() const override { return madds_; }

  private:
    std::shared_ptr<const DepthPcModel> model_;
    nn::TensorPtr hidden_;
    uint64_t madds_ = 0;
};

}  // namespace

ControllerSpec make_teacher_spec(double lambda) {
    return {"teacher", [lambda]() { return std::make_unique<TeacherController>(lambda); }};
}

ControllerSpec make_ibvs_spec(const IbvsConfig& cfg) {
    return {"ibvs", [cfg]() { return std::make_unique<IbvsController>(cfg); }};
}

ControllerSpec make_model_spec(std::shared_ptr<const DepthPcModel> model,
                               const std::string& name) {
    std::string label = name.empty()
                            ? std::string("depth_pc_") +
                                  nn::fusion_mode_name(model->config().fusion)
                            : name;
    return {label, [model]() { return std::make_unique<ModelController>(model); }};
}

EpisodeResult run_episode(const Scene& scene, const PosePair& poses, Controller& controller,
                          const EpisodeConfig& cfg, uint64_t noise_seed, bool keep_trajectory) {
    const auto t0 = std::chrono::steady_clock::now();
    controller.reset();

    EpisodeResult result;
    // Target frame is observed once: the desired view is a fixed image.
    const std::vector<RawKeypoint> raw_tgt = project(scene, poses.target, cfg.intr, cfg.hpr);
    RngEngine tgt_rng = substream(noise_seed, {stream::kProvider, 0xffffffffULL});
    const std::vector<Keypoint> kps_tgt = normalize(raw_tgt, cfg.intr, cfg.provider, tgt_rng);

    Pose pose = poses.initial;
    int hold = 0;
    for (int step = 0; step < cfg.max_steps; ++step) {
        result.steps_run = step + 1;
        const std::vector<RawKeypoint> raw_cur = project(scene, pose, cfg.intr, cfg.hpr);
        RngEngine prov_rng = substream(noise_seed, {stream::kProvider, (uint64_t)step});
        std::vector<Keypoint> kps_cur = normalize(raw_cur, cfg.intr, cfg.provider, prov_rng);
        ObservationPair clean = match_observations(std::move(kps_cur), kps_tgt);

        const PoseError pe = pose_error(pose, poses.target);
        if (static_cast<int>(clean.matches.size()) < cfg.min_matches) {
            result.fail_cause = "lost_features";
            result.te = pe.te;
            result.re_deg = pe.re_deg;
            result.ts = cfg.max_steps;
            if (keep_trajectory)
                result.trajectory.push_back({pose, Twist::zero(),
                                             std::numeric_limits<double>::infinity(), pe.te,
                                             pe.re_deg});
            break;
        }
        const double ferr = mean_feature_error(clean);

        // Success: the clean feature error held below threshold for the last
        // hold_steps observations and the pose is inside the terminal bounds.
        hold = ferr < cfg.success.feature_err ? hold + 1 : 0;
        if (hold >= cfg.success.hold_steps) {
            if (pe.re_deg <= cfg.success.re_deg && pe.te <= cfg.success.te_m) {
                result.success = true;
                result.ts = step + 1 - cfg.success.hold_steps;
                result.te = pe.te;
                result.re_deg = pe.re_deg;
                if (keep_trajectory)
                    result.trajectory.push_back({pose, Twist::zero(), ferr, pe.te, pe.re_deg});
                break;
            }
            hold = 0;  // features agree but the pose does not; keep servoing
        }

        RngEngine aug_rng = substream(noise_seed, {stream::kAugment, (uint64_t)step});
        const ObservationPair view = augment(clean, cfg.obs_noise, aug_rng);
        const ServoGraph graph = build_graph(view);
        StepInputs inputs{view, graph, pose, poses.target, cfg.intr, cfg.dt};
        const Twist twist = clamp_twist(controller.step(inputs), cfg.v_max, cfg.w_max);
        if (keep_trajectory) result.trajectory.push_back({pose, twist, ferr, pe.te, pe.re_deg});
        pose = integrate_twist(pose, twist, cfg.dt);

        if (step + 1 == cfg.max_steps) {
            const PoseError fin = pose_error(pose, poses.target);
            result.fail_cause = "max_steps";
            result.ts = cfg.max_steps;
            result.te = fin.te;
            result.re_deg = fin.re_deg;
        }
    }
    result.fusion_madds = controller.consumed_madds();
    result.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

namespace {

struct Scenario {
    Level level;
    int run;
    Scene scene;
    PosePair poses;
    uint64_t noise_seed;
    uint64_t stream_hash;
};

uint64_t hash_scenario(const Scene& scene, const PosePair& poses, uint64_t noise_seed) {
    uint64_t h = mix64(noise_seed);
    auto feed = [&h](double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = seed_combine(h, bits);
    };
    for (const auto& c : scene.clusters)
        for (const auto& p : c.points) {
            feed(p.x());
            feed(p.y());
            feed(p.z());
        }
    for (const Pose* p : {&poses.initial, &poses.target}) {
        feed(p->rotation.w());
        feed(p->rotation.x());
        feed(p->rotation.y());
        feed(p->rotation.z());
        feed(p->translation.x());
        feed(p->translation.y());
        feed(p->translation.z());
    }
    return h;
}

bool poses_see_scene(const Scene& scene, const PosePair& poses, const EpisodeConfig& cfg,
                     int min_matches) {
    const auto raw_cur = project(scene, poses.initial, cfg.intr, cfg.hpr);
    const auto raw_tgt = project(scene, poses.target, cfg.intr, cfg.hpr);
    if (static_cast<int>(raw_cur.size()) < min_matches ||
        static_cast<int>(raw_tgt.size()) < min_matches)
        return false;
    DepthProvider true_depth;  // visibility is a geometric property
    RngEngine r1 = substream(0, {1}), r2 = substream(0, {2});
    ObservationPair pair = match_observations(normalize(raw_cur, cfg.intr, true_depth, r1),
                                              normalize(raw_tgt, cfg.intr, true_depth, r2));
    return static_cast<int>(pair.matches.size()) >= min_matches;
}

}  // namespace

BenchmarkReport run_benchmark(const std::vector<ControllerSpec>& controllers,
                              const std::vector<ObjectModel>& models,
                              const BenchmarkConfig& cfg) {
    if (controllers.empty()) throw std::invalid_argument("run_benchmark: no controllers");

    BenchmarkReport report;
    report.dt = cfg.episode.dt;

    // Scenario construction is sequential and controller-independent: every
    // controller sees the same scenes, poses and noise streams.
    std::vector<Scenario> scenarios;
    for (Level level : cfg.levels) {
        int accepted = 0;
        uint64_t seed_index = 0;
        while (accepted < cfg.runs_per_level) {
            const uint64_t run_seed =
                seed_combine(cfg.seed, seed_combine((uint64_t)level, seed_index));
            RngEngine scene_rng = substream(run_seed, {stream::kScene});
            Scene scene = build_scene(models, cfg.region, cfg.scene_params, scene_rng);
            bool placed = false;
            for (int attempt = 0; attempt < cfg.max_pose_retries && !placed; ++attempt) {
                RngEngine pose_rng = substream(run_seed, {stream::kPoses, (uint64_t)attempt});
                PosePair poses = sample_pose_pair(cfg.region, level, pose_rng);
                if (!poses_see_scene(scene, poses, cfg.episode, cfg.min_initial_matches))
                    continue;
                Scenario sc;
                sc.level = level;
                sc.run = accepted;
                sc.scene = std::move(scene);
                sc.poses = poses;
                sc.noise_seed = substream(run_seed, {stream::kProvider})();
                sc.stream_hash = hash_scenario(sc.scene, poses, sc.noise_seed);
                scenarios.push_back(std::move(sc));
                placed = true;
            }
            if (placed) {
                ++accepted;
            } else {
                report.skipped_seeds.emplace_back(level, seed_index);
            }
            ++seed_index;
        }
    }

    struct Job {
        int scenario;
        int controller;
    };
    std::vector<Job> jobs;
    for (int s = 0; s < static_cast<int>(scenarios.size()); ++s)
        for (int c = 0; c < static_cast<int>(controllers.size()); ++c) jobs.push_back({s, c});

    std::vector<BenchEpisode> episodes(jobs.size());
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int j = next.fetch_add(1);
            if (j >= static_cast<int>(jobs.size())) return;
            const Scenario& sc = scenarios[jobs[j].scenario];
            const ControllerSpec& spec = controllers[jobs[j].controller];
            auto controller = spec.make();
            BenchEpisode ep;
            ep.controller = spec.name;
            ep.level = sc.level;
            ep.run = sc.run;
            ep.stream_hash = sc.stream_hash;
            ep.result = run_episode(sc.scene, sc.poses, *controller, cfg.episode, sc.noise_seed,
                                    cfg.keep_trajectories);
            episodes[j] = std::move(ep);
        }
    };
    int workers = cfg.workers > 0 ? cfg.workers
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, workers);
    std::vector<std::thread> pool;
    for (int w = 1; w < std::min(workers, static_cast<int>(jobs.size())); ++w)
        pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    report.episodes = std::move(episodes);
    report.rows = aggregate_episodes(report.episodes, cfg.episode.dt);
    return report;
}

std::vector<AggregateRow> aggregate_episodes(const std::vector<BenchEpisode>& episodes,
                                             double dt) {
    struct Key {
        std::string controller;
        Level level;
        bool operator<(const Key& o) const {
            if (controller != o.controller) return controller < o.controller;
            return static_cast<int>(level) < static_cast<int>(o.level);
        }
    };
    std::map<Key, std::vector<const BenchEpisode*>> groups;
    for (const auto& ep : episodes) groups[{ep.controller, ep.level}].push_back(&ep);

    std::vector<AggregateRow> rows;
    for (const auto& [key, eps] : groups) {
        AggregateRow row;
        row.controller = key.controller;
        row.level = key.level;
        row.runs = static_cast<int>(eps.size());
        double te = 0, re = 0, ts = 0, madds = 0;
        int64_t steps = 0;
        for (const auto* ep : eps) {
            if (ep->result.success) {
                ++row.successes;
                te += ep->result.te;
                re += ep->result.re_deg;
                ts += ep->result.ts;
            }
            steps += ep->result.steps_run;
            madds += static_cast<double>(ep->result.fusion_madds);
        }
        row.sr = 100.0 * row.successes / std::max(1, row.runs);
        if (row.successes > 0) {
            row.mean_te_mm = 1000.0 * te / row.successes;
            row.mean_re_deg = re / row.successes;
            row.mean_ts = ts / row.successes;
            row.mtt_s = row.mean_ts * dt;
        }
        row.mean_madds = steps > 0 ? madds / static_cast<double>(steps) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

FusionAblationTable ablation_fusion(
    const std::vector<std::pair<std::string, BenchmarkReport>>& per_mode) {
    FusionAblationTable table;
    for (const auto& [mode, report] : per_mode) {
        AblationRow row;
        row.mode = mode;
        AggregateRow pooled;
        pooled.controller = mode;
        double te = 0, re = 0, ts = 0, madds = 0;
        int64_t steps = 0;
        for (const auto& ep : report.episodes) {
            ++pooled.runs;
            if (ep.result.success) {
                ++pooled.successes;
                te += ep.result.te;
                re += ep.result.re_deg;
                ts += ep.result.ts;
            }
            steps += ep.result.steps_run;
            madds += static_cast<double>(ep.result.fusion_madds);
        }
        pooled.sr = 100.0 * pooled.successes / std::max(1, pooled.runs);
        if (pooled.successes > 0) {
            pooled.mean_te_mm = 1000.0 * te / pooled.successes;
            pooled.mean_re_deg = re / pooled.successes;
            pooled.mean_ts = ts / pooled.successes;
            pooled.mtt_s = pooled.mean_ts * report.dt;
        }
        row.agg = pooled;
        row.mean_madds = steps > 0 ? madds / static_cast<double>(steps) : 0.0;
        table.rows.push_back(row);
    }

    auto sr_of = [&table](const std::string& mode) -> double {
        for (const auto& r : table.rows)
            if (r.mode == mode) return r.agg.sr;
        return -1.0;
    };
    const double sr_cluster = sr_of("cluster"), sr_full = sr_of("full"),
                 sr_concat = sr_of("concat");
    table.ordering_ok = sr_cluster >= sr_full && sr_full >= sr_concat;
    if (!table.ordering_ok) {
        table.warning = "expected SR ordering cluster >= full >= concat not observed";
    }
    return table;
}

}  // namespace servo
