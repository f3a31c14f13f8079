#include "servo/datagen.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace servo {

namespace {

struct SceneEpisode {
    Scene scene;
    TrainEpisode episode;
    bool ok = false;
};

SceneEpisode generate_one(const std::vector<ObjectModel>& models, const DataGenConfig& cfg,
                          int index) {
    SceneEpisode out;
    const uint64_t scene_seed = seed_combine(cfg.seed, static_cast<uint64_t>(index));
    RngEngine scene_rng = substream(scene_seed, {stream::kScene});
    out.scene = build_scene(models, cfg.region, cfg.scene_params, scene_rng);
    const Level level = cfg.levels[index % cfg.levels.size()];

    for (int attempt = 0; attempt < cfg.max_pose_retries; ++attempt) {
        RngEngine pose_rng = substream(scene_seed, {stream::kPoses, (uint64_t)attempt});
        PosePair poses = sample_pose_pair(cfg.region, level, pose_rng);
        if (cfg.interpolate_start) {
            // mixture over the approach path: full-deviation starts (the
            // benchmark condition), a uniform spread, and a near-goal-heavy
            // tail that teaches station keeping
            const double pick = uniform(pose_rng, 0.0, 1.0);
            const double u = uniform(pose_rng, 0.0, 1.0);
            double s = 1.0;
            if (pick < 0.35) s = u;
            else if (pick < 0.75) s = u * u * u;
            poses.initial = interpolate_pose(poses.target, poses.initial, s);
        }

        // Target frame observed once per episode.
        const auto raw_tgt = project(out.scene, poses.target, cfg.intr, cfg.hpr);
        RngEngine tgt_rng = substream(scene_seed, {stream::kProvider, 0xffffffffULL, (uint64_t)attempt});
        const auto kps_tgt = normalize(raw_tgt, cfg.intr, cfg.provider, tgt_rng);
        if (static_cast<int>(kps_tgt.size()) < cfg.min_matches) continue;

        TrainEpisode episode;
        episode.initial = poses.initial;
        episode.target = poses.target;
        episode.seed = scene_seed;

        Pose pose = poses.initial;
        RngEngine noise_rng = substream(scene_seed, {stream::kRollout, (uint64_t)attempt});
        for (int t = 0; t < cfg.steps_per_episode; ++t) {
            const auto raw_cur = project(out.scene, pose, cfg.intr, cfg.hpr);
            RngEngine prov_rng =
                substream(scene_seed, {stream::kProvider, (uint64_t)t, (uint64_t)attempt});
            auto kps_cur = normalize(raw_cur, cfg.intr, cfg.provider, prov_rng);
            ObservationPair pair = match_observations(std::move(kps_cur), kps_tgt);
            if (static_cast<int>(pair.matches.size()) < cfg.min_matches) break;

            EpisodeStep step;
            step.teacher = clamp_twist(teacher_velocity(pose, poses.target, cfg.teacher_lambda),
                                       cfg.v_max, cfg.w_max);
            step.pair = std::move(pair);
            episode.steps.push_back(std::move(step));

            Twist applied = episode.steps.back().teacher;
            if (cfg.rollout_noise_v > 0.0 || cfg.rollout_noise_w > 0.0) {
                for (int a = 0; a < 3; ++a) {
                    applied.linear[a] += uniform(noise_rng, -cfg.rollout_noise_v, cfg.rollout_noise_v);
                    applied.angular[a] += uniform(noise_rng, -cfg.rollout_noise_w, cfg.rollout_noise_w);
                }
                applied = clamp_twist(applied, cfg.v_max, cfg.w_max);
            }
            pose = integrate_twist(pose, applied, cfg.dt);
        }
        if (static_cast<int>(episode.steps.size()) >= std::max(1, cfg.steps_per_episode / 2)) {
            out.episode = std::move(episode);
            out.ok = true;
            return out;
        }
    }
    return out;  // not placed; caller drops the scene
}

}  // namespace

Dataset generate_dataset(const std::vector<ObjectModel>& models, const DataGenConfig& cfg,
                         const std::function<void(int, int)>& progress) {
    if (models.empty()) throw std::invalid_argument("generate_dataset: no models");

    std::vector<SceneEpisode> slots(cfg.num_scenes);
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= cfg.num_scenes) return;
            slots[i] = generate_one(models, cfg, i);
            const int d = done.fetch_add(1) + 1;
            if (progress && d % 100 == 0) progress(d, cfg.num_scenes);
        }
    };
    int workers = cfg.workers > 0 ? cfg.workers
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, workers);
    std::vector<std::thread> pool;
    for (int w = 1; w < std::min(workers, cfg.num_scenes); ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    Dataset data;
    for (auto& slot : slots) {
        if (!slot.ok) continue;
        data.scenes.push_back(std::move(slot.scene));
        data.episodes.push_back(std::move(slot.episode));
    }
    data.provenance["seed"] = std::to_string(cfg.seed);
    data.provenance["num_scenes"] = std::to_string(cfg.num_scenes);
    data.provenance["steps_per_episode"] = std::to_string(cfg.steps_per_episode);
    data.provenance["teacher_lambda"] = std::to_string(cfg.teacher_lambda);
    std::string lv;
    for (Level l : cfg.levels) {
        if (!lv.empty()) lv += ",";
        lv += level_name(l);
    }
    data.provenance["levels"] = lv;
    return data;
}

}  // namespace servo
