// servobench: data generation, training, closed-loop benchmarking and
// ablation reporting for the graph visual-servo controller.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>

#include "servo/datagen.hpp"
#include "servo/io.hpp"
#include "servo/sim.hpp"

namespace fs = std::filesystem;
using namespace servo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::vector<Level> parse_levels(const std::string& csv) {
    std::vector<Level> levels;
    std::string tok;
    std::istringstream ss(csv);
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) levels.push_back(level_from_name(tok));
    }
    if (levels.empty()) throw std::invalid_argument("no levels given");
    return levels;
}

std::vector<ObjectModel> resolve_models(const std::string& models_dir, int synthetic_count,
                                        uint64_t seed) {
    if (!models_dir.empty()) return load_models_dir(models_dir);
    RngEngine rng = substream(seed, {stream::kScene, 0xabcdefULL});
    return synthetic_models(synthetic_count, 2048, rng);
}

struct ProviderFlags {
    std::string mode = "true";
    double a = 1.0, b = 0.0, noise = 0.0, range_cap = 0.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--depth-mode", mode, "depth source: true|affine|camera")
            ->check(CLI::IsMember({"true", "affine", "camera"}));
        cmd->add_option("--depth-a", a, "affine depth scale");
        cmd->add_option("--depth-b", b, "affine depth offset (m)");
        cmd->add_option("--depth-noise", noise, "depth noise amplitude (m)");
        cmd->add_option("--depth-range-cap", range_cap, "camera-mode range cutoff (m, 0 = none)");
    }
    DepthProvider resolve() const {
        DepthProvider p;
        if (mode == "affine") p.mode = DepthMode::AffineRelative;
        else if (mode == "camera") p.mode = DepthMode::CameraNoise;
        else p.mode = DepthMode::TrueDepth;
        p.a = a;
        p.b = b;
        p.noise_amp = noise;
        if (range_cap > 0.0) p.range_cap = range_cap;
        return p;
    }
};

int cmd_gen_data(const std::string& out, const std::string& models_dir, int synthetic,
                 uint64_t seed, DataGenConfig cfg) {
    cfg.seed = seed;
    const auto models = resolve_models(models_dir, synthetic, seed);
    Dataset data = generate_dataset(models, cfg, [](int done, int total) {
        std::printf("  generated %d/%d scenes\n", done, total);
        std::fflush(stdout);
    });

    // Validation pass: the cluster budget bound must hold on every scene.
    int max_points = 0;
    for (const auto& scene : data.scenes) {
        if (scene.total_points() >= scene.total_budget)
            throw std::runtime_error("scene violates the point budget bound");
        max_points = std::max(max_points, scene.total_points());
    }
    save_dataset(data, out);
    std::printf("dataset: %zu scenes, %zu episodes, max points %d (budget %d), -> %s\n",
                data.scenes.size(), data.episodes.size(), max_points, cfg.scene_params.total_budget,
                out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"servobench: graph visual-servo workbench"};
    app.require_subcommand(1);
    app.set_config("--config");
    // each subcommand also takes key=value config files; flags win

    // --- gen-data ---
    auto* gen = app.add_subcommand("gen-data", "generate scenes + teacher episodes");
    gen->set_config("--config");
    std::string gen_out = "dataset.ds", gen_models;
    uint64_t gen_seed = 0;
    int gen_synth = 21;
    std::string gen_levels = "S,M,L";
    DataGenConfig gen_cfg;
    gen->add_option("--seed", gen_seed, "rng seed")->required();
    gen->add_option("--out", gen_out, "output dataset file");
    gen->add_option("--models", gen_models, "directory of model point files");
    gen->add_option("--synthetic", gen_synth, "synthesize this many object models");
    gen->add_option("--scenes", gen_cfg.num_scenes, "number of scenes/episodes");
    gen->add_option("--steps", gen_cfg.steps_per_episode, "steps per episode");
    gen->add_option("--levels", gen_levels, "level cycle, e.g. S,M,L");
    gen->add_option("--workers", gen_cfg.workers, "parallel workers (0 = cores)");
    gen->add_option("--rollout-noise-v", gen_cfg.rollout_noise_v, "exploration noise (m/s)");
    gen->add_option("--rollout-noise-w", gen_cfg.rollout_noise_w, "exploration noise (rad/s)");
    gen->add_flag("--no-interpolate-start", [&gen_cfg](int64_t) { gen_cfg.interpolate_start = false; },
                  "start every episode at the full level deviation");

    // --- train ---
    auto* tr = app.add_subcommand("train", "train a controller on a dataset");
    tr->set_config("--config");
    std::string tr_data, tr_out = "model.ckpt", tr_curve, tr_resume, tr_fusion = "cluster";
    uint64_t tr_seed = 0;
    TrainConfig tr_cfg;
    ModelConfig tr_model;
    tr->add_option("--seed", tr_seed, "rng seed")->required();
    tr->add_option("--data", tr_data, "dataset file")->required();
    tr->add_option("--out", tr_out, "output checkpoint");
    tr->add_option("--curve", tr_curve, "loss curve CSV (default: <out>.curve.csv)");
    tr->add_option("--resume", tr_resume, "continue from a checkpoint");
    tr->add_option("--fusion", tr_fusion, "fusion mode: cluster|full|concat")
        ->check(CLI::IsMember({"cluster", "full", "concat"}));
    tr->add_option("--epochs", tr_cfg.epochs, "training epochs");
    tr->add_option("--lr", tr_cfg.lr, "learning rate");
    tr->add_option("--batch", tr_cfg.batch, "batch size");
    tr->add_option("--workers", tr_cfg.workers, "parallel workers (0 = cores)");
    tr->add_option("--clip", tr_cfg.grad_clip, "global-norm gradient clip (<=0 off)");
    tr->add_option("--w-dir", tr_cfg.w_dir, "direction loss weight");
    tr->add_option("--mismatch", tr_cfg.aug.mismatch_ratio, "mismatch augmentation ratio");
    tr->add_option("--dropout", tr_cfg.aug.dropout_ratio, "dropout augmentation ratio");
    tr->add_option("--noise", tr_cfg.aug.noise_amplitude, "coordinate noise amplitude");
    tr->add_option("--width", tr_model.d, "shared feature width d");
    tr->add_option("--depth-width", tr_model.d_z, "depth embedding width");
    tr->add_option("--hidden", tr_model.hidden, "recurrent state width");

    // --- bench ---
    auto* be = app.add_subcommand("bench", "closed-loop benchmark battery");
    be->set_config("--config");
    std::string be_out = "bench_out", be_models_dir, be_levels = "S,M,L";
    std::vector<std::string> be_ckpts, be_baselines;
    uint64_t be_seed = 0;
    int be_synth = 21;
    BenchmarkConfig be_cfg;
    ProviderFlags be_provider;
    be->add_option("--seed", be_seed, "rng seed")->required();
    be->add_option("--out", be_out, "output directory");
    be->add_option("--model", be_ckpts, "controller checkpoint (repeatable)");
    be->add_option("--baseline", be_baselines, "baseline: ibvs|teacher (repeatable)")
        ->check(CLI::IsMember({"ibvs", "teacher"}));
    be->add_option("--levels", be_levels, "levels, e.g. S,M,L");
    be->add_option("--runs", be_cfg.runs_per_level, "episodes per level");
    be->add_option("--workers", be_cfg.workers, "parallel workers (0 = cores)");
    be->add_option("--models", be_models_dir, "directory of model point files");
    be->add_option("--synthetic", be_synth, "synthesize this many object models");
    be->add_option("--max-steps", be_cfg.episode.max_steps, "episode step limit");
    be->add_option("--feature-thresh", be_cfg.episode.success.feature_err,
                   "feature-error hold threshold");
    be->add_option("--mismatch", be_cfg.episode.obs_noise.mismatch_ratio, "observation mismatch ratio");
    be->add_option("--dropout", be_cfg.episode.obs_noise.dropout_ratio, "observation dropout ratio");
    be->add_option("--noise", be_cfg.episode.obs_noise.noise_amplitude, "observation noise amplitude");
    be_provider.attach(be);
    bool be_trajectories = false;
    be->add_flag("--trajectories", be_trajectories, "keep full step trajectories in the log");

    // --- ablate ---
    auto* ab = app.add_subcommand("ablate", "fusion or depth-source ablation");
    ab->set_config("--config");
    std::string ab_out = "ablate_out", ab_kind = "fusion", ab_levels = "S";
    std::vector<std::string> ab_ckpts;
    uint64_t ab_seed = 0;
    int ab_runs = 50, ab_workers = 0, ab_synth = 21;
    AugmentationParams ab_noise;
    ab->add_option("--seed", ab_seed, "rng seed")->required();
    ab->add_option("--out", ab_out, "output directory");
    ab->add_option("--kind", ab_kind, "ablation kind: fusion|depth")
        ->check(CLI::IsMember({"fusion", "depth"}));
    ab->add_option("--model", ab_ckpts, "checkpoints (fusion: one per mode; depth: one)")
        ->required();
    ab->add_option("--levels", ab_levels, "levels");
    ab->add_option("--runs", ab_runs, "episodes per level");
    ab->add_option("--workers", ab_workers, "parallel workers");
    ab->add_option("--synthetic", ab_synth, "synthesize this many object models");
    ab->add_option("--mismatch", ab_noise.mismatch_ratio, "observation mismatch ratio");
    ab->add_option("--dropout", ab_noise.dropout_ratio, "observation dropout ratio");
    ab->add_option("--noise", ab_noise.noise_amplitude, "observation noise amplitude");

    // --- report ---
    auto* re = app.add_subcommand("report", "recompute aggregates from an episode log");
    re->set_config("--config");
    std::string re_log, re_out;
    re->add_option("--log", re_log, "episode log file")->required();
    re->add_option("--out", re_out, "write the table here as well");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            gen_cfg.levels = parse_levels(gen_levels);
            return cmd_gen_data(gen_out, gen_models, gen_synth, gen_seed, gen_cfg);
        }

        if (tr->parsed()) {
            Dataset data = load_dataset(tr_data);
            if (data.episodes.empty()) throw std::runtime_error("dataset has no episodes");
            tr_cfg.seed = tr_seed;
            tr_model.fusion = nn::fusion_mode_from_name(tr_fusion);
            int epoch_offset = 0;
            std::unique_ptr<DepthPcModel> model;
            if (!tr_resume.empty()) {
                model = std::make_unique<DepthPcModel>(DepthPcModel::load(tr_resume));
                const auto& meta = model->params().meta;
                if (meta.count("epochs_trained"))
                    epoch_offset = std::stoi(meta.at("epochs_trained"));
            } else {
                model = std::make_unique<DepthPcModel>(tr_model, tr_seed);
            }
            const std::string curve_path = tr_curve.empty() ? tr_out + ".curve.csv" : tr_curve;
            std::map<std::string, std::string> prov = data.provenance;
            prov["train_seed"] = std::to_string(tr_seed);
            prov["fusion"] = tr_fusion;
            prov["epochs"] = std::to_string(tr_cfg.epochs);
            prov["lr"] = std::to_string(tr_cfg.lr);
            prov["batch"] = std::to_string(tr_cfg.batch);

            TrainCurve curve;
            try {
                curve = train(*model, data, tr_cfg, [&](const EpochStats& s) {
                    curve.epochs.push_back(s);
                    write_train_curve_csv(curve, prov, curve_path, epoch_offset);
                    std::printf("epoch %d: loss %.6f (mag %.6f, dir %.6f)\n", s.epoch + epoch_offset,
                                s.loss, s.loss_mag, s.loss_dir);
                    std::fflush(stdout);
                });
            } catch (const std::runtime_error& e) {
                write_train_curve_csv(curve, prov, curve_path, epoch_offset);
                std::fprintf(stderr, "error: %s\n", e.what());
                return kExitNumeric;
            }
            model->params().meta["epochs_trained"] =
                std::to_string(epoch_offset + tr_cfg.epochs);
            model->params().meta["train_seed"] = std::to_string(tr_seed);
            model->save(tr_out);
            write_train_curve_csv(curve, prov, curve_path, epoch_offset);
            std::printf("checkpoint -> %s, curve -> %s\n", tr_out.c_str(), curve_path.c_str());
            return kExitOk;
        }

        if (be->parsed()) {
            if (be_ckpts.empty() && be_baselines.empty())
                throw std::runtime_error("bench: give at least one --model or --baseline");
            be_cfg.seed = be_seed;
            be_cfg.levels = parse_levels(be_levels);
            be_cfg.episode.provider = be_provider.resolve();
            be_cfg.keep_trajectories = be_trajectories;
            std::vector<ControllerSpec> specs;
            for (const auto& ckpt : be_ckpts) {
                auto model = std::make_shared<DepthPcModel>(DepthPcModel::load(ckpt));
                specs.push_back(make_model_spec(model));
            }
            for (const auto& b : be_baselines) {
                if (b == "ibvs") specs.push_back(make_ibvs_spec());
                else specs.push_back(make_teacher_spec());
            }
            const auto models = resolve_models(be_models_dir, be_synth, be_seed);
            BenchmarkReport report = run_benchmark(specs, models, be_cfg);
            report.provenance["seed"] = std::to_string(be_seed);
            report.provenance["levels"] = be_levels;
            report.provenance["runs_per_level"] = std::to_string(be_cfg.runs_per_level);
            report.provenance["depth_mode"] = be_provider.mode;
            fs::create_directories(be_out);
            write_report_csv(report, be_out + "/report.csv");
            write_report_table(report, be_out + "/table.txt");
            write_episode_log(report, be_out + "/episodes.log");
            std::fputs(format_report_table(report).c_str(), stdout);
            double wall = 0;
            for (const auto& ep : report.episodes) wall += ep.result.wall_time;
            std::printf("(%zu episodes, %.1f s wall total)\n", report.episodes.size(), wall);
            return kExitOk;
        }

        if (ab->parsed()) {
            fs::create_directories(ab_out);
            BenchmarkConfig cfg;
            cfg.seed = ab_seed;
            cfg.levels = parse_levels(ab_levels);
            cfg.runs_per_level = ab_runs;
            cfg.workers = ab_workers;
            cfg.episode.obs_noise = ab_noise;
            const auto models = resolve_models("", ab_synth, ab_seed);
            if (ab_kind == "fusion") {
                std::vector<std::pair<std::string, BenchmarkReport>> per_mode;
                for (const auto& ckpt : ab_ckpts) {
                    auto model = std::make_shared<DepthPcModel>(DepthPcModel::load(ckpt));
                    const std::string mode = nn::fusion_mode_name(model->config().fusion);
                    BenchmarkReport rep =
                        run_benchmark({make_model_spec(model, mode)}, models, cfg);
                    rep.provenance["seed"] = std::to_string(ab_seed);
                    rep.provenance["mode"] = mode;
                    per_mode.emplace_back(mode, std::move(rep));
                }
                FusionAblationTable table = ablation_fusion(per_mode);
                std::map<std::string, std::string> prov{{"seed", std::to_string(ab_seed)},
                                                        {"levels", ab_levels},
                                                        {"runs", std::to_string(ab_runs)}};
                write_ablation_csv(table, prov, ab_out + "/ablation.csv");
                std::fputs(format_ablation_table(table).c_str(), stdout);
                std::ofstream tf(ab_out + "/ablation_table.txt");
                tf << format_ablation_table(table);
                return kExitOk;
            }
            // depth-source ablation: one model, estimator-style vs camera-style provider
            if (ab_ckpts.size() != 1)
                throw std::runtime_error("ablate --kind depth expects exactly one --model");
            auto model = std::make_shared<DepthPcModel>(DepthPcModel::load(ab_ckpts[0]));
            std::vector<std::pair<std::string, DepthProvider>> providers;
            DepthProvider est;
            est.mode = DepthMode::AffineRelative;
            est.a = 1.4;
            est.b = 0.25;
            est.noise_amp = 0.01;
            DepthProvider cam;
            cam.mode = DepthMode::CameraNoise;
            cam.noise_amp = 0.05;
            cam.range_cap = 2.5;
            providers.emplace_back("estimator", est);
            providers.emplace_back("camera", cam);
            std::vector<std::pair<std::string, BenchmarkReport>> per_provider;
            for (auto& [name, provider] : providers) {
                BenchmarkConfig c = cfg;
                c.episode.provider = provider;
                BenchmarkReport rep =
                    run_benchmark({make_model_spec(model, name)}, models, c);
                rep.provenance["seed"] = std::to_string(ab_seed);
                rep.provenance["provider"] = name;
                write_report_csv(rep, ab_out + "/depth_" + name + ".csv");
                per_provider.emplace_back(name, std::move(rep));
            }
            for (const auto& [name, rep] : per_provider) {
                std::printf("depth source: %s\n%s", name.c_str(),
                            format_report_table(rep).c_str());
            }
            return kExitOk;
        }

        if (re->parsed()) {
            double dt = 0.04;
            const auto episodes = parse_episode_log(re_log, &dt);
            if (episodes.empty()) throw std::runtime_error("no episode records in " + re_log);
            BenchmarkReport report;
            report.dt = dt;
            report.episodes = episodes;
            report.rows = aggregate_episodes(report.episodes, dt);
            report.provenance["recomputed_from"] = re_log;
            const std::string table = format_report_table(report);
            std::fputs(table.c_str(), stdout);
            if (!re_out.empty()) {
                std::ofstream out(re_out);
                out << table;
            }
            return kExitOk;
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
