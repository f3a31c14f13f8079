#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "servo/control.hpp"

namespace servo {

namespace {

using nn::TensorPtr;

struct EpisodeOutcome {
    double loss = 0.0;
    double mag = 0.0;
    double dir = 0.0;
    std::vector<Eigen::MatrixXd> grads;  // parameter order of the store
};

TensorPtr branch_direction_loss(const TensorPtr& pred, const Eigen::Vector3d& target,
                                double near_zero) {
    const double tn = target.norm();
    // a slow command's direction is noise; the squared error handles it alone
    if (tn < near_zero) return nullptr;
    Eigen::MatrixXd t(1, 3);
    t << target.x(), target.y(), target.z();
    TensorPtr tt = nn::make_tensor(std::move(t));
    TensorPtr dot = nn::rowwise_dot(pred, tt);
    // velocity-scale floor in the norm keeps the gradient bounded when the
    // prediction is still near zero
    constexpr double kNormFloor2 = 2.5e-3;
    TensorPtr norm = nn::sqrt_t(nn::add_scalar(nn::rowwise_dot(pred, pred), kNormFloor2));
    TensorPtr cosv = nn::cdiv(dot, nn::scale(norm, tn));
    return nn::add_scalar(nn::scale(cosv, -1.0), 1.0);
}

EpisodeOutcome episode_gradients(const DepthPcModel& master, const TrainEpisode& episode,
                                 const TrainConfig& cfg, uint64_t aug_stream) {
    DepthPcModel local = master.clone(true);
    RngEngine rng = substream(cfg.seed, {stream::kAugment, aug_stream});

    TensorPtr h = local.initial_hidden();
    std::vector<TensorPtr> losses;
    double mag_sum = 0.0, dir_sum = 0.0;
    for (const auto& step : episode.steps) {
        const ObservationPair pair = augment(step.pair, cfg.aug, rng);
        const ServoGraph graph = build_graph(pair);
        auto fwd = local.forward(graph, h);
        h = fwd.hidden;

        Eigen::MatrixXd tgt(1, 6);
        tgt << step.teacher.linear.transpose(), step.teacher.angular.transpose();
        TensorPtr pred = nn::concat_cols({fwd.linear, fwd.angular});
        TensorPtr mse = nn::mean_all(nn::square(nn::sub(pred, nn::make_tensor(tgt))));
        TensorPtr loss = nn::scale(mse, cfg.w_mag);
        mag_sum += mse->value(0, 0);

        for (int branch = 0; branch < 2; ++branch) {
            const TensorPtr& p = branch == 0 ? fwd.linear : fwd.angular;
            const Eigen::Vector3d& t = branch == 0 ? step.teacher.linear : step.teacher.angular;
            TensorPtr d = branch_direction_loss(p, t, branch == 0 ? cfg.dir_floor_v : cfg.dir_floor_w);
            if (d) {
                loss = nn::add(loss, nn::scale(d, cfg.w_dir));
                dir_sum += d->value(0, 0);
            }
        }
        losses.push_back(loss);
    }
    const double inv_t = 1.0 / static_cast<double>(losses.size());
    TensorPtr total = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) total = nn::add(total, losses[i]);
    total = nn::scale(total, inv_t);

    EpisodeOutcome out;
    out.loss = total->value(0, 0);
    out.mag = mag_sum * inv_t;
    out.dir = dir_sum * inv_t;
    if (!std::isfinite(out.loss)) return out;  // caller raises the divergence error

    nn::backward(total);
    const auto& names = local.params().names();
    out.grads.reserve(names.size());
    for (const auto& name : names) {
        auto p = local.params().get(name);
        p->ensure_grad();
        out.grads.push_back(p->grad);
    }
    return out;
}

}  // namespace

TrainCurve train(DepthPcModel& model, const Dataset& data, const TrainConfig& cfg,
                 const std::function<void(const EpochStats&)>& on_epoch) {
    if (data.episodes.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.lr < 0.0 || cfg.batch <= 0 || cfg.epochs < 0)
        throw std::invalid_argument("train: invalid config");

    const auto& names = model.params().names();
    std::vector<Eigen::MatrixXd> moment1, moment2;  // Adam state
    moment1.reserve(names.size());
    moment2.reserve(names.size());
    for (const auto& name : names) {
        auto p = model.params().get(name);
        moment1.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        moment2.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
    int64_t step_count = 0;

    int workers = cfg.workers > 0 ? cfg.workers
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, workers);

    TrainCurve curve;
    const int n = static_cast<int>(data.episodes.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        RngEngine shuffle_rng = substream(cfg.seed, {stream::kShuffle, (uint64_t)epoch});
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[uniform_int(shuffle_rng, 0, i)]);

        double epoch_loss = 0.0, epoch_mag = 0.0, epoch_dir = 0.0;
        for (int batch_start = 0; batch_start < n; batch_start += cfg.batch) {
            const int batch_n = std::min(cfg.batch, n - batch_start);
            std::vector<EpisodeOutcome> outcomes(batch_n);

            std::atomic<int> next{0};
            auto work = [&]() {
                for (;;) {
                    const int slot = next.fetch_add(1);
                    if (slot >= batch_n) return;
                    const int ep_idx = order[batch_start + slot];
                    // augmentation stream keyed by (epoch, dataset index):
                    // identical for any worker count or batch layout
                    const uint64_t stream_id =
                        seed_combine(static_cast<uint64_t>(epoch), static_cast<uint64_t>(ep_idx));
                    outcomes[slot] = episode_gradients(model, data.episodes[ep_idx], cfg, stream_id);
                }
            };
            std::vector<std::thread> pool;
            for (int w = 1; w < std::min(workers, batch_n); ++w) pool.emplace_back(work);
            work();
            for (auto& th : pool) th.join();

            // Fixed-order reduce keeps the update bitwise reproducible.
            std::vector<Eigen::MatrixXd> grad_sum;
            grad_sum.reserve(names.size());
            for (size_t p = 0; p < names.size(); ++p)
                grad_sum.push_back(Eigen::MatrixXd::Zero(moment1[p].rows(), moment1[p].cols()));
            for (const auto& oc : outcomes) {
                if (!std::isfinite(oc.loss))
                    throw std::runtime_error("training diverged: non-finite loss");
                epoch_loss += oc.loss;
                epoch_mag += oc.mag;
                epoch_dir += oc.dir;
                for (size_t p = 0; p < names.size(); ++p) grad_sum[p] += oc.grads[p];
            }
            const double inv_b = 1.0 / static_cast<double>(batch_n);
            double sq_norm = 0.0;
            for (auto& g : grad_sum) {
                g *= inv_b;
                sq_norm += g.squaredNorm();
            }
            double clip_scale = 1.0;
            if (cfg.grad_clip > 0.0 && sq_norm > cfg.grad_clip * cfg.grad_clip)
                clip_scale = cfg.grad_clip / std::sqrt(sq_norm);

            ++step_count;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
            for (size_t p = 0; p < names.size(); ++p) {
                const Eigen::MatrixXd g = clip_scale * grad_sum[p];
                moment1[p] = cfg.beta1 * moment1[p] + (1.0 - cfg.beta1) * g;
                moment2[p] = cfg.beta2 * moment2[p] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
                const Eigen::MatrixXd update =
                    (moment1[p] / bc1).array() /
                    ((moment2[p] / bc2).array().sqrt() + cfg.adam_eps);
                model.params().get(names[p])->value -= cfg.lr * update.matrix();
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = epoch_loss / n;
        stats.loss_mag = epoch_mag / n;
        stats.loss_dir = epoch_dir / n;
        curve.epochs.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return curve;
}

}  // namespace servo
