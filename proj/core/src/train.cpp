#include "egoflow/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>

#include "egoflow/checkpoint.hpp"
#include "egoflow/losses.hpp"
#include "egoflow/rng.hpp"

namespace egoflow {

namespace fs = std::filesystem;

Dataset Dataset::from_manifest(const std::string& manifest_path) {
    Dataset ds;
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& rel : read_manifest(manifest_path)) {
        const fs::path p = base / rel;
        ds.pairs_.push_back(load_pair(p.string()));
        ds.names_.push_back(rel);
    }
    if (ds.pairs_.empty()) throw validation_error("empty dataset: " + manifest_path);
    return ds;
}

Dataset Dataset::from_pairs(std::vector<ScenePair> pairs) {
    Dataset ds;
    ds.pairs_ = std::move(pairs);
    for (std::size_t i = 0; i < ds.pairs_.size(); ++i)
        ds.names_.push_back("pair_" + std::to_string(i));
    return ds;
}

ScenePair prepare_sample(const ScenePair& raw, const RunConfig& cfg, std::uint64_t seed,
                         bool augment) {
    ScenePair s = subsample_shuffle(raw, cfg.points, seed);
    if (augment) s = augment_rotation(s, seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
}

namespace {

SceneMetricsRow eval_one(const SceneFlowNet<float>& model, const ScenePair& pair,
                         const std::string& name, bool inject_oracle) {
    SceneMetricsRow row;
    row.name = name;

    std::vector<Vec3> pred(pair.p.size());
    std::vector<std::uint8_t> pred_mask(pair.p.size(), 0);
    RigidTransform t_pred;

    if (inject_oracle) {
        pred = pair.flow;
        t_pred = pair.t_gt;
        for (std::size_t i = 0; i < pair.p.size(); ++i) pred_mask[i] = pair.labels_p[i];
    } else {
        NoGradGuard no_grad;
        BnBatchStatsGuard scene_stats;  // standardize with the scene's own statistics
        auto out = model.forward(pair.p, pair.q, /*training=*/false);
        const auto& f = out.final_flow.data();
        for (std::size_t i = 0; i < pair.p.size(); ++i)
            pred[i] = {static_cast<double>(f[i * 3 + 0]), static_cast<double>(f[i * 3 + 1]),
                       static_cast<double>(f[i * 3 + 2])};
        t_pred = out.transform(0);
        for (std::size_t i = 0; i < pair.p.size(); ++i)
            pred_mask[i] = out.seg_p.fg[0][i] > 0.5f ? 1 : 0;
    }

    FlowStatsAccum all, fg, bg;
    for (std::size_t i = 0; i < pair.p.size(); ++i) {
        all.add(pred[i], pair.flow[i]);
        (pair.labels_p[i] ? fg : bg).add(pred[i], pair.flow[i]);
    }
    row.flow = all.finalize();
    row.flow_fg = fg.finalize();
    row.flow_bg = bg.finalize();
    row.ego = ego_metrics(t_pred, pair.t_gt);
    row.mask = mask_metrics(pred_mask, pair.labels_p);
    return row;
}

}  // namespace

std::vector<SceneMetricsRow> evaluate_model(const SceneFlowNet<float>& model,
                                            const Dataset& data, const EvalOptions& opts) {
    const std::size_t n = data.size();
    std::vector<ScenePair> prepared(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (opts.points > 0) {
            prepared[i] = subsample_shuffle(data.pair(i), opts.points, opts.seed + i);
        } else {
            prepared[i] = data.pair(i);
        }
    }

    std::vector<SceneMetricsRow> rows(n);
    const int jobs = std::max(1, opts.jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i)
            rows[i] = eval_one(model, prepared[i], data.name(i), opts.inject_oracle);
    } else {
        // frozen parameters: forward passes on distinct pairs are independent
        std::vector<std::thread> workers;
        std::size_t next = 0;
        const std::size_t chunk = (n + jobs - 1) / jobs;
        for (int w = 0; w < jobs && next < n; ++w) {
            const std::size_t lo = next, hi = std::min(n, next + chunk);
            next = hi;
            workers.emplace_back([&, lo, hi]() {
                for (std::size_t i = lo; i < hi; ++i)
                    rows[i] = eval_one(model, prepared[i], data.name(i), opts.inject_oracle);
            });
        }
        for (auto& t : workers) t.join();
    }
    return rows;
}

TrainResult train_model(SceneFlowNet<float>& model, const Dataset& train_set,
                        const Dataset* val_set, const RunConfig& cfg, std::ostream* progress,
                        const std::string& resume_checkpoint) {
    fs::create_directories(cfg.out_dir);
    TrainResult result;
    result.checkpoint_path = (fs::path(cfg.out_dir) / "model.egfk").string();
    result.log_path = (fs::path(cfg.out_dir) / "train_log.csv").string();

    int start_epoch = 0;
    if (!resume_checkpoint.empty()) {
        const CheckpointMeta meta = load_checkpoint(model.params(), resume_checkpoint);
        if (!meta.has_optimizer)
            throw validation_error("checkpoint has no optimizer state, cannot resume: " +
                                   resume_checkpoint);
        start_epoch = static_cast<int>(meta.epoch);
    }

    std::ofstream log(result.log_path, start_epoch > 0 ? std::ios::app : std::ios::out);
    if (!log) throw validation_error("cannot open training log: " + result.log_path);
    if (start_epoch == 0)
        log << "epoch,lr,total,seg,ego,chamfer,smooth,val_epe3d,val_epe3d_fg,val_epe3d_bg,"
               "val_acc3dr,val_rae,val_rte,val_rec_fg\n";

    std::vector<std::size_t> order(train_set.size());

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        // the permutation depends on (seed, epoch) only, so resumed runs
        // reproduce the uninterrupted schedule
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng = Rng(cfg.seed).fork(0xe90c4, static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);

        EpochLog el;
        el.epoch = epoch;
        el.lr = lr;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const std::size_t idx = order[step];
            const std::uint64_t sample_seed =
                Rng(cfg.seed).fork(static_cast<std::uint64_t>(epoch), idx).next_u64();
            const ScenePair sample = prepare_sample(train_set.pair(idx), cfg, sample_seed,
                                                    cfg.augment);

            model.params().zero_grad();
            auto out = model.forward(sample.p, sample.q, /*training=*/true);
            auto lb = total_loss(out, sample, cfg.loss);
            backward(lb.total);
            if (cfg.grad_clip > 0) clip_grad_norm(model.params(), static_cast<float>(cfg.grad_clip));
            adam_step(model.params(), static_cast<float>(lr));

            el.total += lb.total_value;
            el.seg += lb.seg;
            el.ego += lb.ego;
            for (int k = 0; k < 4; ++k) {
                el.chamfer += cfg.loss.alpha[k] * lb.chamfer[k];
                el.smooth += cfg.loss.alpha[k] * lb.smooth[k];
            }
        }
        const double steps = static_cast<double>(order.size());
        el.total /= steps;
        el.seg /= steps;
        el.ego /= steps;
        el.chamfer /= steps;
        el.smooth /= steps;

        const bool do_val = val_set && cfg.val_interval > 0 &&
                            ((epoch + 1) % cfg.val_interval == 0 || epoch + 1 == cfg.epochs);
        if (do_val) {
            EvalOptions eo;
            auto rows = evaluate_model(model, *val_set, eo);
            el.val = aggregate_metrics(rows);
        }

        log << el.epoch << "," << el.lr << "," << el.total << "," << el.seg << "," << el.ego
            << "," << el.chamfer << "," << el.smooth;
        if (el.val) {
            log << "," << el.val->flow.epe3d << "," << el.val->flow_fg.epe3d << ","
                << el.val->flow_bg.epe3d << "," << el.val->flow.acc3dr << ","
                << el.val->ego.rae_deg << "," << el.val->ego.rte << "," << el.val->mask.rec_fg;
        } else {
            log << ",,,,,,,";
        }
        log << "\n";
        log.flush();

        save_checkpoint(model.params(), result.checkpoint_path, /*include_optimizer=*/true,
                        epoch + 1);
        if (progress) {
            (*progress) << "epoch " << epoch << "  lr " << lr << "  loss " << el.total << "  (seg "
                        << el.seg << ", ego " << el.ego << ", cd " << el.chamfer << ", sm "
                        << el.smooth << ")";
            if (el.val) (*progress) << "  val EPE3D " << el.val->flow.epe3d;
            (*progress) << "\n";
        }
        result.epochs.push_back(std::move(el));
    }
    return result;
}

}  // namespace egoflow
