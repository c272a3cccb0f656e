// Command line front end: synthetic data generation, training, evaluation,
// inference, gradient checking and ablation sweeps.
//
// Exit codes: 0 success, 2 validation failure (bad config/arguments/inputs),
// 1 runtime error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "egoflow/checkpoint.hpp"
#include "egoflow/gradcheck.hpp"
#include "egoflow/train.hpp"

using namespace egoflow;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string profile = "desk";
    std::string checkpoint;
    std::string out;
    std::int64_t seed = -1;  // -1: keep the config/profile default
};

Config load_config(const CommonArgs& args) {
    Config cfg = args.config_path.empty() ? Config::parse_string("")
                                          : Config::parse_file(args.config_path);
    return cfg;
}

RunConfig resolve_run(const CommonArgs& args, const Config& cfg) {
    RunConfig rc = make_run_config(cfg, args.profile);
    if (args.seed >= 0) rc.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out.empty()) rc.out_dir = args.out;
    return rc;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint = true) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--profile", args.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--out", args.out, "output directory / file");
    if (with_checkpoint) cmd->add_option("--checkpoint", args.checkpoint, "checkpoint path");
}

int cmd_gen_data(const CommonArgs& args, int count) {
    Config cfg = load_config(args);
    RunConfig rc = resolve_run(args, cfg);
    if (args.out.empty()) throw validation_error("gen-data: --out directory is required");
    fs::create_directories(args.out);

    std::vector<std::string> names;
    double fg_total = 0, mag_total = 0;
    std::int64_t points_total = 0;
    for (int i = 0; i < count; ++i) {
        SceneConfig sc = rc.scene;
        sc.seed = rc.seed + static_cast<std::uint64_t>(i);
        ScenePair pair = generate(sc);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pair_%05d.egpr", i);
        save_pair(pair, (fs::path(args.out) / buf).string());
        names.push_back(buf);
        for (std::size_t p = 0; p < pair.p.size(); ++p) {
            fg_total += pair.labels_p[p];
            const auto& f = pair.flow[p];
            mag_total += std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
            ++points_total;
        }
    }
    write_manifest(names, (fs::path(args.out) / "dataset.manifest").string());
    std::cout << "wrote " << count << " pairs to " << args.out << "\n"
              << "  points/frame: " << rc.scene.points_per_frame << "\n"
              << "  FG fraction: " << fg_total / static_cast<double>(points_total) << "\n"
              << "  mean flow magnitude: " << mag_total / static_cast<double>(points_total)
              << " m\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    Config cfg = load_config(args);
    RunConfig rc = resolve_run(args, cfg);
    const std::string train_manifest = cfg.get("data.train_manifest", "");
    if (train_manifest.empty())
        throw validation_error("train: config key data.train_manifest is required");
    Dataset train_set = Dataset::from_manifest(train_manifest);
    std::optional<Dataset> val_set;
    const std::string val_manifest = cfg.get("data.val_manifest", "");
    if (!val_manifest.empty()) val_set = Dataset::from_manifest(val_manifest);

    SceneFlowNet<float> model(rc.model, rc.seed);
    std::cout << "training on " << train_set.size() << " pairs, " << rc.epochs << " epochs, "
              << model.params().total_size() << " parameters\n";
    auto result = train_model(model, train_set, val_set ? &*val_set : nullptr, rc, &std::cout,
                              args.checkpoint);
    std::cout << "checkpoint: " << result.checkpoint_path << "\nlog: " << result.log_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& data_manifest, bool inject_oracle,
             bool per_scene, int jobs, int points) {
    Config cfg = load_config(args);
    RunConfig rc = resolve_run(args, cfg);
    if (data_manifest.empty()) throw validation_error("eval: --data manifest is required");
    Dataset data = Dataset::from_manifest(data_manifest);

    SceneFlowNet<float> model(rc.model, rc.seed);
    if (!args.checkpoint.empty()) load_checkpoint(model.params(), args.checkpoint);
    else if (!inject_oracle)
        throw validation_error("eval: --checkpoint is required unless --inject-oracle is set");

    EvalOptions opts;
    opts.inject_oracle = inject_oracle;
    opts.per_scene_average = per_scene;
    opts.jobs = jobs;
    opts.points = points;
    auto rows = evaluate_model(model, data, opts);
    const std::string out = args.out.empty() ? "metrics.csv" : args.out;
    write_metrics_csv(rows, out, per_scene);
    auto agg = aggregate_metrics(rows, per_scene);
    std::cout << "scenes: " << rows.size() << "\n"
              << "EPE3D " << agg.flow.epe3d << "  (FG " << agg.flow_fg.epe3d << ", BG "
              << agg.flow_bg.epe3d << ")\n"
              << "Acc3DS " << agg.flow.acc3ds << "  Acc3DR " << agg.flow.acc3dr << "  Out3D "
              << agg.flow.out3d << "\n"
              << "RAE " << agg.ego.rae_deg << " deg  RTE " << agg.ego.rte << " m\n"
              << "mask prec/rec FG " << agg.mask.prec_fg << "/" << agg.mask.rec_fg
              << "  BG " << agg.mask.prec_bg << "/" << agg.mask.rec_bg << "\n"
              << "report: " << out << "\n";
    return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& pair_path) {
    Config cfg = load_config(args);
    RunConfig rc = resolve_run(args, cfg);
    if (pair_path.empty()) throw validation_error("infer: --pair file is required");
    if (args.checkpoint.empty()) throw validation_error("infer: --checkpoint is required");
    const std::string out = args.out.empty() ? "infer_out" : args.out;
    fs::create_directories(out);

    ScenePair pair = load_pair(pair_path);
    SceneFlowNet<float> model(rc.model, rc.seed);
    load_checkpoint(model.params(), args.checkpoint);

    NoGradGuard no_grad;
    BnBatchStatsGuard scene_stats;
    auto result = model.forward(pair.p, pair.q, /*training=*/false);

    std::vector<Vec3> pred(pair.p.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (int c = 0; c < 3; ++c)
            pred[i][c] = static_cast<double>(result.final_flow.data()[i * 3 + c]);

    {
        std::ofstream os(fs::path(out) / "flow.csv");
        os << "x,y,z,fx,fy,fz\n";
        for (std::size_t i = 0; i < pred.size(); ++i)
            os << pair.p[i][0] << "," << pair.p[i][1] << "," << pair.p[i][2] << "," << pred[i][0]
               << "," << pred[i][1] << "," << pred[i][2] << "\n";
    }
    {
        std::ofstream os(fs::path(out) / "mask.csv");
        os << "index,prob_fg,mask_fg\n";
        for (std::size_t i = 0; i < pred.size(); ++i)
            os << i << "," << result.seg_p.probs.data()[i] << "," << result.seg_p.fg[0][i]
               << "\n";
    }
    {
        RigidTransform T = result.transform(0);
        std::ofstream os(fs::path(out) / "transform.txt");
        os << std::setprecision(12);
        for (int r = 0; r < 3; ++r)
            os << T.R[r * 3] << " " << T.R[r * 3 + 1] << " " << T.R[r * 3 + 2] << "\n";
        os << T.t[0] << " " << T.t[1] << " " << T.t[2] << "\n";
    }
    export_error_map(pair.p, pred, pair.flow, (fs::path(out) / "error_map.ply").string());

    auto m = flow_metrics(pred, pair.flow);
    std::cout << "EPE3D " << m.epe3d << "  Acc3DR " << m.acc3dr << "\noutputs in " << out << "\n";
    return 0;
}

int cmd_grad_check(int instances, std::uint64_t seed) {
    auto reports = run_gradient_suite(instances, seed, 1e-5, 1e-4, &std::cout);
    bool all = true;
    for (const auto& r : reports) all = all && r.pass;
    std::cout << (all ? "all gradients match finite differences" : "gradient check FAILED")
              << "\n";
    return all ? 0 : 2;
}

int cmd_ablate(const CommonArgs& args) {
    Config cfg = load_config(args);
    RunConfig base = resolve_run(args, cfg);
    const std::string train_manifest = cfg.get("data.train_manifest", "");
    const std::string val_manifest = cfg.get("data.val_manifest", "");
    if (train_manifest.empty() || val_manifest.empty())
        throw validation_error("ablate: config keys data.train_manifest and data.val_manifest "
                               "are required");
    Dataset train_set = Dataset::from_manifest(train_manifest);
    Dataset bench = Dataset::from_manifest(val_manifest);
    const std::string out = args.out.empty() ? "ablation" : args.out;
    fs::create_directories(out);

    struct Row {
        const char* name;
        bool mask_ego, warp, update, attn, hybrid, stop;
    };
    // cumulative component sweep
    const Row rows[] = {
        {"baseline", false, false, false, false, false, false},
        {"+mask_in_ego", true, false, false, false, false, false},
        {"+hybrid_warp", true, true, false, false, false, false},
        {"+feature_update", true, true, true, false, false, false},
        {"+attention_refine", true, true, true, true, false, false},
        {"+hybrid_features", true, true, true, true, true, false},
        {"+stop_grad", true, true, true, true, true, true},
    };

    std::ofstream csv(fs::path(out) / "ablation.csv");
    csv << "config,EPE3D,EPE3D_fg,EPE3D_bg,Acc3DR,RAE_deg,RTE,rec_FG\n";
    std::cout << std::left << std::setw(20) << "config" << std::right << std::setw(10) << "EPE3D"
              << std::setw(10) << "EPE_fg" << std::setw(10) << "EPE_bg" << std::setw(10)
              << "Acc3DR" << "\n";
    for (const auto& row : rows) {
        RunConfig rc = base;
        rc.model.use_mask_in_ego = row.mask_ego;
        rc.model.use_hybrid_warp = row.warp;
        rc.model.use_feature_update = row.update;
        rc.model.use_attention_refine = row.attn;
        rc.model.use_hybrid_features = row.hybrid;
        rc.model.use_stop_grad = row.stop;
        rc.out_dir = (fs::path(out) / row.name).string();
        SceneFlowNet<float> model(rc.model, rc.seed);
        train_model(model, train_set, nullptr, rc, nullptr);
        EvalOptions eo;
        auto agg = aggregate_metrics(evaluate_model(model, bench, eo));
        csv << row.name << "," << agg.flow.epe3d << "," << agg.flow_fg.epe3d << ","
            << agg.flow_bg.epe3d << "," << agg.flow.acc3dr << "," << agg.ego.rae_deg << ","
            << agg.ego.rte << "," << agg.mask.rec_fg << "\n";
        csv.flush();
        std::cout << std::left << std::setw(20) << row.name << std::right << std::setw(10)
                  << agg.flow.epe3d << std::setw(10) << agg.flow_fg.epe3d << std::setw(10)
                  << agg.flow_bg.epe3d << std::setw(10) << agg.flow.acc3dr << std::endl;
    }
    std::cout << "table: " << (fs::path(out) / "ablation.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-level scene flow with joint segmentation and ego-motion"};
    app.require_subcommand(1);

    CommonArgs args;
    int count = 64;
    std::string data_manifest, pair_path;
    bool inject_oracle = false, per_scene = false;
    int jobs = 1, points = 0, instances = 20;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic scene pairs + manifest");
    add_common(gen, args, false);
    gen->add_option("--count", count, "number of pairs");

    auto* train = app.add_subcommand("train", "train a model (resumable via --checkpoint)");
    add_common(train, args);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, write a metrics CSV");
    add_common(eval, args);
    eval->add_option("--data", data_manifest, "dataset manifest");
    eval->add_flag("--inject-oracle", inject_oracle, "score the ground-truth flow (plumbing check)");
    eval->add_flag("--per-scene", per_scene, "average accuracies per scene instead of pooling points");
    eval->add_option("--jobs", jobs, "parallel evaluation workers");
    eval->add_option("--points", points, "subsample pairs to this resolution");

    auto* infer = app.add_subcommand("infer", "run one pair, export flow/masks/transform/error map");
    add_common(infer, args);
    infer->add_option("--pair", pair_path, "EGPR pair file");

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every op and loss");
    gc->add_option("--instances", instances, "random instances per op");
    gc->add_option("--seed", args.seed, "seed");

    auto* ablate = app.add_subcommand("ablate", "train/evaluate the component ablation table");
    add_common(ablate, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_name() == "CallForHelp" ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args, count);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args, data_manifest, inject_oracle, per_scene, jobs, points);
        if (infer->parsed()) return cmd_infer(args, pair_path);
        if (gc->parsed())
            return cmd_grad_check(instances, args.seed >= 0 ? static_cast<std::uint64_t>(args.seed)
                                                            : 20240801ULL);
        if (ablate->parsed()) return cmd_ablate(args);
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
