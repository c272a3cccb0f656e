#include "egoflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "egoflow/flow.hpp"
#include "egoflow/losses.hpp"
#include "egoflow/rng.hpp"

namespace egoflow {

namespace {

using DTensor = Tensor<double>;

DTensor rand_leaf(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return DTensor::from(std::move(shape), std::move(d), /*requires_grad=*/true);
}

DTensor rand_const(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return DTensor::from(std::move(shape), std::move(d));
}

/// Projection to a scalar with fixed random coefficients; keeps every output
/// element represented in the gradient. Takes the generator by value so a
/// rebuilt graph draws the same coefficients on every call.
DTensor project(const DTensor& y, Rng rng) {
    std::vector<double> c(y.numel());
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    return sum_all(mul(y, DTensor::from(y.shape(), std::move(c))));
}

std::vector<int> rand_index_table(Rng& rng, int rows, int k, int n) {
    std::vector<int> idx(static_cast<std::size_t>(rows) * k);
    for (auto& v : idx) v = static_cast<int>(rng.uniform_index(n));
    return idx;
}

PointCloud rand_cloud(Rng& rng, int n, double spread = 1.0) {
    PointCloud pc(n);
    for (auto& p : pc)
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(-spread, spread);
    return pc;
}

std::vector<Tensor<double>> registry_leaves(const ParamRegistry<double>& reg) {
    std::vector<Tensor<double>> out;
    for (const auto& p : reg.params()) out.push_back(p->value);
    return out;
}

}  // namespace

double check_case(const GradCheckCase& c, double h, std::uint64_t probe_seed) {
    if (c.step_override > 0) h = c.step_override;
    for (auto& leaf : c.leaves) {
        auto* node = leaf.node();
        node->ensure_grad();
        std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }
    DTensor root = c.loss();
    backward(root);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(c.leaves.size());
    for (const auto& leaf : c.leaves) analytic.push_back(leaf.grad());

    // choose probes
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    for (std::size_t l = 0; l < c.leaves.size(); ++l)
        for (std::size_t e = 0; e < c.leaves[l].numel(); ++e) probes.emplace_back(l, e);
    if (c.max_probes_total > 0 && probes.size() > static_cast<std::size_t>(c.max_probes_total)) {
        Rng rng(probe_seed ^ 0x5eed0123456789abULL);
        rng.shuffle(probes);
        probes.resize(static_cast<std::size_t>(c.max_probes_total));
    }

    double max_rel = 0;
    NoGradGuard no_grad;
    const double base = c.loss().value();
    for (const auto& [l, e] : probes) {
        Tensor<double> leaf = c.leaves[l];  // handle copy, shares the node
        auto& data = leaf.leaf_data();
        const double orig = data[e];
        auto eval_at = [&](double x) {
            data[e] = x;
            const double v = c.loss().value();
            data[e] = orig;
            return v;
        };
        const double up = eval_at(orig + h);
        const double dn = eval_at(orig - h);
        const double fd = (up - dn) / (2 * h);
        const double fd_half = (eval_at(orig + h / 2) - eval_at(orig - h / 2)) / h;
        // Two guards keep the oracle honest at points where central
        // differencing itself is invalid:
        //  - inconsistent step sizes: the probe straddles a kink or sits in a
        //    curvature/noise regime; skip it.
        //  - a kink exactly at the point: every value between the one-sided
        //    derivatives is a valid subgradient, so accept the bracket.
        // A wrong backward still shows up: away from kinks both fd estimates
        // agree with each other and disagree with the analytic value.
        if (std::abs(fd - fd_half) > 1e-3 * std::max(1.0, std::abs(fd))) continue;
        const double a = analytic[l][e];
        const double rel = std::abs(a - fd_half) / std::max(1.0, std::abs(fd_half));
        if (rel >= 1e-4) {
            const double fplus = (up - base) / h;
            const double fminus = (base - dn) / h;
            const double pad =
                1e-4 * std::max({1.0, std::abs(fplus), std::abs(fminus)}) + 1e-9;
            if (a >= std::min(fplus, fminus) - pad && a <= std::max(fplus, fminus) + pad)
                continue;
        }
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

std::vector<GradCheckCase> gradient_suite_cases(std::uint64_t seed, bool include_end_to_end) {
    std::vector<GradCheckCase> cases;
    Rng master(seed);

    auto add_case = [&cases](std::string name, std::vector<DTensor> leaves,
                        std::function<DTensor()> loss, int max_probes = 0, double step = 0) {
        cases.push_back({std::move(name), std::move(loss), std::move(leaves), max_probes, step});
    };

    {  // linear
        Rng rng = master.fork(1);
        DTensor x = rand_leaf(rng, {4, 3}), w = rand_leaf(rng, {3, 5}), b = rand_leaf(rng, {5});
        add_case("linear", {x, w, b},
            [x, w, b, rng]() mutable { return project(linear(x, w, b), rng); });
    }
    {  // matmul + transpose
        Rng rng = master.fork(2);
        DTensor a = rand_leaf(rng, {3, 4}), b = rand_leaf(rng, {4, 2});
        add_case("matmul", {a, b}, [a, b, rng]() mutable { return project(matmul(a, b), rng); });
        DTensor x = rand_leaf(rng, {3, 5});
        add_case("transpose", {x}, [x, rng]() mutable { return project(transpose(x), rng); });
    }
    {  // elementwise
        Rng rng = master.fork(3);
        DTensor a = rand_leaf(rng, {3, 4}), b = rand_leaf(rng, {3, 4});
        add_case("add", {a, b}, [a, b, rng]() mutable { return project(add(a, b), rng); });
        add_case("sub", {a, b}, [a, b, rng]() mutable { return project(sub(a, b), rng); });
        add_case("mul", {a, b}, [a, b, rng]() mutable { return project(mul(a, b), rng); });
        add_case("scale", {a}, [a, rng]() mutable { return project(scale(a, 1.7), rng); });
    }
    {  // broadcast helpers
        Rng rng = master.fork(4);
        DTensor x = rand_leaf(rng, {4, 3}), r = rand_leaf(rng, {1, 3}), s = rand_leaf(rng, {4});
        DTensor d = rand_leaf(rng, {1}, 0.5, 2.0);
        add_case("add_rowvec", {x, r}, [x, r, rng]() mutable { return project(add_rowvec(x, r), rng); });
        add_case("mul_rowwise", {x, s},
            [x, s, rng]() mutable { return project(mul_rowwise(x, s), rng); });
        add_case("div_scalar", {x, d}, [x, d, rng]() mutable { return project(div_scalar(x, d), rng); });
    }
    {  // activations (inputs kept away from the kinks)
        Rng rng = master.fork(5);
        DTensor x = rand_leaf(rng, {4, 3});
        for (auto& v : x.leaf_data())
            if (std::abs(v) < 0.05) v += (v >= 0 ? 0.1 : -0.1);
        add_case("leaky_relu", {x}, [x, rng]() mutable { return project(leaky_relu(x, 0.1), rng); });
        add_case("sigmoid", {x}, [x, rng]() mutable { return project(sigmoid(x), rng); });
        add_case("softplus", {x}, [x, rng]() mutable { return project(softplus(x), rng); });
        add_case("abs", {x}, [x, rng]() mutable { return project(abs_val(x), rng); });
        DTensor p = rand_leaf(rng, {4, 3}, 0.2, 2.0);
        add_case("sqrt", {p}, [p, rng]() mutable { return project(sqrt0(p), rng); });
        DTensor sm = rand_leaf(rng, {4, 6});
        add_case("softmax_over_neighbors", {sm},
            [sm, rng]() mutable { return project(softmax_last(sm), rng); });
    }
    {  // gathers / reductions (duplicate indices exercise scatter-add)
        Rng rng = master.fork(6);
        DTensor x = rand_leaf(rng, {5, 3});
        std::vector<int> rows = rand_index_table(rng, 6, 1, 5);
        add_case("gather_rows", {x}, [x, rows, rng]() mutable { return project(gather_rows(x, rows), rng); });
        std::vector<int> nbr = rand_index_table(rng, 4, 3, 5);
        add_case("gather_neighbors", {x},
            [x, nbr, rng]() mutable { return project(gather_neighbors(x, nbr, 3), rng); });
        DTensor t3 = rand_leaf(rng, {3, 4, 2});
        add_case("reduce_max", {t3}, [t3, rng]() mutable { return project(reduce_max_k(t3), rng); });
        add_case("max_lastdim", {t3}, [t3, rng]() mutable { return project(max_lastdim(t3), rng); });
        DTensor w = rand_leaf(rng, {3, 4});
        add_case("reduce_weighted_sum", {t3, w},
            [t3, w, rng]() mutable { return project(reduce_wsum_k(t3, w), rng); });
        DTensor c2 = rand_leaf(rng, {3, 2});
        add_case("sub_bcast", {t3, c2},
            [t3, c2, rng]() mutable { return project(sub_bcast_k(t3, c2), rng); });
    }
    {  // shape ops
        Rng rng = master.fork(7);
        DTensor a = rand_leaf(rng, {3, 2}), b = rand_leaf(rng, {3, 4});
        add_case("concat", {a, b},
            [a, b, rng]() mutable { return project(concat_last<double>({a, b}), rng); });
        DTensor x = rand_leaf(rng, {4, 6});
        add_case("reshape_sums", {x}, [x, rng]() mutable {
            DTensor r = reshape(x, {2, 12});
            return add(project(sum_rows(r), rng), add(project(sum_cols(x), rng), sum_all(x)));
        });
    }
    {  // batch norm, training mode (gradients flow through the batch stats)
        Rng rng = master.fork(8);
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        BatchNorm<double> bn(*reg, "bn", 3);
        DTensor x = rand_leaf(rng, {6, 3});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(x);
        add_case("normalize_features", leaves,
            [reg, bn, x, rng]() mutable { return project(bn.forward(x, /*training=*/true), rng); });
    }
    {  // differentiable rigid fit
        Rng rng = master.fork(9);
        const int n = 8;
        PointCloud src = rand_cloud(rng, n, 1.0);
        const RigidTransform gt = axis_rotation(2, rng.uniform(-0.5, 0.5));
        std::vector<double> dst_d(n * 3);
        for (int i = 0; i < n; ++i) {
            Vec3 m = gt.apply(src[i]);
            for (int c = 0; c < 3; ++c)
                dst_d[i * 3 + c] = m[c] + rng.uniform(-0.05, 0.05) + (c == 0 ? 0.3 : 0.0);
        }
        DTensor src_t = points_tensor<double>(src);
        DTensor dst = DTensor::from({n, 3}, dst_d, true);
        DTensor w = rand_leaf(rng, {n}, 0.2, 1.0);
        add_case("kabsch", {dst, w}, [src_t, dst, w, rng]() mutable {
            auto [R, t] = kabsch_transform(src_t, dst, w);
            return add(project(R, rng), project(t, rng));
        });
    }
    {  // LFA block
        Rng rng = master.fork(10);
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        LfaUnit<double> lfa(*reg, "lfa", 4, 4);
        const int n = 8;
        PointCloud pts = rand_cloud(rng, n, 1.0);
        IndexTable nbr = knn(pts, pts, 4);
        DTensor feats = rand_leaf(rng, {n, 4});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(feats);
        add_case("lfa_block", leaves, [reg, lfa, pts, feats, nbr, rng]() mutable {
            return project(lfa.forward(pts, feats, nbr, /*training=*/true), rng);
        });
    }
    {  // flow feature update (full neighborhood keeps the k-NN set fixed)
        Rng rng = master.fork(11);
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        Mlp<double> mlp(*reg, "update", {5, 5}, false);
        DTensor corr = rand_leaf(rng, {6, 5});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(corr);
        add_case("flow_feature_update", leaves, [reg, mlp, corr, rng]() mutable {
            return project(flow_feature_update(corr, mlp, 6, /*training=*/true), rng);
        });
    }
    {  // dual attention refinement
        Rng rng = master.fork(12);
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        LinearLayer<double> a1(*reg, "att1", 5, 1), a2(*reg, "att2", 5, 1);
        const int n = 6;
        PointCloud pts = rand_cloud(rng, n, 1.0);
        IndexTable nbr = knn(pts, pts, 3);
        DTensor x = rand_leaf(rng, {n, 5});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(x);
        add_case("dual_attention", leaves, [reg, a1, a2, x, nbr, rng]() mutable {
            return project(dual_attention(x, nbr, a1, a2), rng);
        });
    }
    {  // flow predictor head
        Rng rng = master.fork(13);
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        Mlp<double> pred(*reg, "pred", {6, 8, 4, 3}, true);
        DTensor sf = rand_leaf(rng, {5, 6});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(sf);
        add_case("flow_predictor", leaves, [reg, pred, sf, rng]() mutable {
            return project(pred.forward(sf, /*training=*/true), rng);
        });
    }
    {  // cost volume (Q small enough that the correspondence set is the full cloud)
        Rng rng = master.fork(14);
        const int m = 5, nq = 4, c = 3;
        auto reg = std::make_shared<ParamRegistry<double>>(rng.next_u64());
        LinearLayer<double> score(*reg, "cv_score", 3 + c, 1);
        DTensor src = rand_leaf(rng, {m, 3});
        DTensor qp = rand_const(rng, {nq, 3});
        DTensor hf_p = rand_leaf(rng, {m, c});
        DTensor hf_q = rand_leaf(rng, {nq, c});
        auto leaves = registry_leaves(*reg);
        leaves.push_back(src);
        leaves.push_back(hf_p);
        leaves.push_back(hf_q);
        add_case("cost_volume", leaves, [reg, score, src, qp, hf_p, hf_q, rng]() mutable {
            auto cv = cost_volume(src, qp, hf_p, hf_q, score, /*feature_space=*/false, 16);
            return add(project(cv.corr_feat, rng), add(project(cv.soft_pts, rng),
                                                       project(cv.weights, rng)));
        });
        std::vector<DTensor> leaves_fs = registry_leaves(*reg);
        leaves_fs.push_back(hf_p);
        leaves_fs.push_back(hf_q);
        add_case("cost_volume_feature_space", leaves_fs,
                 [reg, score, src, qp, hf_p, hf_q, rng]() mutable {
            auto cv = cost_volume(src, qp, hf_p, hf_q, score, /*feature_space=*/true, 16);
            return add(project(cv.corr_feat, rng), project(cv.soft_pts, rng));
        });
    }
    {  // hybrid warp + merge
        Rng rng = master.fork(15);
        const int n = 6;
        DTensor pts = rand_const(rng, {n, 3});
        DTensor flow = rand_leaf(rng, {n, 3});
        const RigidTransform gt = axis_rotation(1, 0.3);
        std::vector<double> rr(gt.R.begin(), gt.R.end());
        DTensor R = DTensor::from({3, 3}, rr, true);
        DTensor t = rand_leaf(rng, {1, 3});
        std::vector<double> mask(n);
        for (auto& v : mask) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        add_case("hybrid_warp", {flow, R, t}, [pts, flow, R, t, mask, rng]() mutable {
            return project(hybrid_warp(pts, flow, R, t, mask), rng);
        });
        add_case("merge_final_flow", {flow, R, t}, [pts, flow, R, t, mask, rng]() mutable {
            return project(merge_final_flow(flow, R, t, pts, mask), rng);
        });
    }
    {  // losses (Eqs. of the training objective)
        Rng rng = master.fork(16);
        const int n = 6;
        DTensor logits = rand_leaf(rng, {n, 1}, -2.0, 2.0);
        std::vector<std::uint8_t> labels(n);
        for (auto& l : labels) l = rng.uniform() < 0.4 ? 1 : 0;
        add_case("seg_loss", {logits},
            [logits, labels]() { return seg_loss(logits, labels, 20.0); });

        std::array<DTensor, 4> rot, trans;
        std::vector<DTensor> leaves;
        for (int k = 0; k < 4; ++k) {
            rot[k] = rand_leaf(rng, {3, 3});
            trans[k] = rand_leaf(rng, {1, 3});
            leaves.push_back(rot[k]);
            leaves.push_back(trans[k]);
        }
        RigidTransform gt = axis_rotation(0, 0.4);
        gt.t = {0.2, -0.1, 0.3};
        add_case("ego_loss", leaves, [rot, trans, gt]() { return ego_loss(rot, trans, gt, 1.8); });

        DTensor warped = rand_leaf(rng, {n, 3});
        DTensor qp = rand_const(rng, {5, 3}, -1.5, 1.5);
        std::vector<double> mp(n), mq(5);
        for (auto& v : mp) v = rng.uniform() < 0.6 ? 1.0 : 0.0;
        for (auto& v : mq) v = rng.uniform() < 0.6 ? 1.0 : 0.0;
        add_case("chamfer_loss", {warped},
            [warped, qp, mp, mq]() { return chamfer_masked(warped, qp, mp, mq); });

        PointCloud pos = rand_cloud(rng, n, 1.0);
        DTensor flow = rand_leaf(rng, {n, 3});
        add_case("smoothness_loss", {flow},
            [flow, pos, mp]() { return smoothness_masked(flow, pos, mp, 3); });
    }

    if (include_end_to_end) {
        Rng rng = master.fork(17);
        ModelConfig mc;
        mc.channels = {6, 8, 10, 12};
        mc.knn_k = 64;  // full neighborhoods: correspondence sets stay fixed under probes
        mc.sf_width = 8;
        // the stop-gradient makes the analytic gradient differ from the true
        // derivative by construction; finite differences can only certify the
        // variant without it (its own behavior has a dedicated check)
        mc.use_stop_grad = false;
        auto net = std::make_shared<SceneFlowNet<double>>(mc, rng.next_u64());
        SceneConfig sc;
        sc.points_per_frame = 64;
        sc.num_movers = 1;
        sc.num_structures = 2;
        sc.extent = 12.0;
        sc.seed = rng.next_u64();
        const ScenePair pair = generate(sc);
        LossConfig lc;
        // A handful of warm-up steps first: at init the attention output is
        // near-uniform, which starves the head batch norms of variance and
        // puts the loss in a curvature regime where central differences are
        // meaningless. The check runs at the warmed parameter point.
        for (int step = 0; step < 10; ++step) {
            net->params().zero_grad();
            auto out = net->forward(pair.p, pair.q, /*training=*/true);
            auto lb = total_loss(out, pair, lc);
            backward(lb.total);
            adam_step(net->params(), 0.01);
        }
        add_case("end_to_end_total_loss", registry_leaves(net->params()),
            [net, pair, lc]() {
                auto out = net->forward(pair.p, pair.q, /*training=*/true);
                return total_loss(out, pair, lc).total;
            },
            /*max_probes=*/120, /*step=*/1e-4);
    }

    return cases;
}

std::vector<GradCheckReport> run_gradient_suite(int instances, std::uint64_t seed, double h,
                                                double tol, std::ostream* log) {
    std::map<std::string, GradCheckReport> by_name;
    std::vector<std::string> order;
    for (int i = 0; i < instances; ++i) {
        const bool e2e = i < 2;  // the full-network case is expensive
        auto cases = gradient_suite_cases(seed + static_cast<std::uint64_t>(i) * 7919, e2e);
        for (const auto& c : cases) {
            const double err = check_case(c, h, seed + i);
            auto it = by_name.find(c.name);
            if (it == by_name.end()) {
                by_name[c.name] = {c.name, 1, err, true};
                order.push_back(c.name);
            } else {
                it->second.instances += 1;
                it->second.max_rel_err = std::max(it->second.max_rel_err, err);
            }
        }
    }
    std::vector<GradCheckReport> out;
    for (const auto& name : order) {
        GradCheckReport r = by_name[name];
        r.pass = r.max_rel_err < tol;
        if (log)
            (*log) << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  instances=" << r.instances
                   << "  max_rel_err=" << r.max_rel_err << "\n";
        out.push_back(r);
    }
    return out;
}

}  // namespace egoflow
