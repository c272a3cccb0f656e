#include <doctest.h>

#include <cmath>
#include <set>

#include "egoflow/flow.hpp"
#include "egoflow/metrics.hpp"
#include "egoflow/rng.hpp"
#include "egoflow/synth.hpp"

using namespace egoflow;
using DT = Tensor<double>;

namespace {
PointCloud random_cloud(Rng& rng, int n, double spread = 5.0) {
    PointCloud pc(n);
    for (auto& p : pc)
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(-spread, spread);
    return pc;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}
}  // namespace

TEST_CASE("cost volume") {
    ParamRegistry<double> score_reg(321);
    LinearLayer<double> score4(score_reg, "s4", 3 + 4, 1);
    LinearLayer<double> score2(score_reg, "s2", 3 + 2, 1);
    SUBCASE("identical clouds and features: self-match, one-hot limit") {
        Rng rng(1);
        const int n = 10;
        PointCloud pc = random_cloud(rng, n, 2.0);
        DT pts = points_tensor<double>(pc);
        DT hf = DT::from({n, 4}, random_vec(rng, n * 4));
        auto cv = cost_volume(pts, pts, hf, hf, score4, /*feature_space=*/false, 4);
        for (int i = 0; i < n; ++i) CHECK(cv.nbr.at(i, 0) == i);  // 1-NN is self

        // weight rows sum to 1
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (int j = 0; j < cv.weights.dim(1); ++j)
                s += cv.weights.data()[static_cast<std::size_t>(i) * cv.weights.dim(1) + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }

        // with a one-hot weight on the self column the soft point is exact
        std::vector<double> onehot(static_cast<std::size_t>(n) * cv.nbr.k, 0.0);
        for (int i = 0; i < n; ++i) onehot[static_cast<std::size_t>(i) * cv.nbr.k] = 1.0;
        DT q_nbr = gather_neighbors(pts, cv.nbr.indices, cv.nbr.k);
        auto exact = reduce_wsum_k(q_nbr, DT::from({n, cv.nbr.k}, onehot));
        for (int i = 0; i < n * 3; ++i) CHECK(exact.data()[i] == doctest::Approx(pts.data()[i]));

        // soft points live in the convex hull of the neighbors: here all
        // neighbors are cloud points, so P_hat stays within the bounding box
        for (int c = 0; c < 3; ++c) {
            double lo = 1e30, hi = -1e30;
            for (int i = 0; i < n; ++i) {
                lo = std::min(lo, pts.data()[i * 3 + c]);
                hi = std::max(hi, pts.data()[i * 3 + c]);
            }
            for (int i = 0; i < n; ++i) {
                CHECK(cv.soft_pts.data()[i * 3 + c] >= lo - 1e-9);
                CHECK(cv.soft_pts.data()[i * 3 + c] <= hi + 1e-9);
            }
        }
    }
    SUBCASE("feature-space mode matches distant clusters by feature identity") {
        // two spatially separated clusters; source features match the far one
        const int per = 6;
        PointCloud q;
        std::vector<double> hf_q;
        Rng rng(2);
        for (int i = 0; i < per; ++i) {  // cluster A at x ~ 0, feature ~ (1,0)
            q.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0});
            hf_q.push_back(1.0 + rng.uniform(-0.01, 0.01));
            hf_q.push_back(rng.uniform(-0.01, 0.01));
        }
        for (int i = 0; i < per; ++i) {  // cluster B at x ~ 20, feature ~ (0,1)
            q.push_back({20 + rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0});
            hf_q.push_back(rng.uniform(-0.01, 0.01));
            hf_q.push_back(1.0 + rng.uniform(-0.01, 0.01));
        }
        // source sits at cluster A's location but carries cluster B features
        PointCloud src = {{0, 0, 0}, {0.2, 0, 0}};
        std::vector<double> hf_p = {0, 1, 0, 1};
        auto cv = cost_volume(points_tensor<double>(src), points_tensor<double>(q),
                              DT::from({2, 2}, hf_p), DT::from({12, 2}, hf_q), score2,
                              /*feature_space=*/true, 4);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 4; ++j) CHECK(cv.nbr.at(i, j) >= per);  // all in cluster B
    }
}

TEST_CASE("hybrid_warp") {
    Rng rng(3);
    const int n = 8;
    PointCloud pc = random_cloud(rng, n, 2.0);
    DT pts = points_tensor<double>(pc);
    std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    DT R_id = DT::from({3, 3}, eye);
    DT t_zero = DT::zeros({1, 3});

    SUBCASE("all-BG with identity transform is the identity") {
        DT flow = DT::from({n, 3}, random_vec(rng, n * 3));
        auto w = hybrid_warp(pts, flow, R_id, t_zero, std::vector<double>(n, 0.0));
        for (std::size_t e = 0; e < w.numel(); ++e)
            CHECK(w.data()[e] == doctest::Approx(pts.data()[e]));
    }
    SUBCASE("all-FG with zero flow is the identity") {
        RigidTransform some = axis_rotation(2, 0.5);
        some.t = {1, 2, 3};
        std::vector<double> rr(some.R.begin(), some.R.end());
        auto w = hybrid_warp(pts, DT::zeros({n, 3}), DT::from({3, 3}, rr),
                             DT::from({1, 3}, {1, 2, 3}), std::vector<double>(n, 1.0));
        for (std::size_t e = 0; e < w.numel(); ++e)
            CHECK(w.data()[e] == doctest::Approx(pts.data()[e]));
    }
    SUBCASE("mixed mask: FG rows shift x, BG rows shift y") {
        std::vector<double> flow_d(n * 3, 0.0);
        for (int i = 0; i < n; ++i) flow_d[i * 3] = 1.0;  // flow = (1,0,0)
        std::vector<double> mask(n);
        for (int i = 0; i < n; ++i) mask[i] = (i % 2 == 0) ? 1.0 : 0.0;
        auto w = hybrid_warp(pts, DT::from({n, 3}, flow_d), R_id, DT::from({1, 3}, {0, 1, 0}),
                             mask);
        for (int i = 0; i < n; ++i) {
            const double ex = pc[i][0] + (mask[i] > 0.5 ? 1.0 : 0.0);
            const double ey = pc[i][1] + (mask[i] > 0.5 ? 0.0 : 1.0);
            CHECK(w.data()[i * 3 + 0] == doctest::Approx(ex));
            CHECK(w.data()[i * 3 + 1] == doctest::Approx(ey));
            CHECK(w.data()[i * 3 + 2] == doctest::Approx(pc[i][2]));
        }
    }
}

TEST_CASE("ego branch") {
    Rng rng(4);
    const int n = 24;
    PointCloud pc = random_cloud(rng, n, 3.0);
    RigidTransform gt = axis_rotation(2, 0.3);
    gt.t = {0.5, -0.2, 0.1};
    PointCloud q = apply_transform(gt, pc);

    DT pts = points_tensor<double>(pc);
    DT qts = points_tensor<double>(q);
    // features that identify corresponding points: use coordinates themselves
    DT hf_p = pts;
    DT hf_q = points_tensor<double>(apply_transform(gt.inverse(), q));  // == pc

    ParamRegistry<double> reg(5);
    Mlp<double> conf(reg, "conf", {3 + 3, 8, 1}, true);
    LinearLayer<double> score(reg, "cv_score", 3 + 3, 1);

    SUBCASE("perfect correspondences recover the transform") {
        auto cv = cost_volume(pts, qts, hf_p, hf_q, score, /*feature_space=*/true, 1);
        auto ego = ego_branch(cv, pts, std::vector<double>(n, 1.0), conf, false);
        CHECK_FALSE(ego.fallback_uniform);
        RigidTransform T;
        for (int i = 0; i < 9; ++i) T.R[i] = ego.R.data()[i];
        for (int c = 0; c < 3; ++c) T.t[c] = ego.t.data()[c];
        auto em = ego_metrics(T, gt);
        CHECK(em.rae_deg < 1e-5);
        CHECK(em.rte < 1e-7);
    }
    SUBCASE("all-FG mask falls back to uniform weights with a flag") {
        auto cv = cost_volume(pts, qts, hf_p, hf_q, score, true, 1);
        auto ego = ego_branch(cv, pts, std::vector<double>(n, 0.0), conf, false);
        CHECK(ego.fallback_uniform);
        // uniform fallback on perfect correspondences still solves the fit
        RigidTransform T;
        for (int i = 0; i < 9; ++i) T.R[i] = ego.R.data()[i];
        for (int c = 0; c < 3; ++c) T.t[c] = ego.t.data()[c];
        CHECK(ego_metrics(T, gt).rae_deg < 1e-5);
    }
}

TEST_CASE("kabsch weight-scale invariance at the tensor level") {
    Rng rng(6);
    const int n = 10;
    PointCloud src = random_cloud(rng, n, 1.0);
    RigidTransform gt = axis_rotation(1, 0.6);
    gt.t = {0.3, 0.1, -0.4};
    std::vector<double> dst;
    for (const auto& p : src) {
        Vec3 m = gt.apply(p);
        for (int c = 0; c < 3; ++c) dst.push_back(m[c] + rng.uniform(-0.05, 0.05));
    }
    std::vector<double> w = random_vec(rng, n, 0.1, 1.0);
    std::vector<double> w2 = w;
    for (auto& v : w2) v *= 2.0;
    auto [r1, t1] = kabsch_transform(points_tensor<double>(src), DT::from({n, 3}, dst),
                                     DT::from({n}, w));
    auto [r2, t2] = kabsch_transform(points_tensor<double>(src), DT::from({n, 3}, dst),
                                     DT::from({n}, w2));
    for (int i = 0; i < 9; ++i) CHECK(r1.data()[i] == doctest::Approx(r2.data()[i]).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(t1.data()[c] == doctest::Approx(t2.data()[c]).epsilon(1e-12));
}

TEST_CASE("flow feature update") {
    SUBCASE("identical rows give identical outputs") {
        ParamRegistry<double> reg(7);
        Mlp<double> mlp(reg, "u", {4, 4}, false);
        std::vector<double> row = {0.3, -0.2, 0.9, 0.1};
        std::vector<double> data;
        for (int i = 0; i < 5; ++i) data.insert(data.end(), row.begin(), row.end());
        auto out = flow_feature_update(DT::from({5, 4}, data), mlp, 3, false);
        for (int i = 1; i < 5; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(out.data()[i * 4 + j] == doctest::Approx(out.data()[j]));
    }
    SUBCASE("single point clips K and reduces to the MLP") {
        ParamRegistry<double> reg(8);
        Mlp<double> mlp(reg, "u", {4, 4}, false);
        DT x = DT::from({1, 4}, {1, 2, 3, 4});
        auto out = flow_feature_update(x, mlp, 16, false);
        auto direct = mlp.forward(x, false);
        for (int j = 0; j < 4; ++j) CHECK(out.data()[j] == doctest::Approx(direct.data()[j]));
    }
}

TEST_CASE("dual attention") {
    Rng rng(9);
    const int n = 8, c = 5;
    PointCloud pts = random_cloud(rng, n, 1.0);
    IndexTable nbr = knn(pts, pts, 4);
    ParamRegistry<double> reg(10);
    LinearLayer<double> a1(reg, "a1", c, 1), a2(reg, "a2", c, 1);

    SUBCASE("uniform neighborhood features average uniformly") {
        std::vector<double> row = {1, 2, 3, 4, 5};
        std::vector<double> data;
        for (int i = 0; i < n; ++i) data.insert(data.end(), row.begin(), row.end());
        auto out = dual_attention(DT::from({n, c}, data), nbr, a1, a2);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) CHECK(out.data()[i * c + j] == doctest::Approx(row[j]));
    }
    SUBCASE("invariant to neighbor ordering within a row") {
        DT x = DT::from({n, c}, random_vec(rng, n * c));
        auto base = dual_attention(x, nbr, a1, a2);
        IndexTable shuffled = nbr;
        Rng srng(11);
        for (int i = 0; i < n; ++i) {
            std::vector<int> row(shuffled.indices.begin() + i * shuffled.k,
                                 shuffled.indices.begin() + (i + 1) * shuffled.k);
            srng.shuffle(row);
            std::copy(row.begin(), row.end(), shuffled.indices.begin() + i * shuffled.k);
        }
        auto out = dual_attention(x, shuffled, a1, a2);
        for (std::size_t e = 0; e < out.numel(); ++e)
            CHECK(out.data()[e] == doctest::Approx(base.data()[e]).epsilon(1e-10));
    }
}

TEST_CASE("merge_final_flow") {
    Rng rng(12);
    const int n = 10;
    PointCloud pc = random_cloud(rng, n, 2.0);
    DT pts = points_tensor<double>(pc);
    DT flow = DT::from({n, 3}, random_vec(rng, n * 3));
    std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    SUBCASE("all-FG returns the branch flow") {
        auto out = merge_final_flow(flow, DT::from({3, 3}, eye), DT::from({1, 3}, {9, 9, 9}),
                                    pts, std::vector<double>(n, 1.0));
        for (std::size_t e = 0; e < out.numel(); ++e)
            CHECK(out.data()[e] == doctest::Approx(flow.data()[e]));
    }
    SUBCASE("all-BG with a pure translation returns that translation") {
        auto out = merge_final_flow(flow, DT::from({3, 3}, eye),
                                    DT::from({1, 3}, {0.25, -1, 0.5}), pts,
                                    std::vector<double>(n, 0.0));
        for (int i = 0; i < n; ++i) {
            CHECK(out.data()[i * 3 + 0] == doctest::Approx(0.25));
            CHECK(out.data()[i * 3 + 1] == doctest::Approx(-1.0));
            CHECK(out.data()[i * 3 + 2] == doctest::Approx(0.5));
        }
    }
    SUBCASE("mixed mask is an exact per-row selection") {
        RigidTransform T = axis_rotation(2, 0.2);
        T.t = {0.1, 0.2, 0.3};
        std::vector<double> rr(T.R.begin(), T.R.end());
        std::vector<double> mask(n);
        for (int i = 0; i < n; ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;
        auto out = merge_final_flow(flow, DT::from({3, 3}, rr),
                                    DT::from({1, 3}, {T.t[0], T.t[1], T.t[2]}), pts, mask);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                const double ego = T.apply(pc[i])[c] - pc[i][c];
                const double expect = mask[i] > 0.5 ? flow.data()[i * 3 + c] : ego;
                CHECK(out.data()[i * 3 + c] == doctest::Approx(expect).epsilon(1e-12));
            }
    }
}

TEST_CASE("full forward: shapes, weight rows, hard selections") {
    SceneConfig sc;
    sc.points_per_frame = 128;
    sc.num_movers = 1;
    sc.num_structures = 2;
    sc.extent = 15.0;
    sc.seed = 77;
    auto pair = generate(sc);

    ModelConfig mc;
    mc.channels = {4, 6, 8, 10};
    mc.sf_width = 8;
    SceneFlowNet<double> net(mc, 123);
    auto out = net.forward(pair.p, pair.q, /*training=*/false);

    CHECK(out.final_flow.dim(0) == static_cast<int>(pair.p.size()));
    CHECK(out.final_flow.dim(1) == 3);
    for (int l = 0; l < 4; ++l) {
        const auto& sc_out = out.scales[l];
        CHECK(sc_out.flow.dim(0) == static_cast<int>(out.pyr_p.levels[l].points.size()));
        CHECK(sc_out.flow_feat.dim(1) == mc.sf_width);
        // attentive weight rows sum to 1 at every scale
        const int kk = sc_out.cv_weights.dim(1);
        for (int i = 0; i < sc_out.cv_weights.dim(0); ++i) {
            double s = 0;
            for (int j = 0; j < kk; ++j)
                s += sc_out.cv_weights.data()[static_cast<std::size_t>(i) * kk + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
        RigidTransform T = out.transform(l);
        CHECK(T.orthonormality_error() < 1e-6);
    }

    // final flow is an exact per-point selection between branch and ego flow
    const auto& fg = out.seg_p.fg[0];
    for (int i = 0; i < out.final_flow.dim(0); ++i) {
        RigidTransform T0 = out.transform(0);
        for (int c = 0; c < 3; ++c) {
            const double branch = out.scales[0].flow.data()[i * 3 + c];
            const double ego = T0.apply(pair.p[i])[c] - pair.p[i][c];
            const double expect = fg[i] > 0.5 ? branch : ego;
            CHECK(out.final_flow.data()[i * 3 + c] == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("component toggles change exactly the intended parameter sets") {
    ModelConfig base;
    base.channels = {4, 6, 8, 10};
    base.sf_width = 8;

    auto names = [](const ModelConfig& mc) {
        SceneFlowNet<double> net(mc, 1);
        std::set<std::string> out;
        for (const auto& p : net.params().params()) out.insert(p->name);
        return out;
    };
    const auto all = names(base);

    auto diff = [&](const ModelConfig& mc) {
        auto n = names(mc);
        std::set<std::string> removed;
        for (const auto& x : all)
            if (!n.count(x)) removed.insert(x);
        for (const auto& x : n) CHECK(all.count(x));  // toggles only remove
        return removed;
    };

    SUBCASE("mask_in_ego / hybrid_warp / stop_grad add no parameters") {
        for (auto flag : {0, 1, 2}) {
            ModelConfig mc = base;
            if (flag == 0) mc.use_mask_in_ego = false;
            if (flag == 1) mc.use_hybrid_warp = false;
            if (flag == 2) mc.use_stop_grad = false;
            CHECK(diff(mc).empty());
        }
    }
    SUBCASE("feature update removes exactly the update MLPs") {
        ModelConfig mc = base;
        mc.use_feature_update = false;
        for (const auto& name : diff(mc)) CHECK(name.find(".update.") != std::string::npos);
        CHECK_FALSE(diff(mc).empty());
    }
    SUBCASE("attention refinement removes exactly the attention layers") {
        ModelConfig mc = base;
        mc.use_attention_refine = false;
        for (const auto& name : diff(mc)) {
            const bool is_att = name.find(".att1.") != std::string::npos ||
                                name.find(".att2.") != std::string::npos;
            CHECK(is_att);
        }
        CHECK_FALSE(diff(mc).empty());
    }
    SUBCASE("hybrid features removes exactly the context encoder") {
        ModelConfig mc = base;
        mc.use_hybrid_features = false;
        for (const auto& name : diff(mc)) CHECK(name.rfind("backbone.ctx", 0) == 0);
        CHECK_FALSE(diff(mc).empty());
    }
}
