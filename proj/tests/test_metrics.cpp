#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "egoflow/metrics.hpp"
#include "egoflow/rng.hpp"

using namespace egoflow;

TEST_CASE("flow_metrics") {
    SUBCASE("perfect prediction") {
        std::vector<Vec3> gt = {{1, 0, 0}, {0, 2, 0}, {0, 0, 0.5}};
        auto m = flow_metrics(gt, gt);
        CHECK(m.epe3d == doctest::Approx(0.0));
        CHECK(m.acc3ds == doctest::Approx(1.0));
        CHECK(m.acc3dr == doctest::Approx(1.0));
        CHECK(m.out3d == doctest::Approx(0.0));
    }
    SUBCASE("0.04 m error on a 1 m flow counts as strictly accurate") {
        std::vector<Vec3> gt = {{1, 0, 0}};
        std::vector<Vec3> pred = {{1.04, 0, 0}};
        auto m = flow_metrics(pred, gt);
        CHECK(m.acc3ds == doctest::Approx(1.0));
        CHECK(m.epe3d == doctest::Approx(0.04));
    }
    SUBCASE("matches a per-point brute-force recomputation") {
        Rng rng(1);
        for (int trial = 0; trial < 10; ++trial) {
            const int n = 10;
            std::vector<Vec3> gt(n), pred(n);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c) {
                    gt[i][c] = rng.uniform(-1, 1);
                    pred[i][c] = gt[i][c] + rng.uniform(-0.5, 0.5);
                }
            auto m = flow_metrics(pred, gt);
            double epe_sum = 0;
            int ns = 0, nr = 0, no = 0;
            for (int i = 0; i < n; ++i) {
                double e = 0, g = 0;
                for (int c = 0; c < 3; ++c) {
                    e += (pred[i][c] - gt[i][c]) * (pred[i][c] - gt[i][c]);
                    g += gt[i][c] * gt[i][c];
                }
                e = std::sqrt(e);
                g = std::sqrt(g);
                const double rel = g > 0 ? e / g : (e == 0 ? 0 : 1e300);
                epe_sum += e;
                if (e < 0.05 || rel < 0.05) ++ns;
                if (e < 0.1 || rel < 0.1) ++nr;
                if (e > 0.3 || rel > 0.1) ++no;
            }
            CHECK(m.epe3d == doctest::Approx(epe_sum / n).epsilon(1e-12));
            CHECK(m.acc3ds == doctest::Approx(static_cast<double>(ns) / n));
            CHECK(m.acc3dr == doctest::Approx(static_cast<double>(nr) / n));
            CHECK(m.out3d == doctest::Approx(static_cast<double>(no) / n));
        }
    }
    SUBCASE("threshold nesting and outlier complement") {
        Rng rng(2);
        const int n = 500;
        std::vector<Vec3> gt(n), pred(n);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                gt[i][c] = rng.uniform(-1, 1);
                pred[i][c] = gt[i][c] + rng.uniform(-0.4, 0.4);
            }
        auto m = flow_metrics(pred, gt);
        CHECK(m.acc3ds <= m.acc3dr);
        // Out3D + fraction(EPE<=0.3 AND rel<=10%) = 1
        int nin = 0;
        for (int i = 0; i < n; ++i) {
            double e = 0, g = 0;
            for (int c = 0; c < 3; ++c) {
                e += (pred[i][c] - gt[i][c]) * (pred[i][c] - gt[i][c]);
                g += gt[i][c] * gt[i][c];
            }
            e = std::sqrt(e);
            g = std::sqrt(g);
            const double rel = g > 0 ? e / g : (e == 0 ? 0 : 1e300);
            if (e <= 0.3 && rel <= 0.1) ++nin;
        }
        CHECK(m.out3d + static_cast<double>(nin) / n == doctest::Approx(1.0));
    }
    SUBCASE("zero ground truth: zero error counts, any error is an outlier") {
        std::vector<Vec3> gt = {{0, 0, 0}, {0, 0, 0}};
        std::vector<Vec3> pred = {{0, 0, 0}, {0.04, 0, 0}};
        auto m = flow_metrics(pred, gt);
        // first point: rel treated as 0 -> accurate. second: rel = inf but
        // EPE 0.04 < 0.05 -> still strictly accurate, yet an outlier by rel.
        CHECK(m.acc3ds == doctest::Approx(1.0));
        CHECK(m.out3d == doctest::Approx(0.5));
    }
    SUBCASE("permutation invariance") {
        Rng rng(3);
        const int n = 50;
        std::vector<Vec3> gt(n), pred(n);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                gt[i][c] = rng.uniform(-1, 1);
                pred[i][c] = gt[i][c] + rng.uniform(-0.2, 0.2);
            }
        auto m1 = flow_metrics(pred, gt);
        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<Vec3> gt2(n), pred2(n);
        for (int i = 0; i < n; ++i) {
            gt2[i] = gt[perm[i]];
            pred2[i] = pred[perm[i]];
        }
        auto m2 = flow_metrics(pred2, gt2);
        CHECK(m1.epe3d == doctest::Approx(m2.epe3d).epsilon(1e-12));
        CHECK(m1.acc3ds == doctest::Approx(m2.acc3ds));
        CHECK(m1.acc3dr == doctest::Approx(m2.acc3dr));
        CHECK(m1.out3d == doctest::Approx(m2.out3d));
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(flow_metrics({{0, 0, 0}}, {}), shape_error);
    }
}

TEST_CASE("ego_metrics") {
    RigidTransform gt = axis_rotation(2, 0.77);
    gt.t = {1, -2, 0.5};
    SUBCASE("identity errors") {
        auto m = ego_metrics(gt, gt);
        CHECK(m.rae_deg == doctest::Approx(0.0));
        CHECK(m.rte == doctest::Approx(0.0));
    }
    SUBCASE("one degree offset") {
        RigidTransform pred = axis_rotation(2, 1.0 * M_PI / 180.0).compose(gt);
        auto m = ego_metrics(pred, gt);
        CHECK(std::abs(m.rae_deg - 1.0) < 1e-6);
    }
    SUBCASE("3-4-5 translation") {
        RigidTransform pred = gt;
        pred.t = {gt.t[0] + 0.03, gt.t[1] + 0.04, gt.t[2]};
        CHECK(ego_metrics(pred, gt).rte == doctest::Approx(0.05));
    }
}

TEST_CASE("mask_metrics") {
    SUBCASE("perfect mask") {
        std::vector<std::uint8_t> m = {1, 0, 1, 0, 0};
        auto r = mask_metrics(m, m);
        CHECK(r.prec_fg == doctest::Approx(1.0));
        CHECK(r.rec_fg == doctest::Approx(1.0));
        CHECK(r.prec_bg == doctest::Approx(1.0));
        CHECK(r.rec_bg == doctest::Approx(1.0));
        CHECK_FALSE(r.degenerate);
    }
    SUBCASE("all-BG prediction on a scene with FG") {
        std::vector<std::uint8_t> pred = {0, 0, 0, 0};
        std::vector<std::uint8_t> gt = {1, 0, 1, 0};
        auto r = mask_metrics(pred, gt);
        CHECK(r.rec_fg == doctest::Approx(0.0));
        CHECK(r.degenerate);  // FG precision has an empty denominator
        CHECK(r.prec_fg == doctest::Approx(1.0));
    }
    SUBCASE("confusion-matrix hand case TP=1 FP=1 FN=1") {
        std::vector<std::uint8_t> pred = {1, 1, 0};
        std::vector<std::uint8_t> gt = {1, 0, 1};
        auto r = mask_metrics(pred, gt);
        CHECK(r.prec_fg == doctest::Approx(0.5));
        CHECK(r.rec_fg == doctest::Approx(0.5));
    }
}

TEST_CASE("metrics csv report") {
    namespace fs = std::filesystem;
    std::vector<SceneMetricsRow> rows(2);
    rows[0].name = "scene_a";
    rows[0].flow.epe3d = 0.1;
    rows[0].flow.count = 100;
    rows[1].name = "scene_b";
    rows[1].flow.epe3d = 0.3;
    rows[1].flow.count = 300;
    const std::string path = (fs::temp_directory_path() / "egoflow_metrics.csv").string();
    write_metrics_csv(rows, path);
    std::ifstream is(path);
    std::string line;
    int count = 0;
    while (std::getline(is, line)) ++count;
    CHECK(count == 4);  // header + 2 scenes + aggregate

    // pooled aggregate weighs by point count
    auto agg = aggregate_metrics(rows, false);
    CHECK(agg.flow.epe3d == doctest::Approx((0.1 * 100 + 0.3 * 300) / 400));
    auto per_scene = aggregate_metrics(rows, true);
    CHECK(per_scene.flow.epe3d == doctest::Approx(0.2));
    std::remove(path.c_str());
}
