#include <benchmark/benchmark.h>

#include "egoflow/flow.hpp"
#include "egoflow/losses.hpp"
#include "egoflow/rng.hpp"
#include "egoflow/synth.hpp"

using namespace egoflow;

namespace {

PointCloud random_cloud(int n, std::uint64_t seed) {
    Rng rng(seed);
    PointCloud pc(n);
    for (auto& p : pc)
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(-20, 20);
    return pc;
}

void BM_Fps(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    PointCloud pc = random_cloud(n, 1);
    for (auto _ : state) benchmark::DoNotOptimize(fps(pc, n / 4, 0));
}
BENCHMARK(BM_Fps)->Arg(1024)->Arg(4096);

void BM_Knn16(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    PointCloud pc = random_cloud(n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(knn(pc, pc, 16));
}
BENCHMARK(BM_Knn16)->Arg(1024)->Arg(4096);

void BM_KabschWeighted(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    PointCloud src = random_cloud(n, 3);
    RigidTransform gt = axis_rotation(2, 0.4);
    gt.t = {1, 0, -2};
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(gt.apply(p));
    std::vector<double> w(n, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(kabsch_weighted(src, dst, w));
}
BENCHMARK(BM_KabschWeighted)->Arg(100)->Arg(1000);

void BM_BuildPyramid(benchmark::State& state) {
    PointCloud pc = random_cloud(static_cast<int>(state.range(0)), 4);
    for (auto _ : state) benchmark::DoNotOptimize(build_pyramid(pc));
}
BENCHMARK(BM_BuildPyramid)->Arg(1024);

void BM_ForwardDesk(benchmark::State& state) {
    SceneConfig sc;
    sc.points_per_frame = static_cast<int>(state.range(0));
    sc.seed = 5;
    ScenePair pair = generate(sc);
    ModelConfig mc;
    mc.channels = {16, 32, 64, 128};
    SceneFlowNet<float> net(mc, 1);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(pair.p, pair.q, false));
}
BENCHMARK(BM_ForwardDesk)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    SceneConfig sc;
    sc.points_per_frame = static_cast<int>(state.range(0));
    sc.seed = 6;
    ScenePair pair = generate(sc);
    ModelConfig mc;
    mc.channels = {16, 32, 64, 128};
    SceneFlowNet<float> net(mc, 2);
    LossConfig lc;
    for (auto _ : state) {
        net.params().zero_grad();
        auto out = net.forward(pair.p, pair.q, true);
        auto lb = total_loss(out, pair, lc);
        backward(lb.total);
        adam_step(net.params(), 0.001f);
    }
}
BENCHMARK(BM_TrainStep)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Generate(benchmark::State& state) {
    SceneConfig sc;
    sc.points_per_frame = static_cast<int>(state.range(0));
    std::uint64_t seed = 0;
    for (auto _ : state) {
        sc.seed = seed++;
        benchmark::DoNotOptimize(generate(sc));
    }
}
BENCHMARK(BM_Generate)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
