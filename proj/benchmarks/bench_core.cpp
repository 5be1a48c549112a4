#include <benchmark/benchmark.h>

#include "framecast/eval.hpp"
#include "framecast/flow.hpp"
#include "framecast/losses.hpp"
#include "framecast/nets.hpp"
#include "framecast/synth.hpp"

using namespace framecast;

namespace {

Tensor random_image(int h, int w, Rng& rng) {
    Tensor t({h, w});
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

void BM_BlockMatching(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Rng rng(1);
    const Tensor f0 = random_image(size, size, rng);
    const Tensor f1 = random_image(size, size, rng);
    const flow::BlockMatchParams params{5, 4};
    for (auto _ : state) {
        benchmark::DoNotOptimize(flow::estimate_flow(f0, f1, params));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BlockMatching)->Arg(32)->Arg(64)->Arg(128)->Complexity();

void BM_Ssim(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Rng rng(2);
    const Tensor a = random_image(size, size, rng);
    const Tensor b = random_image(size, size, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(eval::ssim(a, b));
    }
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(64)->Arg(128);

void BM_GenerateClip(benchmark::State& state) {
    synth::ClipConfig cfg;
    cfg.height = cfg.width = static_cast<int>(state.range(0));
    cfg.frames = 20;
    cfg.n_sprites = 2;
    uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(synth::generate_clip(cfg, seed++));
    }
}
BENCHMARK(BM_GenerateClip)->Arg(32)->Arg(64);

void BM_EncodeContent(benchmark::State& state) {
    model::NetConfig net;
    net.base_width = static_cast<int>(state.range(0));
    model::ModelBundle bundle(net, 32, 32, 1, 10, 3);
    Rng rng(3);
    Tensor batch({4, 1, 32, 32});
    for (size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform(0.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bundle.encode_content(batch));
    }
}
BENCHMARK(BM_EncodeContent)->Arg(4)->Arg(16);

void BM_Rollout(benchmark::State& state) {
    model::NetConfig net;
    net.base_width = 4;
    model::ModelBundle bundle(net, 32, 32, 1, 10, 3);
    Rng rng(4);
    std::vector<Tensor> frames, flows;
    for (int i = 0; i < 10; ++i) frames.push_back(random_image(32, 32, rng));
    for (int i = 0; i < 9; ++i) {
        Tensor f({2, 32, 32});
        for (size_t j = 0; j < f.size(); ++j) f[j] = rng.uniform(0.0, 1.0);
        flows.push_back(std::move(f));
    }
    const int horizon = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(model::rollout(bundle, frames, flows, horizon));
    }
}
BENCHMARK(BM_Rollout)->Arg(1)->Arg(3)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
