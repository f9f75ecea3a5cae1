#include <benchmark/benchmark.h>

#include "muscl/harness.hpp"
#include "muscl/loss.hpp"
#include "muscl/meta_opt.hpp"
#include "muscl/nets.hpp"
#include "muscl/pairgen.hpp"
#include "muscl/synth.hpp"
#include "muscl/tape.hpp"

using namespace muscl;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

void bench_conv_forward(benchmark::State& state) {
    Rng rng(7);
    Tensor x = random_tensor({8, 16, 16}, rng);
    Tensor w = random_tensor({16, 8, 3, 3}, rng);
    Tensor b = random_tensor({16}, rng);
    for (auto _ : state) {
        Tape tape;
        Var out = conv2d(pad2d(tape.constant(x), 1), tape.constant(w), tape.constant(b));
        benchmark::DoNotOptimize(out.value());
    }
}
BENCHMARK(bench_conv_forward);

void bench_conv_backward(benchmark::State& state) {
    Rng rng(7);
    Tensor x = random_tensor({8, 16, 16}, rng);
    Tensor w = random_tensor({16, 8, 3, 3}, rng);
    Tensor b = random_tensor({16}, rng);
    for (auto _ : state) {
        Tape tape;
        Var xv = tape.leaf(x);
        Var out = sum(conv2d(pad2d(xv, 1), tape.leaf(w), tape.leaf(b)));
        auto grads = tape.backward(out);
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(bench_conv_backward);

struct TrainFixture {
    std::vector<synth::FrameSet> sets;
    meta::TrainState state;
    meta::OptimConfig cfg;
    pairs::PairGenConfig pg;

    TrainFixture() {
        synth::SynthConfig sc;
        sc.n_videos = 12;
        sc.frames_per_video = 40;
        sc.seed = 11;
        auto corpus = synth::generate_synthetic_corpus(sc);
        for (const auto& c : corpus) sets.push_back(synth::extract_frame_set(c));
        nets::ArchConfig arch;
        arch.conv_channels = {4, 8};
        arch.repr_dim = 32;
        arch.proj_dim = 16;
        Rng rng(3);
        auto [m, w] = nets::init_params(arch, rng);
        state.theta_m = std::move(m);
        state.theta_c = std::move(w);
        cfg.batch_size = 8;
    }
};

void bench_meta_train_step(benchmark::State& state) {
    TrainFixture f;
    Rng rng(5);
    for (auto _ : state) {
        auto batch = pairs::make_batch(f.sets, f.cfg.batch_size, f.pg, rng,
                                       pairs::FallbackPolicy::Degrade);
        auto vbatch = pairs::make_batch(f.sets, f.cfg.batch_size, f.pg, rng,
                                        pairs::FallbackPolicy::Degrade);
        auto info = meta::meta_train_step(f.state, batch, vbatch, f.cfg);
        benchmark::DoNotOptimize(info.train_loss);
    }
}
BENCHMARK(bench_meta_train_step)->Unit(benchmark::kMillisecond);

void bench_plain_train_step(benchmark::State& state) {
    TrainFixture f;
    f.cfg.mode = meta::OptimConfig::Mode::Plain;
    Rng rng(5);
    for (auto _ : state) {
        auto batch = pairs::make_batch(f.sets, f.cfg.batch_size, f.pg, rng,
                                       pairs::FallbackPolicy::Degrade);
        auto info = meta::plain_train_step(f.state, batch, f.cfg);
        benchmark::DoNotOptimize(info.train_loss);
    }
}
BENCHMARK(bench_plain_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
