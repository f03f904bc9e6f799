#include <benchmark/benchmark.h>

#include "canet/adam.hpp"
#include "canet/losses_metrics.hpp"
#include "canet/network.hpp"
#include "canet/transformer_stream.hpp"

using namespace canet;

namespace {

Tensor random(Shape shape, std::uint64_t seed, bool grad = false) {
    Rng rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    Tensor x = random({4, c, hw, hw}, 1), w = random({c, c, 3, 3}, 2);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor(), 1, 1));
    state.SetItemsProcessed(state.iterations() * 4 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64})->Args({32, 32})->Args({32, 16})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    Tensor x = random({4, c, hw, hw}, 1, true), w = random({c, c, 3, 3}, 2, true);
    for (auto _ : state) {
        x.zero_grad();
        w.zero_grad();
        backward(sum(conv2d(x, w, Tensor(), 1, 1)));
    }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 64})->Args({32, 16})->Unit(benchmark::kMicrosecond);

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a = random({n, n}, 3), b = random({n, n}, 4);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_TransformerLayer(benchmark::State& state) {
    ParamStore store;
    Rng rng(5);
    TransformerParams tp = init_transformer(store, {3, 64, 64, 8, 64, 1, 4}, rng);
    Tensor t = random({4, 64, 64}, 6);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(mlp_block(msa_block(t, tp.layers[0], 4), tp.layers[0]));
}
BENCHMARK(BM_TransformerLayer)->Unit(benchmark::kMicrosecond);

// One optimizer step of the default desk-scale model on a batch of four.
void BM_TrainStep(benchmark::State& state) {
    Network net(ModelConfig{}, 0);
    AdamState adam = AdamState::init(net.params());
    Batch batch;
    batch.images = random({4, 3, 64, 64}, 7);
    batch.masks = Tensor::zeros({4, 1, 64, 64});
    batch.boundaries = Tensor::zeros({4, 1, 64, 64});
    batch.ric = Tensor::zeros({4, 64, 1});
    for (auto _ : state) {
        net.params().zero_grad();
        const LossTerms terms = joint_loss(net.forward(batch.images, Mode::train), batch, LossWeights{});
        backward(terms.total);
        adam_step(net.params(), adam, 1e-4);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
    Network net(ModelConfig{}, 0);
    Tensor image = random({1, 3, 64, 64}, 8);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(image, Mode::eval).mask);
}
BENCHMARK(BM_Inference)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
