#include <benchmark/benchmark.h>

#include "emd/checkpoint.hpp"
#include "emd/glyph.hpp"
#include "emd/nst.hpp"
#include "emd/trainer.hpp"

using namespace emd;

namespace {

// Forward and backward of one 5x5 convolution on a B x C x n x n batch.
void BM_Conv2dTrain(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor x = normal_tensor({4, c, n, n}, 1.0, rng, true);
  const Tensor w = normal_tensor({c, c, 5, 5}, 0.02, rng, true);
  const Tensor b = Tensor::zeros({c}, true);
  for (auto _ : state) {
    Graph g;
    g.backward(ops::sum(g, ops::conv2d(g, x, w, b, 1, 2)));
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dTrain)->Args({16, 64})->Args({32, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);

void BM_Deconv2dTrain(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  const Tensor x = normal_tensor({4, 2 * c, n, n}, 1.0, rng, true);
  const Tensor w = normal_tensor({2 * c, c, 3, 3}, 0.02, rng, true);
  const Tensor b = Tensor::zeros({c}, true);
  for (auto _ : state) {
    Graph g;
    g.backward(ops::sum(g, ops::deconv2d(g, x, w, b, 2, 1, 1)));
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Deconv2dTrain)->Args({16, 32})->Args({64, 8})->Unit(benchmark::kMillisecond);

void BM_BilinearMix(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor s = normal_tensor({4, k}, 1.0, rng, true);
  const Tensor c = normal_tensor({4, k}, 1.0, rng, true);
  const Tensor w = normal_tensor({k, k, k}, 0.02, rng, true);
  for (auto _ : state) {
    Graph g;
    g.backward(ops::sum(g, ops::bilinear_contract(g, s, w, c)));
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_BilinearMix)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

// One optimizer step of the default typeface network, batch 4.
void BM_FontNetTrainStep(benchmark::State& state) {
  const auto corpus = glyph::GlyphCorpus::generate(8, 8, 64, 1);
  FontNet net(FontNetConfig{}, 1);
  AdamState adam(net.params(), AdamConfig{});
  const glyph::TripletSampler sampler(corpus.partition(), 64, 4, 1);
  std::uint64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(net, adam, corpus, sampler.batch(4, step++), 5.0));
}
BENCHMARK(BM_FontNetTrainStep)->Unit(benchmark::kMillisecond);

void BM_FontNetGenerate(benchmark::State& state) {
  FontNet net(FontNetConfig{}, 1);
  const Tensor refs = Tensor::full({1, 4, 64, 64}, 0.5);
  for (auto _ : state) {
    Graph g(Graph::Mode::inference);
    benchmark::DoNotOptimize(net.forward_generate(g, refs, refs, ops::NormMode::eval).data().data());
  }
}
BENCHMARK(BM_FontNetGenerate)->Unit(benchmark::kMillisecond);

void BM_StatisticMatch(benchmark::State& state) {
  Rng rng(4);
  const Tensor f = normal_tensor({1, 32, 32, 32}, 1.0, rng, false);
  const Tensor s = normal_tensor({1, 32, 32, 32}, 2.0, rng, false);
  for (auto _ : state) {
    Graph g(Graph::Mode::inference);
    benchmark::DoNotOptimize(nst::statistic_match(g, f, nst::channel_stats(g, s)).data().data());
  }
}
BENCHMARK(BM_StatisticMatch);

void BM_NstTradeoff(benchmark::State& state) {
  nst::NstNet net(nst::NstConfig{}, 1);
  const Tensor style = Tensor::full({1, 3, 64, 64}, 0.3), content = Tensor::full({1, 3, 64, 64}, 0.7);
  for (auto _ : state) {
    Graph g(Graph::Mode::inference);
    benchmark::DoNotOptimize(net.forward_tradeoff(g, style, content, 0.5).data().data());
  }
}
BENCHMARK(BM_NstTradeoff)->Unit(benchmark::kMillisecond);

void BM_RenderGlyph(benchmark::State& state) {
  const auto style = glyph::style_spec(7, 3);
  const auto content = glyph::glyph_spec(5);
  for (auto _ : state) benchmark::DoNotOptimize(glyph::render_glyph(style, content, 64).pixels.data());
}
BENCHMARK(BM_RenderGlyph);

void BM_CheckpointRoundTrip(benchmark::State& state) {
  const FontNet net(FontNetConfig{}, 1);
  const NamedTensors archive = font_net_archive(net);
  std::size_t bytes = 0;
  for (auto _ : state) {
    const auto encoded = encode_checkpoint(archive);
    bytes += encoded.size();
    benchmark::DoNotOptimize(decode_checkpoint(encoded).size());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
