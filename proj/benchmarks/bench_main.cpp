#include <benchmark/benchmark.h>

#include "poisonlab/corpus.hpp"
#include "poisonlab/embedding.hpp"
#include "poisonlab/metrics.hpp"
#include "poisonlab/nn.hpp"
#include "poisonlab/rng.hpp"

using namespace poisonlab;

namespace {

corpus::Vocabulary g_vocab = corpus::default_vocabulary();

void BM_RenderConcept(benchmark::State& state) {
    std::uint64_t seed = 1;
    for (auto _ : state) {
        auto img = corpus::render_concept(g_vocab, g_vocab.concepts[0], seed++);
        benchmark::DoNotOptimize(img.pixels.data());
    }
}
BENCHMARK(BM_RenderConcept);

void BM_Conv3x3Forward(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    Rng rng(7);
    nn::Conv3x3 conv;
    conv.init(12, 12, 1, rng);
    nn::Mat x(12, static_cast<Eigen::Index>(batch) * 32 * 32);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    for (auto _ : state) {
        auto y = conv.forward(x, 32, 32, batch);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_Conv3x3Forward)->Arg(1)->Arg(16);

void BM_EmbedImage(benchmark::State& state) {
    Rng rng(3);
    embedding::EmbeddingSpace space;
    space.image_net.init(space.dim, rng);
    space.text_net.init(32, space.dim, rng);
    space.frozen = true;
    auto img = corpus::render_concept(g_vocab, g_vocab.concepts[0], 11);
    for (auto _ : state) {
        auto e = embedding::embed_image(space, img);
        benchmark::DoNotOptimize(e.values.data());
    }
}
BENCHMARK(BM_EmbedImage);

void BM_Fid(benchmark::State& state) {
    const int d = 64;
    Rng rng(5);
    embedding::FeatureStats a, b;
    a.mean.resize(d);
    b.mean.resize(d);
    Eigen::MatrixXd ra(d, d), rb(d, d);
    for (int i = 0; i < d; ++i) {
        a.mean[i] = rng.normal();
        b.mean[i] = rng.normal();
        for (int j = 0; j < d; ++j) {
            ra(i, j) = rng.normal();
            rb(i, j) = rng.normal();
        }
    }
    a.cov = ra * ra.transpose() / d;
    b.cov = rb * rb.transpose() / d;
    a.count = b.count = 100;
    for (auto _ : state) {
        double f = metrics::fid(a, b);
        benchmark::DoNotOptimize(f);
    }
}
BENCHMARK(BM_Fid);

}  // namespace

BENCHMARK_MAIN();
