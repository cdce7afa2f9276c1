#include <memory>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "misdetect/embedstore.hpp"
#include "misdetect/evalmetrics.hpp"
#include "misdetect/protobank.hpp"
#include "misdetect/scorers.hpp"
#include "misdetect/synthbench.hpp"

namespace md = misdetect;

namespace {

md::SynthDataset dataset(std::size_t classes, std::size_t dims) {
  md::SynthConfig cfg;
  cfg.classes = classes;
  cfg.dims = dims;
  return md::generate_synthetic(cfg);
}

void BM_ScoreBatch(benchmark::State& state) {
  const auto data = dataset(static_cast<std::size_t>(state.range(0)), 512);
  const auto bank = md::build_prototypes(data.manifest, data.aux_image, 16, 0);
  const md::ScoringInputs in{data.manifest, data.vlm_image, data.text, &data.aux_image, &bank};
  for (auto _ : state) benchmark::DoNotOptimize(md::score_batch(in, {}, true));
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(data.manifest.indices_of(md::Split::kTest).size()));
}
BENCHMARK(BM_ScoreBatch)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> scores(n);
  auto flags = std::make_unique<bool[]>(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = u(gen);
    flags[i] = u(gen) < scores[i];
  }
  const std::span<const bool> correct(flags.get(), n);
  for (auto _ : state) benchmark::DoNotOptimize(md::auroc(scores, correct));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

void BM_EnsembleLossAndGradient(benchmark::State& state) {
  const auto data = dataset(static_cast<std::size_t>(state.range(0)), 512);
  const auto bank = md::build_prototypes(data.manifest, data.aux_image, 16, 0);
  const auto batch = md::provenance_batch(bank, data.manifest, data.vlm_image, data.aux_image);
  for (auto _ : state) {
    benchmark::DoNotOptimize(md::ensemble_ce_loss_and_grad(bank, batch, data.text, 0.01));
  }
}
BENCHMARK(BM_EnsembleLossAndGradient)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_TvemRoundTrip(benchmark::State& state) {
  const auto data = dataset(10, 512);
  for (auto _ : state) benchmark::DoNotOptimize(md::decode_tvem(md::encode_tvem(data.vlm_image)));
  state.SetBytesProcessed(state.iterations() *
                          static_cast<std::int64_t>(data.vlm_image.values().size() * sizeof(float)));
}
BENCHMARK(BM_TvemRoundTrip);

}  // namespace

BENCHMARK_MAIN();
