// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary workers.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rei/byol.hpp"
#include "rei/kernels.hpp"
#include "rei/network.hpp"
#include "rei/peak_extract.hpp"
#include "rei/synth_gen.hpp"

using namespace rei;

namespace {

std::vector<std::uint16_t> random_pixels(std::size_t n, int hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, hi);
  std::vector<std::uint16_t> v(n);
  for (auto& p : v) p = static_cast<std::uint16_t>(d(rng));
  return v;
}

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

constexpr std::size_t kFrame = 2048 * 2048;

template <auto Fn>
void BM_subtract_dark(benchmark::State& state) {
  const auto raw = random_pixels(kFrame, 4000, 1);
  const auto dark = random_pixels(kFrame, 120, 2);
  std::vector<std::uint16_t> out(kFrame);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(raw, dark, out));
  state.SetBytesProcessed(std::int64_t(state.iterations()) * std::int64_t(kFrame) * 6);
}

template <auto Fn>
void BM_threshold(benchmark::State& state) {
  const auto px = random_pixels(kFrame, 4000, 3);
  std::vector<std::uint8_t> mask(kFrame);
  for (auto _ : state) {
    Fn(px, 2000.0, mask);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(kFrame));
}

template <auto Fn>
void BM_nearest_two(benchmark::State& state) {
  const std::size_t n = 5000, k = std::size_t(state.range(0)), dim = net::kEmbedDim;
  const auto vecs = random_floats(n * dim, 4);
  const auto centers = random_floats(k * dim, 5);
  std::vector<kernels::NearestTwo> out(n);
  for (auto _ : state) {
    Fn(vecs, centers, dim, out);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n));
}

template <auto Fn>
void BM_embed_batch(benchmark::State& state) {
  const auto enc = net::init_encoder(7);
  const std::size_t n = 512;
  auto patches = random_floats(n * 225, 8);
  for (auto& p : patches) p = std::abs(p);
  std::vector<float> out(n * net::kEmbedDim);
  for (auto _ : state) {
    Fn(enc, 15, patches, out);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n));
}

const ScanSet& bench_scan() {
  static const ScanSet scan = [] {
    synth::SyntheticScanConfig c;
    c.n_frames = 90;
    c.omega_step = 4.0;
    return synth::generate_scan(c).scan;
  }();
  return scan;
}

template <auto Fn>
void BM_extract_dataset(benchmark::State& state) {
  const ScanSet& scan = bench_scan();
  for (auto _ : state) benchmark::DoNotOptimize(Fn(scan, ExtractionConfig{}).size());
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(scan.size()));
}

}  // namespace

BENCHMARK(BM_subtract_dark<kernels::subtract_dark_serial>)->Name("subtract_dark/serial");
BENCHMARK(BM_subtract_dark<kernels::subtract_dark>)->Name("subtract_dark/omp");
BENCHMARK(BM_threshold<kernels::threshold_serial>)->Name("threshold/serial");
BENCHMARK(BM_threshold<kernels::threshold>)->Name("threshold/omp");
BENCHMARK(BM_nearest_two<kernels::nearest_two_serial>)->Name("nearest_two/serial")->Arg(20)->Arg(40);
BENCHMARK(BM_nearest_two<kernels::nearest_two>)->Name("nearest_two/omp")->Arg(20)->Arg(40);
BENCHMARK(BM_embed_batch<net::embed_batch_serial>)->Name("embed_batch/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_embed_batch<net::embed_batch>)->Name("embed_batch/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extract_dataset<extract_dataset_serial>)->Name("extract_dataset/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_extract_dataset<extract_dataset>)->Name("extract_dataset/omp")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
