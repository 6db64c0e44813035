// Serial reference vs OpenMP kernels on training-sized shapes.
// Argument is the batch size.

#include <benchmark/benchmark.h>

#include <string>
#include <utility>
#include <vector>

#include "ftl/kernels.hpp"
#include "ftl/rng.hpp"

namespace k = ftl::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  ftl::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// First layer of the default backbone at 64x64.
k::ConvShape conv_shape(int batch) { return {batch, 3, 64, 64, 16, 3, 2, 1}; }

struct ConvData {
  k::ConvShape s;
  std::vector<double> in, w, b, out, grad_out, grad_in, grad_w, grad_b;
  explicit ConvData(int batch)
      : s(conv_shape(batch)),
        in(filled(s.input_size(), 1)),
        w(filled(s.weight_size(), 2)),
        b(filled(static_cast<std::size_t>(s.out_channels), 3)),
        out(s.output_size()),
        grad_out(filled(s.output_size(), 4)),
        grad_in(s.input_size()),
        grad_w(s.weight_size()),
        grad_b(static_cast<std::size_t>(s.out_channels)) {}
};

template <auto Fn>
void conv_forward(benchmark::State& st) {
  ConvData d(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Fn(d.s, d.in, d.w, d.b, d.out);
    benchmark::DoNotOptimize(d.out.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <auto Fn>
void conv_backward_input(benchmark::State& st) {
  ConvData d(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Fn(d.s, d.grad_out, d.w, d.grad_in);
    benchmark::DoNotOptimize(d.grad_in.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <auto Fn>
void conv_backward_params(benchmark::State& st) {
  ConvData d(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    Fn(d.s, d.in, d.grad_out, d.grad_w, d.grad_b);
    benchmark::DoNotOptimize(d.grad_w.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <auto Fn>
void dense_forward(benchmark::State& st) {
  const k::DenseShape s{static_cast<int>(st.range(0)), 256, 128};
  const auto x = filled(static_cast<std::size_t>(s.rows) * s.in, 5);
  const auto w = filled(static_cast<std::size_t>(s.out) * s.in, 6);
  const auto b = filled(static_cast<std::size_t>(s.out), 7);
  std::vector<double> y(static_cast<std::size_t>(s.rows) * s.out);
  for (auto _ : st) {
    Fn(s, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void register_pair(const char* name, void (*serial)(benchmark::State&), void (*parallel)(benchmark::State&)) {
  for (auto [suffix, fn] : {std::pair{"/serial", serial}, std::pair{"/parallel", parallel}}) {
    benchmark::RegisterBenchmark((std::string(name) + suffix).c_str(), fn)
        ->RangeMultiplier(4)
        ->Range(4, 64)
        ->UseRealTime()
        ->Unit(benchmark::kMicrosecond);
  }
}

}  // namespace

int main(int argc, char** argv) {
  register_pair("conv2d_forward", conv_forward<k::serial::conv2d_forward>, conv_forward<k::parallel::conv2d_forward>);
  register_pair("conv2d_backward_input", conv_backward_input<k::serial::conv2d_backward_input>,
                conv_backward_input<k::parallel::conv2d_backward_input>);
  register_pair("conv2d_backward_params", conv_backward_params<k::serial::conv2d_backward_params>,
                conv_backward_params<k::parallel::conv2d_backward_params>);
  register_pair("dense_forward", dense_forward<k::serial::dense_forward>, dense_forward<k::parallel::dense_forward>);
  benchmark::AddCustomContext("threads", std::to_string(k::max_threads()));
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
