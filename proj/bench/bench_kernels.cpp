// Serial reference kernels against the blocked OpenMP versions.
#include "cgdro/kernels.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

namespace {

using cgdro::Index;
using cgdro::Matrix;
using cgdro::Vector;
namespace kn = cgdro::kernels;

struct Problem {
  Matrix x;
  Vector theta;
  Matrix w;
  int K;
};

Problem make(Index n, int d, int K) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd;
  Problem p{Matrix(n, d), Vector(d * K), Matrix(n, K), K};
  for (Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = nd(rng);
  for (Index i = 0; i < p.theta.size(); ++i) p.theta[i] = 0.3 * nd(rng);
  for (Index i = 0; i < p.w.size(); ++i) p.w.data()[i] = nd(rng);
  return p;
}

template <bool Serial>
void value_grad(benchmark::State& st) {
  const Problem p = make(st.range(0), 10, static_cast<int>(st.range(1)));
  for (auto _ : st) {
    auto t = Serial ? kn::serial::s_hat_terms(p.x, p.theta, p.K, kn::kValue | kn::kGrad)
                    : kn::s_hat_terms(p.x, p.theta, p.K, kn::kValue | kn::kGrad);
    benchmark::DoNotOptimize(t.grad.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <bool Serial>
void hessian(benchmark::State& st) {
  const Problem p = make(st.range(0), 10, static_cast<int>(st.range(1)));
  for (auto _ : st) {
    auto t = Serial ? kn::serial::s_hat_terms(p.x, p.theta, p.K, kn::kAll)
                    : kn::s_hat_terms(p.x, p.theta, p.K, kn::kAll);
    benchmark::DoNotOptimize(t.hess.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <bool Serial>
void kron_cov(benchmark::State& st) {
  const Problem p = make(st.range(0), 10, static_cast<int>(st.range(1)));
  for (auto _ : st) {
    Matrix c = Serial ? kn::serial::kron_covariance(p.w, p.x) : kn::kron_covariance(p.w, p.x);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void sizes(benchmark::internal::Benchmark* b) {
  for (long n : {1000L, 10000L, 100000L})
    for (long K : {1L, 3L}) b->Args({n, K});
  b->ArgNames({"n", "K"})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(value_grad<true>)->Name("value_grad/serial")->Apply(sizes);
BENCHMARK(value_grad<false>)->Name("value_grad/blocked")->Apply(sizes)->UseRealTime();
BENCHMARK(hessian<true>)->Name("hessian/serial")->Apply(sizes);
BENCHMARK(hessian<false>)->Name("hessian/blocked")->Apply(sizes)->UseRealTime();
BENCHMARK(kron_cov<true>)->Name("kron_cov/serial")->Apply(sizes);
BENCHMARK(kron_cov<false>)->Name("kron_cov/blocked")->Apply(sizes)->UseRealTime();

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
