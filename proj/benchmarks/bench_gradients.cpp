#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "adjoint/frontend.hpp"
#include "adjoint/programs.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"

using namespace adjoint;

namespace {

Program corpus_program(const char* name) { return parse_or_throw(*corpus_source(name)); }

Value random_array(Shape shape, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> d(shape_size(shape));
    for (auto& x : d) x = n(rng);
    return Value::array(std::move(shape), std::move(d));
}

std::vector<Value> mlp_args(std::size_t hidden, std::size_t batch) {
    std::mt19937_64 rng(1);
    const std::size_t in = 32, out = 10;
    std::vector<double> onehot(batch * out, 0.0);
    for (std::size_t r = 0; r < batch; ++r) onehot[r * out + r % out] = 1.0;
    return {random_array({batch, in}, rng, 1.0),     random_array({in, hidden}, rng, 0.1),
            random_array({hidden}, rng, 0.01),       random_array({hidden, out}, rng, 0.1),
            random_array({out}, rng, 0.01),          Value::array({batch, out}, onehot)};
}

GradOptions wrt(std::vector<int> w) {
    GradOptions o;
    o.wrt = std::move(w);
    return o;
}

void BM_MlpGradient(benchmark::State& state) {
    Program p = corpus_program("mlp");
    GradResult g = grad(*p.find("mlp"), p, wrt({1, 2, 3, 4}));
    Interpreter in(with_gradient(p, g));
    auto args = mlp_args(static_cast<std::size_t>(state.range(0)), 16);
    for (auto _ : state) benchmark::DoNotOptimize(in.call(g.fn_ast.text, args));
}
BENCHMARK(BM_MlpGradient)->RangeMultiplier(4)->Range(16, 1024)->Unit(benchmark::kMicrosecond);

void BM_MlpPrimal(benchmark::State& state) {
    Interpreter in(corpus_program("mlp"));
    auto args = mlp_args(static_cast<std::size_t>(state.range(0)), 16);
    for (auto _ : state) benchmark::DoNotOptimize(in.call("mlp", args));
}
BENCHMARK(BM_MlpPrimal)->RangeMultiplier(4)->Range(16, 1024)->Unit(benchmark::kMicrosecond);

void BM_LoopGradient(benchmark::State& state) {
    Program p = corpus_program("loop");
    GradResult g = grad(*p.find("loop"), p, wrt({0}));
    Interpreter in(with_gradient(p, g));
    std::vector<double> x(16, 0.5);
    std::vector<Value> args{Value::array({16}, x), Value(static_cast<std::int64_t>(state.range(0)))};
    for (auto _ : state) benchmark::DoNotOptimize(in.call(g.fn_ast.text, args));
}
BENCHMARK(BM_LoopGradient)->RangeMultiplier(4)->Range(4, 1024)->Unit(benchmark::kMicrosecond);

void BM_Transform(benchmark::State& state) {
    const char* names[] = {"square", "loop", "mlp", "nested"};
    const char* fns[] = {"f", "loop", "mlp", "nested"};
    const std::vector<int> wrts[] = {{0}, {0}, {1, 2, 3, 4}, {0, 1}};
    const auto i = static_cast<std::size_t>(state.range(0));
    Program p = corpus_program(names[i]);
    const Node& fn = *p.find(fns[i]);
    for (auto _ : state) benchmark::DoNotOptimize(grad(fn, p, wrt(wrts[i])));
    state.SetLabel(fns[i]);
}
BENCHMARK(BM_Transform)->DenseRange(0, 3)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
