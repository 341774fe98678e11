#include <doctest.h>

#include <thread>

#include "adjoint/frontend.hpp"
#include "adjoint/programs.hpp"
#include "corpus.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"
#include "oracles.hpp"

using namespace adjoint;
using adjoint::testing::corpus_text;

namespace {

GradOptions wrt(std::vector<int> w) {
    GradOptions o;
    o.wrt = std::move(w);
    return o;
}

GradResult grad_of_source(const std::string& src, const std::string& fn, GradOptions o) {
    Program p = parse_or_throw(src);
    const Node* f = nullptr;
    for (const auto& g : p.functions)
        if (g.text == fn) f = &g;
    REQUIRE(f != nullptr);
    return grad(*f, p, o);
}

std::vector<Value> run_grad(const std::string& src, const std::string& fn, GradOptions o,
                            std::vector<Value> args) {
    Program p = parse_or_throw(src);
    const Node* f = nullptr;
    for (const auto& g : p.functions)
        if (g.text == fn) f = &g;
    REQUIRE(f != nullptr);
    GradResult r = grad(*f, p, o);
    EvalOptions eo;
    eo.checked = true;
    Interpreter in(with_gradient(p, r), eo);
    return in.call(r.fn_ast.text, std::move(args));
}

}  // namespace

TEST_CASE("gradient of x * x") {
    GradResult r = grad_of_source(corpus_text("square"), "f", wrt({0}));
    CHECK(r.source ==
          "def dfdx(x, by=1.0):\n"
          "    # Grad of: y = x * x\n"
          "    _bx = unbroadcast(by * x, x)\n"
          "    _bx2 = unbroadcast(by * x, x)\n"
          "    bx = _bx\n"
          "    bx = add_grad(bx, _bx2)\n"
          "    return bx\n");
    CHECK(r.slots.empty());
    CHECK(r.adjoint_names.at("x") == "bx");
}

TEST_CASE("naming") {
    Program p = parse_or_throw(corpus_text("calls"));
    CHECK(grad_function_name(p.functions[2], {0, 1}) == "dcombodxy");
    CHECK(parse_wrt("0,2") == std::vector<int>{0, 2});
    CHECK_THROWS(parse_wrt("0,,1"));
    CHECK_THROWS(parse_wrt("x"));
    CHECK_THROWS(parse_wrt(""));
}

TEST_CASE("invalid requests") {
    std::string sq = corpus_text("square");
    CHECK_THROWS_WITH(grad_of_source(sq, "f", wrt({1})), doctest::Contains("out of range"));
    CHECK_THROWS_WITH(grad_of_source(sq, "f", wrt({})), doctest::Contains("at least one"));
    CHECK_THROWS_WITH(grad_of_source(sq, "f", wrt({0, 0})), doctest::Contains("repeated"));
    CHECK_THROWS_WITH(grad_of_source("def f(x, y):\n    with grad_of(y) as dy:\n        dy = dy\n    return x * y\n",
                                     "f", wrt({0})),
                      doctest::Contains("not differentiated"));
    CHECK_THROWS_WITH(
        grad_of_source("def f(x, n):\n    if n > 0:\n        x = f(x, n - 1)\n    return x\n", "f", wrt({0})),
        doctest::Contains("recursive"));
    GradResult first = grad_of_source(sq, "f", wrt({0}));
    CHECK_THROWS_WITH(grad_of_source(first.source, "dfdx", wrt({0})), doctest::Contains("higher-order"));
    CHECK_THROWS_WITH(grad_of_source("def f(x):\n    return g(x)\n", "f", wrt({0})), doctest::Contains("g"));
}

TEST_CASE("an identity grad_of body leaves the gradient alone") {
    auto g = run_grad("def f(x):\n    with grad_of(x) as dx:\n        dx = dx * 1.0\n    return x * x\n", "f", wrt({0}),
                      {Value(3.0)});
    CHECK(g[0].as_double() == 6.0);
}

TEST_CASE("grad_of rewrites the adjoint") {
    auto g = run_grad(corpus_text("gradof"), "f", wrt({0}), {Value(2.0)});
    CHECK(g[0].as_double() == 2.0);
}

TEST_CASE("preserve_result and seed parameter") {
    GradOptions o = wrt({0});
    o.preserve_result = true;
    auto g = run_grad(corpus_text("square"), "f", o, {Value(3.0)});
    REQUIRE(g.size() == 2);
    CHECK(g[0].as_double() == 9.0);
    CHECK(g[1].as_double() == 6.0);

    GradOptions s = wrt({0});
    s.seed_param = "seed";
    GradResult r = grad_of_source(corpus_text("square"), "f", s);
    CHECK(r.source.find("seed=1.0") != std::string::npos);
    auto g2 = run_grad(corpus_text("square"), "f", s, {Value(3.0), Value(2.0)});
    CHECK(g2[0].as_double() == 12.0);
    s.seed_param = "x";
    CHECK_THROWS_WITH(grad_of_source(corpus_text("square"), "f", s), doctest::Contains("collides"));
}

TEST_CASE("loop truncation") {
    std::string src = corpus_text("truncation");
    Program p = parse_or_throw(src);
    CHECK(count_loops(p.functions[0]) == 1);
    auto eval = [&](std::int64_t k) {
        GradResult r = truncate_loop_adjoint(p.functions[0], p, wrt({0}), 0, k);
        EvalOptions eo;
        eo.checked = true;
        return Interpreter(with_gradient(p, r), eo).call1(r.fn_ast.text, {Value(1.0)}).as_double();
    };
    CHECK(eval(2) == 0.25);
    CHECK(eval(4) == 0.0625);
    CHECK(eval(10) == 0.0625);
    CHECK(eval(0) == 1.0);
    CHECK_THROWS_WITH(truncate_loop_adjoint(p.functions[0], p, wrt({0}), 3, 2), doctest::Contains("does not exist"));
    CHECK_THROWS(truncate_loop_adjoint(p.functions[0], p, wrt({0}), 0, -1));
}

TEST_CASE("loop example against an independent oracle") {
    std::string src = corpus_text("loop");
    std::vector<Value> args{Value::vector({0.9, 0.8}), Value(std::int64_t{3})};
    auto g = run_grad(src, "loop", wrt({0}), args);
    Interpreter primal(parse_or_throw(src));
    auto want = adjoint::testing::richardson_gradient(adjoint::testing::scalar_function(primal, "loop"), args, {0});
    REQUIRE(g.size() == 1);
    CHECK(adjoint::testing::max_rel_diff(g[0], want[0]) < 1e-6);
    CHECK(g[0].element(0) == doctest::Approx(0.5));
}

TEST_CASE("stack slots are reported") {
    GradResult r = grad_of_source(corpus_text("loop"), "loop", wrt({0}));
    bool trip = false, flag = false, value = false;
    for (const auto& s : r.slots) {
        trip |= s.purpose == SlotPurpose::LoopTripCount;
        flag |= s.purpose == SlotPurpose::BranchFlag;
        value |= s.purpose == SlotPurpose::OverwrittenValue && s.variable == "x";
    }
    CHECK(trip);
    CHECK(flag);
    CHECK(value);
}

TEST_CASE("user function calls use callee gradients") {
    std::string src = corpus_text("calls");
    GradResult r = grad_of_source(src, "combo", wrt({0, 1}));
    CHECK_FALSE(r.callees.empty());
    std::vector<Value> args{Value(0.3), Value(-0.7)};
    auto g = run_grad(src, "combo", wrt({0, 1}), args);
    Interpreter primal(parse_or_throw(src));
    auto want = adjoint::testing::richardson_gradient(adjoint::testing::scalar_function(primal, "combo"), args, {0, 1});
    CHECK(g[0].as_double() == doctest::Approx(want[0].as_double()).epsilon(1e-8));
    CHECK(g[1].as_double() == doctest::Approx(want[1].as_double()).epsilon(1e-8));
}

TEST_CASE("GradCache generates each key once") {
    Program p = parse_or_throw(corpus_text("mlp"));
    GradCache cache(p, Registry::builtin());
    std::vector<std::shared_ptr<const GradResult>> got(8);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&, i] { got[i] = cache.get("mlp", wrt({1, 2, 3, 4})); });
    for (auto& t : threads) t.join();
    for (const auto& g : got) CHECK(g.get() == got[0].get());
    CHECK(cache.generated() >= 1);
    std::size_t before = cache.generated();
    cache.get("mlp", wrt({1, 2, 3, 4}));
    CHECK(cache.generated() == before);
    cache.get("mlp", wrt({1}));
    CHECK(cache.generated() == before + 1);
    CHECK_THROWS(cache.get("nope", wrt({0})));
}

TEST_CASE("unoptimized output is a superset in behaviour") {
    std::string src = corpus_text("nested");
    std::vector<Value> args{Value(0.4), Value(0.8), Value(std::int64_t{3})};
    GradOptions o = wrt({0, 1});
    auto opt = run_grad(src, "nested", o, args);
    o.optimize = false;
    auto raw = run_grad(src, "nested", o, args);
    REQUIRE(opt.size() == raw.size());
    for (std::size_t i = 0; i < opt.size(); ++i) CHECK(bitwise_equal(opt[i], raw[i]));
}
