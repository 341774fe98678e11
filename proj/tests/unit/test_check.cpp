#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "adjoint/check.hpp"
#include "adjoint/frontend.hpp"
#include "adjoint/programs.hpp"
#include "corpus.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"

using namespace adjoint;
using adjoint::testing::corpus_text;

namespace {

CheckReport run_check(const std::string& src, const std::string& function, std::vector<int> wrt,
                      CheckOptions co = {}, const Registry& reg = Registry::builtin()) {
    Program p = parse_or_throw(src);
    const Node* f = nullptr;
    for (const auto& g : p.functions)
        if (g.text == function) f = &g;
    REQUIRE(f != nullptr);
    GradOptions o;
    o.wrt = std::move(wrt);
    GradResult r = grad(*f, p, o, reg);
    if (co.args.empty())
        if (auto specs = find_arg_specs(src, function)) co.args = *specs;
    return check(p, function, r, co);
}

}  // namespace

TEST_CASE("finite differences of simple functions") {
    Interpreter in(parse_or_throw("def f(x, y):\n    return x * x * y\n"));
    auto g = finite_diff(in, "f", {Value(3.0), Value(2.0)}, {0, 1});
    CHECK(g[0].as_double() == doctest::Approx(12.0).epsilon(1e-8));
    CHECK(g[1].as_double() == doctest::Approx(9.0).epsilon(1e-8));
    Interpreter vec(parse_or_throw("def f(x):\n    return sum(x * x)\n"));
    auto gv = finite_diff(vec, "f", {Value::vector({1.0, -2.0})}, {0});
    CHECK(gv[0].element(0) == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(gv[0].element(1) == doctest::Approx(-4.0).epsilon(1e-8));
    CHECK_THROWS_WITH(finite_diff(vec, "f", {Value::vector({1.0})}, {1}), doctest::Contains("out of range"));
}

TEST_CASE("central difference error shrinks quadratically") {
    Interpreter in(parse_or_throw("def f(x):\n    return exp(x) * tanh(x)\n"));
    auto exact = [](double x) { return std::exp(x) * std::tanh(x) + std::exp(x) * (1 - std::pow(std::tanh(x), 2)); };
    double x = 0.7;
    double e1 = std::abs(finite_diff(in, "f", {Value(x)}, {0}, 2e-2)[0].as_double() - exact(x));
    double e2 = std::abs(finite_diff(in, "f", {Value(x)}, {0}, 1e-2)[0].as_double() - exact(x));
    CHECK(e1 / e2 > 3.0);
    CHECK(e1 / e2 < 5.0);
}

TEST_CASE("square passes with tiny error") {
    CheckReport r = run_check(corpus_text("square"), "f", {0});
    CHECK(r.pass());
    CHECK(r.points_tested == 10);
    CHECK(r.max_rel_err < 1e-9);
}

TEST_CASE("loop passes") {
    CheckReport r = run_check(corpus_text("loop"), "loop", {0});
    CHECK(r.pass());
}

TEST_CASE("a wrong adjoint is caught") {
    Registry reg = Registry::builtin();
    reg.load(parse_or_throw("def adjoint_tanh(result, arg1):\n    d[arg1] = d[result] * (1.0 + result * result)\n"));
    CheckReport r = run_check("def f(x):\n    return tanh(x)\n", "f", {0}, {}, reg);
    CHECK_FALSE(r.pass());
    REQUIRE_FALSE(r.failures.empty());
    CHECK(r.failures[0].parameter == "x");
    CHECK(r.to_text().find("FAIL") != std::string::npos);
    auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["pass"] == false);
    for (const char* key : {"function", "wrt", "points", "max_rel_err", "max_abs_err", "pass", "failures"})
        CHECK_MESSAGE(j.contains(key), key);
}

TEST_CASE("non-scalar outputs are rejected") {
    CHECK_THROWS_WITH(run_check("def f(x):\n    return x * 2.0\n", "f", {0},
                                [] {
                                    CheckOptions o;
                                    o.args = parse_arg_specs(R"([{"shape": [2]}])");
                                    return o;
                                }()),
                      doctest::Contains("must return a scalar"));
}

TEST_CASE("points on a branch boundary are redrawn until the budget runs out") {
    CHECK_THROWS_WITH(run_check("def f(x):\n    if x - x > 0.0:\n        x = x * 2.0\n    return x\n", "f", {0}),
                      doctest::Contains("only 0 of 10"));
}

TEST_CASE("sampling respects specs and is deterministic") {
    Program p = parse_or_throw(corpus_text("mlp"));
    CheckOptions o;
    o.args = *find_arg_specs(corpus_text("mlp"), "mlp");
    o.seed = 42;
    auto a = sample_points(p, "mlp", o);
    auto b = sample_points(p, "mlp", o);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < a[i].size(); ++k) CHECK(bitwise_equal(a[i][k], b[i][k]));
    const Value& label = a[0][5];
    CHECK(label.shape() == Shape{2, 3});
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += label.element(r * 3 + c);
        CHECK(s == 1.0);
    }
    for (std::size_t i = 0; i < a[0][1].size(); ++i) {
        CHECK(a[0][1].element(i) >= -0.5);
        CHECK(a[0][1].element(i) <= 0.5);
    }
    o.seed = 43;
    CHECK_FALSE(bitwise_equal(sample_points(p, "mlp", o)[0][0], a[0][0]));
}

TEST_CASE("check reports are deterministic") {
    CheckOptions o;
    o.seed = 9;
    CheckReport a = run_check(corpus_text("mlp"), "mlp", {1, 2, 3, 4}, o);
    CheckReport b = run_check(corpus_text("mlp"), "mlp", {1, 2, 3, 4}, o);
    CHECK(a.pass());
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("arg spec parsing") {
    auto s = parse_arg_specs(R"([{"shape": [2], "range": [0.1, 2]}, {"int": [1, 5]}, {"onehot": [2, 3]}, {"value": 0.5}])");
    REQUIRE(s.size() == 4);
    CHECK(s[0].kind == ArgSpec::Kind::Real);
    CHECK(s[0].shape == Shape{2});
    CHECK(s[0].lo == 0.1);
    CHECK(s[1].kind == ArgSpec::Kind::Int);
    CHECK(s[1].int_hi == 5);
    CHECK(s[2].kind == ArgSpec::Kind::OneHot);
    CHECK(s[3].kind == ArgSpec::Kind::Fixed);
    CHECK(s[3].fixed->as_double() == 0.5);
    CHECK_THROWS(parse_arg_specs("[{\"int\": [5, 1]}]"));
    CHECK_THROWS(parse_arg_specs("{}"));
    CHECK_THROWS(parse_arg_specs("[{\"range\": [1, 1]}]"));
    CHECK(find_arg_specs(corpus_text("loop"), "loop_fn").has_value());
    CHECK_FALSE(find_arg_specs(corpus_text("loop"), "nothing").has_value());
}
