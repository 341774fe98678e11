#include <doctest.h>

#include "adjoint/check.hpp"
#include "adjoint/frontend.hpp"
#include "adjoint/optimize.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"
#include "corpus.hpp"

using namespace adjoint;

namespace {

Node fn(const std::string& src) { return parse_or_throw(src).functions.at(0); }

std::string body(const Node& f) {
    std::string out;
    for (const auto& s : f.body) out += emit_statement(s);
    return out;
}

}  // namespace

TEST_CASE("simplify algebraic identities") {
    Node f = fn("def f(x, y):\n"
                "    a = x * 1.0\n"
                "    b = 1.0 * y + 0.0\n"
                "    c = a - 0.0\n"
                "    e = c / 1.0\n"
                "    g = 0.0 * 3.0\n"
                "    return a + b + c + e + g\n");
    CHECK(body(simplify(f)) ==
          "a = x\n"
          "b = y\n"
          "c = a\n"
          "e = c\n"
          "g = 0.0\n"
          "return a + b + c + e + g\n");
}

TEST_CASE("zero times a variable is kept") {
    Node f = fn("def f(x):\n    a = 0.0 * x\n    return a\n");
    CHECK(body(simplify(f)) == "a = 0.0 * x\nreturn a\n");
}

TEST_CASE("simplify folds zero initialisation into accumulation") {
    Node f = fn("def f(x):\n    a = 0.0\n    a += x * 2.0\n    b = 0.0\n    b -= x\n    return a + b\n");
    CHECK(body(simplify(f)) == "a = x * 2.0\nb = -x\nreturn a + b\n");
}

TEST_CASE("add_grad on an unbound adjoint becomes a plain assignment") {
    Node f = fn("def f(x):\n    bx = add_grad(bx, x)\n    bx = add_grad(bx, x)\n    return bx\n");
    CHECK(body(simplify(f)) == "bx = x\nbx = add_grad(bx, x)\nreturn bx\n");
    Node g = fn("def f(x, c):\n    if c:\n        bx = x\n    bx = add_grad(bx, x)\n    return bx\n");
    CHECK(body(simplify(g)).find("add_grad(bx, x)") != std::string::npos);
}

TEST_CASE("copy propagation of temporaries") {
    Node f = fn("def f(x):\n    _t1 = x\n    y = _t1 * 2.0\n    return y\n");
    CHECK(body(copy_propagate(f)).find("y = x * 2.0") != std::string::npos);
    Node keep = fn("def f(x):\n    t = x\n    y = t * 2.0\n    return y\n");
    CHECK(body(copy_propagate(keep)) == body(keep));
    Node reassigned = fn("def f(x):\n    _t1 = x\n    x = x * 3.0\n    y = _t1 * 2.0\n    return y\n");
    CHECK(body(copy_propagate(reassigned)).find("y = _t1 * 2.0") != std::string::npos);
}

TEST_CASE("dead code elimination") {
    Node f = fn("def f(x):\n    a = x * 2.0\n    b = a * 3.0\n    return a\n");
    CHECK(body(dce(f)) == "a = x * 2.0\nreturn a\n");
    Node stack = fn("def f(x):\n    push(x, 0)\n    x = x * 2.0\n    x = pop(0)\n    return 1.0\n");
    CHECK(body(dce(stack)) == "return 1.0\n");
    Node live = fn("def f(x):\n    push(x, 0)\n    x = x * 2.0\n    x = pop(0)\n    return x\n");
    CHECK(body(dce(live)).find("push(x, 0)") != std::string::npos);
    Node branch = fn("def f(x, c):\n    if c:\n        a = x\n    return x\n");
    CHECK(body(dce(branch)) == "return x\n");
    Node prints = fn("def f(x):\n    print(x)\n    return 1.0\n");
    CHECK(body(dce(prints)) == body(prints));
}

TEST_CASE("pipeline is idempotent at its fixpoint") {
    for (const auto& c : adjoint::testing::corpus_cases(20)) {
        Program p = c.program;
        const Node* f = nullptr;
        for (const auto& g : p.functions)
            if (g.text == c.function) f = &g;
        GradOptions o;
        o.wrt = c.wrt;
        GradResult r = grad(*f, p, o);
        PipelineResult again = run_pipeline(r.fn_ast);
        CHECK_MESSAGE(ast_equal(again.fn, r.fn_ast), c.name);
        CHECK(again.warnings.empty());
    }
}

TEST_CASE("iteration cap reports a warning") {
    Node f = fn("def f(x):\n    _t1 = x\n    a = _t1 * 1.0\n    b = a\n    return x\n");
    PassConfig cfg;
    cfg.max_iterations = 1;
    PipelineResult r = run_pipeline(f, cfg);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].code == "opt-no-fixpoint");
    CHECK(r.warnings[0].severity == Severity::Warning);
    PipelineResult full = run_pipeline(f);
    CHECK(full.warnings.empty());
    CHECK(body(full.fn) == "return x\n");
}

TEST_CASE("optimized gradients match unoptimized ones bit for bit") {
    for (const auto& c : adjoint::testing::corpus_cases(100)) {
        const Node* f = nullptr;
        for (const auto& g : c.program.functions)
            if (g.text == c.function) f = &g;
        GradOptions o;
        o.wrt = c.wrt;
        GradResult opt = grad(*f, c.program, o);
        o.optimize = false;
        GradResult raw = grad(*f, c.program, o);
        EvalOptions eo;
        eo.checked = true;
        Interpreter a(with_gradient(c.program, opt), eo), b(with_gradient(c.program, raw), eo);
        CheckOptions co;
        co.args = c.args;
        co.points = 3;
        co.seed = 5;
        for (const auto& args : sample_points(c.program, c.function, co)) {
            auto ga = a.call(opt.fn_ast.text, args);
            auto gb = b.call(raw.fn_ast.text, args);
            REQUIRE(ga.size() == gb.size());
            for (std::size_t i = 0; i < ga.size(); ++i) CHECK_MESSAGE(bitwise_equal(ga[i], gb[i]), c.name);
        }
    }
}
