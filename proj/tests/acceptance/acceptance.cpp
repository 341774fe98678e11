// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "adjoint/analysis.hpp"
#include "adjoint/check.hpp"
#include "adjoint/frontend.hpp"
#include "adjoint/optimize.hpp"
#include "adjoint/programs.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"
#include "corpus.hpp"

using namespace adjoint;
using adjoint::testing::corpus_text;
using adjoint::testing::CorpusCase;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const Node& function_named(const Program& p, const std::string& name) {
    for (const auto& f : p.functions)
        if (f.text == name) return f;
    throw Error("no function '" + name + "'");
}

GradOptions wrt(std::vector<int> w) {
    GradOptions o;
    o.wrt = std::move(w);
    return o;
}

EvalOptions checked() {
    EvalOptions o;
    o.checked = true;
    return o;
}

std::vector<std::vector<Value>> inputs(const CorpusCase& c, int points, std::uint64_t seed) {
    CheckOptions co;
    co.args = c.args;
    co.points = points;
    co.seed = seed;
    return sample_points(c.program, c.function, co);
}

const std::vector<CorpusCase>& cases() {
    static const std::vector<CorpusCase> all = adjoint::testing::corpus_cases(60);
    return all;
}

Outcome square_golden() {
    auto t0 = Clock::now();
    Program p = parse_or_throw(corpus_text("square"));
    GradResult r = grad(p.functions[0], p, wrt({0}));
    Node expected = parse_or_throw(
                        "def dfdx(x, by=1.0):\n"
                        "    _bx = unbroadcast(by * x, x)\n"
                        "    _bx2 = unbroadcast(by * x, x)\n"
                        "    bx = _bx\n"
                        "    bx = add_grad(bx, _bx2)\n"
                        "    return bx\n")
                        .functions[0];
    Node got = r.fn_ast;
    got.body.erase(std::remove_if(got.body.begin(), got.body.end(),
                                  [](const Node& s) { return s.kind == NodeKind::Comment; }),
                   got.body.end());
    bool same = ast_equal(got, expected);
    bool no_primal = true;
    visit_statements(r.fn_ast.body, [&](const Node& s) {
        if (s.kind == NodeKind::Assign && s.kids[0].kind == NodeKind::Name && s.kids[0].text == "y") no_primal = false;
    });
    double v = Interpreter(with_gradient(p, r), checked()).call1("dfdx", {Value(2.0), Value(1.0)}).as_double();
    double t = seconds_since(t0);
    std::ostringstream d;
    d << "structural=" << same << " primal_removed=" << no_primal << " dfdx(2)=" << v << " " << t << "s";
    return {same && no_primal && v == 4.0 && t < 1.0, d.str()};
}

Outcome injection() {
    Program p = parse_or_throw(corpus_text("gradof"));
    GradResult r = grad(p.functions[0], p, wrt({0}));
    std::ostringstream sink;
    EvalOptions o = checked();
    o.print_stream = &sink;
    double v = Interpreter(with_gradient(p, r), o).call1(r.fn_ast.text, {Value(2.0)}).as_double();
    return {v == 2.0, "df(2)=" + std::to_string(v)};
}

Outcome loop_program() {
    auto t0 = Clock::now();
    std::string src = corpus_text("loop");
    Program p = parse_or_throw(src);
    GradResult r = grad(function_named(p, "loop"), p, wrt({0}));
    CheckOptions co;
    co.args = parse_arg_specs(R"([{"shape": [2], "range": [0.1, 2.0]}, {"int": [1, 5]}])");
    co.points = 10;
    co.seed = 2024;
    co.tol_rel = 1e-5;
    co.boundary = 1e-4;
    CheckReport rep = check(p, "loop", r, co);
    double t = seconds_since(t0);
    std::ostringstream d;
    d << "points=" << rep.points_tested << " max_rel_err=" << rep.max_rel_err << " " << t << "s";
    return {rep.pass() && rep.points_tested == 10 && t < 5.0, d.str()};
}

Outcome mlp_end_to_end() {
    auto t0 = Clock::now();
    std::string src = corpus_text("mlp");
    Program p = parse_or_throw(src);
    GradResult r = grad(function_named(p, "mlp"), p, wrt({1, 2, 3, 4}));
    CheckOptions co;
    co.args = *find_arg_specs(src, "mlp");
    co.points = 5;
    co.tol_rel = 1e-5;
    co.tol_abs = 1e-8;
    CheckReport rep = check(p, "mlp", r, co);
    double t = seconds_since(t0);
    std::ostringstream d;
    d << "max_rel_err=" << rep.max_rel_err << " " << t << "s";
    return {rep.pass() && t < 30.0, d.str()};
}

// Nodes that only exist before expansion: d[] markers, grad_of blocks and
// calls to adjoint templates.
int template_nodes(const Node& fn) {
    int n = 0;
    visit_preorder(fn, [&](const Node& x) {
        if (x.kind == NodeKind::GradOfBlock) ++n;
        if (x.kind == NodeKind::Index && x.kids[0].kind == NodeKind::Name && x.kids[0].text == "d") ++n;
        if (x.kind == NodeKind::Call &&
            (x.text.rfind("adjoint_", 0) == 0 || x.text == "grad_of" || x.text == "push" || x.text == "pop"))
            ++n;
    });
    return n;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Outcome no_runtime_overhead() {
    std::string src = corpus_text("mlp");
    Program p = parse_or_throw(src);
    GradCache cache(p, Registry::builtin());
    GradOptions o = wrt({1, 2, 3, 4});
    auto g = cache.get("mlp", o);
    std::size_t after_first = cache.generated();
    Interpreter in(with_gradient(p, *g));
    CheckOptions co;
    co.args = *find_arg_specs(src, "mlp");
    co.points = 1;
    std::vector<Value> args = sample_points(p, "mlp", co)[0];

    std::vector<double> second, hundredth;
    for (int batch = 0; batch < 50; ++batch) {
        for (int call = 1; call <= 100; ++call) {
            auto grad_fn = cache.get("mlp", o);
            auto t0 = Clock::now();
            in.call(grad_fn->fn_ast.text, args);
            double t = seconds_since(t0);
            if (call == 2) second.push_back(t);
            if (call == 100) hundredth.push_back(t);
        }
    }
    double ratio = median(second) / median(hundredth);
    bool once = cache.generated() == after_first;
    int leftovers = template_nodes(g->fn_ast);
    for (const auto& c : g->callees) leftovers += template_nodes(c);
    std::ostringstream d;
    d << "generated=" << cache.generated() << " (unchanged=" << once << ") median_ratio=" << ratio
      << " template_nodes=" << leftovers;
    return {once && ratio >= 0.5 && ratio <= 2.0 && leftovers == 0, d.str()};
}

Outcome optimizer_soundness() {
    int programs = 0, mismatches = 0, not_idempotent = 0;
    for (const auto& c : cases()) {
        const Node& fn = function_named(c.program, c.function);
        GradOptions o = wrt(c.wrt);
        GradResult opt = grad(fn, c.program, o);
        o.optimize = false;
        GradResult raw = grad(fn, c.program, o);
        if (!ast_equal(run_pipeline(opt.fn_ast).fn, opt.fn_ast)) ++not_idempotent;
        Interpreter a(with_gradient(c.program, opt), checked()), b(with_gradient(c.program, raw), checked());
        for (const auto& args : inputs(c, 5, 77)) {
            auto ga = a.call(opt.fn_ast.text, args);
            auto gb = b.call(raw.fn_ast.text, args);
            bool same = ga.size() == gb.size();
            for (std::size_t i = 0; same && i < ga.size(); ++i) same = bitwise_equal(ga[i], gb[i]);
            if (!same) ++mismatches;
        }
        ++programs;
    }
    std::ostringstream d;
    d << "programs=" << programs << " mismatches=" << mismatches << " not_idempotent=" << not_idempotent;
    return {programs >= 50 && mismatches == 0 && not_idempotent == 0, d.str()};
}

Outcome stack_balance() {
    int runs = 0, bad = 0;
    std::string first;
    for (const auto& c : cases()) {
        for (bool optimize : {true, false}) {
            GradOptions o = wrt(c.wrt);
            o.optimize = optimize;
            GradResult r = grad(function_named(c.program, c.function), c.program, o);
            std::ostringstream sink;
            EvalOptions eo = checked();
            eo.print_stream = &sink;
            eo.warning_stream = &sink;
            Interpreter in(with_gradient(c.program, r), eo);
            for (const auto& args : inputs(c, 5, 31)) {
                ++runs;
                StackStats st;
                try {
                    in.call(r.fn_ast.text, args, &st);
                    if (st.pushes != st.pops) throw Error("unbalanced");
                } catch (const Error& e) {
                    if (first.empty()) first = c.name + ": " + e.what();
                    ++bad;
                }
            }
        }
    }
    std::ostringstream d;
    d << "runs=" << runs << " failures=" << bad;
    if (!first.empty()) d << " first: " << first;
    return {bad == 0 && runs > 0, d.str()};
}

// Records the values every inactive definition produces, then checks that
// nudging each differentiated input leaves them unchanged.
Outcome activity_soundness() {
    int definitions = 0, violations = 0;
    std::string first;
    for (const auto& c : cases()) {
        NameSet wrt_names;
        {
            std::vector<std::string> params = param_names(function_named(c.program, c.function));
            for (int w : c.wrt) wrt_names.insert(params[w]);
        }
        // Keyed by source position so traces from separate interpreters line up.
        using Key = std::tuple<int, int, std::string>;
        using Trace = std::map<Key, std::vector<double>>;
        auto trace_of = [&](const std::vector<Value>& args) {
            Trace t;
            std::ostringstream sink;
            EvalOptions eo;
            eo.checked = false;
            eo.print_stream = &sink;
            ActivityInfo info;
            eo.hooks.on_assign = [&](const Node& stmt, const std::string& name, Value& v) {
                auto it = info.active_out.find(&stmt);
                if (it == info.active_out.end() || it->second.count(name) || v.is_bool()) return;
                auto& out = t[{stmt.span.line, stmt.span.column, name}];
                for (std::size_t i = 0; i < v.size(); ++i) out.push_back(v.element(i));
            };
            Interpreter in(c.program, eo);
            const Node& own = function_named(in.program(), c.function);
            info = activity(own, build_cfg(own), wrt_names);
            in.call(c.function, args);
            return t;
        };

        for (const auto& args : inputs(c, 3, 91)) {
            for (int w : c.wrt) {
                for (std::size_t e = 0; e < args[w].size(); ++e) {
                    const double h = 1e-6;
                    auto nudged = [&](double delta) {
                        std::vector<Value> a = args;
                        if (a[w].is_array())
                            a[w].as_array().data[e] += delta;
                        else
                            a[w] = Value(a[w].as_double() + delta);
                        return trace_of(a);
                    };
                    Trace plus = nudged(h), minus = nudged(-h);
                    for (const auto& [key, vp] : plus) {
                        auto it = minus.find(key);
                        if (it == minus.end()) continue;
                        const auto& vm = it->second;
                        std::size_t n = std::min(vp.size(), vm.size());
                        ++definitions;
                        for (std::size_t i = 0; i < n; ++i) {
                            double fd = (vp[i] - vm[i]) / (2 * h);
                            if (std::abs(fd) > 1e-8) {
                                if (first.empty())
                                    first = c.name + ": " + std::get<2>(key) + " (line " +
                                            std::to_string(std::get<0>(key)) + ")";
                                ++violations;
                                break;
                            }
                        }
                    }
                }
            }
        }
    }
    std::ostringstream d;
    d << "inactive_definitions_checked=" << definitions << " violations=" << violations;
    if (!first.empty()) d << " first: " << first;
    return {violations == 0 && definitions > 0, d.str()};
}

Outcome truncation() {
    Program p = parse_or_throw(corpus_text("truncation"));
    auto eval = [&](std::int64_t k) {
        GradResult r = truncate_loop_adjoint(p.functions[0], p, wrt({0}), 0, k);
        return Interpreter(with_gradient(p, r), checked()).call1(r.fn_ast.text, {Value(1.0)}).as_double();
    };
    auto unrolled = [](int k) {
        double prod = 1.0;
        for (int i = 0; i < k; ++i) prod *= 0.5;
        return prod;
    };
    double k2 = eval(2), k4 = eval(4);
    std::ostringstream d;
    d << "k=2 -> " << k2 << ", k=4 -> " << k4;
    return {k2 == unrolled(2) && k4 == unrolled(4), d.str()};
}

Outcome round_trip() {
    int sources = 0, unstable = 0, nondeterministic = 0;
    std::vector<std::string> texts;
    for (const auto& entry : corpus_programs()) texts.emplace_back(entry.source);
    for (const auto& c : cases())
        if (c.name.rfind("fuzz/", 0) == 0) texts.push_back(c.source);
    for (const auto& text : texts) {
        std::string once = emit(parse_or_throw(text));
        std::string twice = emit(parse_or_throw(once));
        ++sources;
        if (once != twice) ++unstable;
    }
    for (const auto& c : cases()) {
        const Node& fn = function_named(c.program, c.function);
        std::string a = grad(fn, c.program, wrt(c.wrt)).source;
        GradCache cache(c.program, Registry::builtin());
        std::string b = cache.get(c.function, wrt(c.wrt))->source;
        if (a != b) ++nondeterministic;
        if (emit(parse_or_throw(a)) != a) ++unstable;
    }
    std::ostringstream d;
    d << "sources=" << sources << " unstable=" << unstable << " nondeterministic=" << nondeterministic;
    return {unstable == 0 && nondeterministic == 0, d.str()};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 square golden", square_golden},
        {"2 grad_of injection", injection},
        {"3 loop and conditional", loop_program},
        {"4 mlp end to end", mlp_end_to_end},
        {"5 no runtime overhead", no_runtime_overhead},
        {"6 optimizer soundness", optimizer_soundness},
        {"7 stack balance", stack_balance},
        {"8 activity soundness", activity_soundness},
        {"9 loop truncation", truncation},
        {"10 round trip and determinism", round_trip},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << o.detail << ")" << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
