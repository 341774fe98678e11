#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "adjoint/analysis.hpp"
#include "adjoint/check.hpp"
#include "adjoint/frontend.hpp"
#include "adjoint/optimize.hpp"
#include "adjoint/programs.hpp"
#include "adjoint/registry.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"

using namespace adjoint;

namespace {

// Bad invocation: exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Diagnostics already printed: exit 1.
struct ReportedFailure {};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError(path + ": file not found");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Loaded {
    std::string path;
    std::string text;
    Program program;
};

Loaded load(const std::string& path) {
    Loaded l{path, read_file(path), {}};
    ParseResult r = parse(SourceProgram{l.text, path});
    for (const auto& d : r.diagnostics) std::cerr << format_diagnostic(d, path) << "\n";
    if (!r.ok()) throw ReportedFailure{};
    l.program = std::move(r.program);
    return l;
}

const Node& find_function(const Loaded& l, const std::string& name) {
    const Node* fn = l.program.find(name);
    if (!fn) throw UsageError(l.path + ": no function named '" + name + "'");
    return *fn;
}

void validate(const Loaded& l, const Node& fn) {
    auto diags = validate_subset(fn, l.program);
    for (const auto& d : diags) std::cerr << format_diagnostic(d, l.path) << "\n";
    if (has_errors(diags)) throw ReportedFailure{};
}

std::vector<int> wrt_for(const Node& fn, const std::string& text) {
    std::vector<int> wrt;
    try {
        wrt = parse_wrt(text);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const int n = static_cast<int>(fn.kids.size());
    for (int w : wrt)
        if (w >= n)
            throw UsageError("--wrt index " + std::to_string(w) + " is out of range for '" + fn.text + "' (" +
                             std::to_string(n) + " parameters)");
    return wrt;
}

Registry registry_with(const std::string& adjoints_path) {
    Registry reg = Registry::builtin();
    if (adjoints_path.empty()) return reg;
    Loaded extra = load(adjoints_path);
    if (reg.load(extra.program).empty())
        std::cerr << adjoints_path << ": warning: no adjoint_<name> functions found\n";
    return reg;
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError(path + ": cannot open for writing");
    out << text;
}

std::string emit_result(const GradResult& r) {
    std::string out;
    for (const auto& c : r.callees) out += emit(c) + "\n";
    return out + r.source;
}

// `d<f>d<params>` for a function of the program: the gradient the name asks for.
std::optional<std::pair<const Node*, std::vector<int>>> resolve_gradient_name(const Program& program,
                                                                             const std::string& name) {
    for (const auto& fn : program.functions) {
        const std::string prefix = "d" + fn.text + "d";
        if (name.rfind(prefix, 0) != 0) continue;
        auto params = param_names(fn);
        std::vector<int> wrt;
        std::function<bool(std::size_t, std::size_t)> match = [&](std::size_t pos, std::size_t next) {
            if (pos == name.size()) return !wrt.empty();
            for (std::size_t i = next; i < params.size(); ++i) {
                if (name.compare(pos, params[i].size(), params[i]) != 0) continue;
                wrt.push_back(static_cast<int>(i));
                if (match(pos + params[i].size(), i + 1)) return true;
                wrt.pop_back();
            }
            return false;
        };
        if (match(prefix.size(), 0)) return std::make_pair(&fn, wrt);
    }
    return std::nullopt;
}

std::string values_json(const std::vector<Value>& values) {
    if (values.size() == 1) return values[0].to_string();
    std::string s = "[";
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + values[i].to_string();
    return s + "]";
}

struct GradArgs {
    std::string file, function, wrt = "0", adjoints, out = "-", seed_param;
    bool no_opt = false, dump_cfg = false, preserve = false;
    std::vector<std::string> truncate;
};

int cmd_grad(const GradArgs& a) {
    Loaded l = load(a.file);
    const Node& fn = find_function(l, a.function);
    validate(l, fn);
    GradOptions o;
    o.wrt = wrt_for(fn, a.wrt);
    o.optimize = !a.no_opt;
    o.preserve_result = a.preserve;
    o.seed_param = a.seed_param;
    for (const auto& t : a.truncate) {
        auto colon = t.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument(t);
            o.truncate[std::stoi(t.substr(0, colon))] = std::stoll(t.substr(colon + 1));
        } catch (const std::logic_error&) {
            throw UsageError("--truncate expects LOOP:K, got '" + t + "'");
        }
    }
    for (const auto& [id, k] : o.truncate)
        if (id < 0 || id >= count_loops(fn) || k < 0)
            throw UsageError("--truncate " + std::to_string(id) + ":" + std::to_string(k) + ": '" + fn.text +
                             "' has " + std::to_string(count_loops(fn)) + " loop(s)");
    if (a.dump_cfg) std::cerr << cfg_to_dot(build_cfg(fn), fn.text);
    Registry reg = registry_with(a.adjoints);
    GradResult r = grad(fn, l.program, o, reg);
    for (const auto& w : r.warnings) std::cerr << format_diagnostic(w, l.path) << "\n";
    write_output(a.out, emit_result(r));
    return 0;
}

struct RunArgs {
    std::string file, function, args = "[]", adjoints;
    bool no_opt = false;
};

int cmd_run(const RunArgs& a) {
    Loaded l = load(a.file);
    std::vector<Value> args;
    try {
        args = args_from_json(a.args);
    } catch (const Error& e) {
        throw UsageError(std::string("--args: ") + e.what());
    }
    Program program = l.program;
    const Node* fn = program.find(a.function);
    if (!fn) {
        auto target = resolve_gradient_name(l.program, a.function);
        if (!target) throw UsageError(l.path + ": no function named '" + a.function + "'");
        validate(l, *target->first);
        GradOptions o;
        o.wrt = target->second;
        o.optimize = !a.no_opt;
        Registry reg = registry_with(a.adjoints);
        GradResult r = grad(*target->first, l.program, o, reg);
        program = with_gradient(l.program, r);
        fn = program.find(r.fn_ast.text);
    }
    std::size_t required = 0;
    for (const auto& p : fn->kids)
        if (p.kids.empty()) ++required;
    if (args.size() < required || args.size() > fn->kids.size())
        throw UsageError("'" + fn->text + "' takes " + std::to_string(required) +
                         (required == fn->kids.size() ? "" : " to " + std::to_string(fn->kids.size())) +
                         " argument(s), got " + std::to_string(args.size()));
    Interpreter interp(program);
    std::cout << values_json(interp.call(fn->text, std::move(args))) << "\n";
    return 0;
}

struct CheckArgs {
    std::string file, function, wrt = "0", adjoints, args_spec;
    int points = 10;
    std::uint64_t seed = 0;
    double tol_rel = 1e-5, tol_abs = 1e-8;
    bool json = false, no_opt = false;
};

int cmd_check(const CheckArgs& a) {
    Loaded l = load(a.file);
    const Node& fn = find_function(l, a.function);
    validate(l, fn);
    if (a.points < 1) throw UsageError("--points must be positive");
    CheckOptions co;
    co.points = a.points;
    co.seed = a.seed;
    co.tol_rel = a.tol_rel;
    co.tol_abs = a.tol_abs;
    try {
        if (!a.args_spec.empty())
            co.args = parse_arg_specs(a.args_spec);
        else if (auto s = find_arg_specs(l.text, a.function))
            co.args = *s;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    GradOptions o;
    o.wrt = wrt_for(fn, a.wrt);
    o.optimize = !a.no_opt;
    Registry reg = registry_with(a.adjoints);
    GradResult r = grad(fn, l.program, o, reg);
    CheckReport rep = check(l.program, a.function, r, co);
    std::cout << (a.json ? rep.to_json() + "\n" : rep.to_text());
    return rep.pass() ? 0 : 1;
}

struct BenchArgs {
    std::string program = "mlp";
    std::vector<long> sizes;
    int runs = 50, batch = 16;
    std::uint64_t seed = 0;
};

Value random_array(Shape shape, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    Array arr(std::move(shape), 0.0);
    for (auto& x : arr.data) x = n(rng);
    return Value(std::move(arr));
}

int cmd_bench(BenchArgs a) {
    using clock = std::chrono::steady_clock;
    const bool mlp = a.program == "mlp";
    if (!mlp && a.program != "loop") throw UsageError("--program must be mlp or loop");
    if (a.sizes.empty()) a.sizes = mlp ? std::vector<long>{16, 64, 256} : std::vector<long>{1, 2, 4, 8};
    if (a.runs < 1 || a.batch < 1) throw UsageError("--runs and --batch must be positive");
    for (long s : a.sizes)
        if (s < 1) throw UsageError("--sizes must be positive");

    const Program program = parse_or_throw(*corpus_source(mlp ? "mlp" : "loop"));
    const std::string function = mlp ? "mlp" : "loop";
    std::ostringstream csv;
    csv << "size,median_ns,mean_ns,first_call_ns\n";
    std::cerr << std::left << std::setw(10) << "size" << std::setw(14) << "params" << std::setw(16) << "median_ns"
              << std::setw(16) << "mean_ns" << "first_call_ns\n";
    for (long size : a.sizes) {
        std::mt19937_64 rng(a.seed);
        const std::size_t batch = static_cast<std::size_t>(a.batch);
        std::vector<Value> args;
        std::size_t params = 0;
        if (mlp) {
            const std::size_t in = 32, hidden = static_cast<std::size_t>(size), out = 10;
            Array label({batch, out}, 0.0);
            for (std::size_t r = 0; r < batch; ++r) label.data[r * out + rng() % out] = 1.0;
            args = {random_array({batch, in}, rng, 1.0),       random_array({in, hidden}, rng, 0.1),
                    random_array({hidden}, rng, 0.1),          random_array({hidden, out}, rng, 0.1),
                    random_array({out}, rng, 0.1),             Value(std::move(label))};
            params = in * hidden + hidden + hidden * out + out;
        } else {
            args = {random_array({batch}, rng, 1.0), Value(static_cast<std::int64_t>(size))};
            params = batch;
        }

        auto t0 = clock::now();
        GradCache cache(program, Registry::builtin());
        GradOptions o;
        o.wrt = mlp ? std::vector<int>{1, 2, 3, 4} : std::vector<int>{0};
        auto g = cache.get(function, o);
        EvalOptions eo;
        eo.checked = false;
        Interpreter interp(with_gradient(program, *g), eo);
        interp.call(g->fn_ast.text, args);
        const auto first = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();

        std::vector<double> times;
        for (int r = 0; r < a.runs; ++r) {
            auto s = clock::now();
            interp.call(g->fn_ast.text, args);
            times.push_back(static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - s).count()));
        }
        std::sort(times.begin(), times.end());
        const double median = times.size() % 2 ? times[times.size() / 2]
                                               : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
        const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
        csv << size << "," << static_cast<long long>(median) << "," << static_cast<long long>(mean) << "," << first
            << "\n";
        std::cerr << std::setw(10) << size << std::setw(14) << params << std::setw(16)
                  << static_cast<long long>(median) << std::setw(16) << static_cast<long long>(mean) << first << "\n";
    }
    std::cout << csv.str();
    return 0;
}

struct OptArgs {
    std::string file, function, out = "-", passes = "simplify,copyprop,dce";
    bool no_fixpoint = false;
};

int cmd_opt(const OptArgs& a) {
    Loaded l = load(a.file);
    std::vector<const Node*> targets;
    if (a.function.empty())
        for (const auto& f : l.program.functions) targets.push_back(&f);
    else
        targets.push_back(&find_function(l, a.function));
    PassConfig cfg;
    cfg.passes.clear();
    std::stringstream ss(a.passes);
    std::string p;
    while (std::getline(ss, p, ',')) {
        if (p == "simplify")
            cfg.passes.push_back(Pass::Simplify);
        else if (p == "copyprop")
            cfg.passes.push_back(Pass::CopyProp);
        else if (p == "dce")
            cfg.passes.push_back(Pass::Dce);
        else
            throw UsageError("unknown pass '" + p + "' (expected simplify, copyprop, dce)");
    }
    cfg.fixpoint = !a.no_fixpoint;
    std::string text;
    for (const Node* fn : targets) {
        PipelineResult r = run_pipeline(*fn, cfg);
        for (const auto& w : r.warnings) std::cerr << format_diagnostic(w, l.path) << "\n";
        text += (text.empty() ? "" : "\n") + emit(r.fn);
    }
    write_output(a.out, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source-to-source reverse-mode differentiation for TSL programs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "adjoint 0.1.0");

    GradArgs ga;
    auto* g = app.add_subcommand("grad", "Generate the gradient of a function");
    g->add_option("file", ga.file, "TSL source")->required();
    g->add_option("function", ga.function, "Function to differentiate")->required();
    g->add_option("--wrt", ga.wrt, "Comma-separated parameter indices")->capture_default_str();
    g->add_flag("--no-opt", ga.no_opt, "Skip the optimizer (also -O0)");
    g->add_option("--adjoints", ga.adjoints, "TSL file with adjoint_<name> rules overriding the builtins");
    g->add_flag("--dump-cfg", ga.dump_cfg, "Print the control flow graph (dot) to stderr");
    g->add_flag("--preserve-result", ga.preserve, "Also return the primal value");
    g->add_option("--seed-param", ga.seed_param, "Name of the output-adjoint parameter");
    g->add_option("--truncate", ga.truncate, "LOOP:K, limit the adjoint of a loop to its last K iterations");
    g->add_option("-o,--output", ga.out, "Output file (default stdout)");

    RunArgs ra;
    auto* r = app.add_subcommand("run", "Evaluate a function; d<f>d<params> names are generated on demand");
    r->add_option("file", ra.file, "TSL source")->required();
    r->add_option("function", ra.function, "Function to call")->required();
    r->add_option("--args", ra.args, "JSON array of arguments")->capture_default_str();
    r->add_option("--adjoints", ra.adjoints, "TSL file with adjoint_<name> rules");
    r->add_flag("--no-opt", ra.no_opt, "Skip the optimizer for generated gradients (also -O0)");

    CheckArgs ca;
    auto* c = app.add_subcommand("check", "Compare a generated gradient with finite differences");
    c->add_option("file", ca.file, "TSL source")->required();
    c->add_option("function", ca.function, "Function to check")->required();
    c->add_option("--wrt", ca.wrt, "Comma-separated parameter indices")->capture_default_str();
    c->add_option("--points", ca.points, "Number of sample points")->capture_default_str();
    c->add_option("--seed", ca.seed, "Sampling seed")->capture_default_str();
    c->add_option("--tol-rel", ca.tol_rel, "Relative tolerance")->capture_default_str();
    c->add_option("--tol-abs", ca.tol_abs, "Absolute floor")->capture_default_str();
    c->add_option("--args-spec", ca.args_spec, "JSON argument spec (overrides '# check-args' lines)");
    c->add_option("--adjoints", ca.adjoints, "TSL file with adjoint_<name> rules");
    c->add_flag("--json", ca.json, "JSON report");
    c->add_flag("--no-opt", ca.no_opt, "Skip the optimizer (also -O0)");

    BenchArgs ba;
    auto* b = app.add_subcommand("bench", "Time generated gradients of the bundled mlp or loop programs");
    b->add_option("--program", ba.program, "mlp or loop")->capture_default_str();
    b->add_option("--sizes", ba.sizes, "Hidden widths (mlp) or step counts (loop)")->delimiter(',');
    b->add_option("--runs", ba.runs, "Timed calls per size")->capture_default_str();
    b->add_option("--batch", ba.batch, "Batch size")->capture_default_str();
    b->add_option("--seed", ba.seed, "Input seed")->capture_default_str();

    OptArgs oa;
    auto* o = app.add_subcommand("opt", "Run the optimizer on functions of a file");
    o->add_option("file", oa.file, "TSL source")->required();
    o->add_option("function", oa.function, "Function (default: all)");
    o->add_option("--passes", oa.passes, "Comma-separated passes")->capture_default_str();
    o->add_flag("--no-fixpoint", oa.no_fixpoint, "Run the passes once");
    o->add_option("-o,--output", oa.out, "Output file (default stdout)");

    // CLI11 only takes single-letter short options; spell -O0 the long way.
    std::vector<std::string> words;
    for (int i = argc - 1; i >= 1; --i) words.push_back(std::string(argv[i]) == "-O0" ? "--no-opt" : argv[i]);
    try {
        app.parse(words);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*g) return cmd_grad(ga);
        if (*r) return cmd_run(ra);
        if (*c) return cmd_check(ca);
        if (*b) return cmd_bench(ba);
        if (*o) return cmd_opt(oa);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ReportedFailure&) {
        return 1;
    } catch (const EvalError& e) {
        std::cerr << "runtime error: " << e.base_message() << "\n";
        for (const auto& frame : e.trace()) std::cerr << "  " << frame << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
