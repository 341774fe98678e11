#include "adjoint/check.hpp"

#include <cmath>
#include <cstring>
#include <future>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "adjoint/diagnostic.hpp"

namespace adjoint {
namespace {

using nlohmann::json;

ArgSpec spec_from(const json& j) {
    if (!j.is_object()) throw Error("argument spec must be an object, got " + j.dump());
    ArgSpec s;
    if (j.contains("value")) {
        s.kind = ArgSpec::Kind::Fixed;
        s.fixed = value_from_json(j["value"].dump());
    } else if (j.contains("int")) {
        const auto& r = j["int"];
        if (!r.is_array() || r.size() != 2) throw Error("\"int\" takes [lo, hi]");
        s.kind = ArgSpec::Kind::Int;
        s.int_lo = r[0].get<std::int64_t>();
        s.int_hi = r[1].get<std::int64_t>();
        if (s.int_lo > s.int_hi) throw Error("empty integer range in argument spec");
    } else if (j.contains("onehot")) {
        const auto& r = j["onehot"];
        if (!r.is_array() || r.size() != 2) throw Error("\"onehot\" takes [rows, cols]");
        s.kind = ArgSpec::Kind::OneHot;
        s.rows = r[0].get<std::size_t>();
        s.cols = r[1].get<std::size_t>();
        if (s.rows == 0 || s.cols == 0) throw Error("one-hot dimensions must be positive");
    } else {
        s.kind = ArgSpec::Kind::Real;
        if (j.contains("shape")) s.shape = j["shape"].get<Shape>();
        for (auto d : s.shape)
            if (d == 0) throw Error("argument shapes must have positive dimensions");
        if (j.contains("range")) {
            const auto& r = j["range"];
            if (!r.is_array() || r.size() != 2) throw Error("\"range\" takes [lo, hi]");
            s.lo = r[0].get<double>();
            s.hi = r[1].get<double>();
            if (!(s.lo < s.hi)) throw Error("empty range in argument spec");
        }
    }
    return s;
}

Value draw(const ArgSpec& s, std::mt19937_64& rng) {
    switch (s.kind) {
        case ArgSpec::Kind::Fixed:
            return *s.fixed;
        case ArgSpec::Kind::Int:
            return Value(std::uniform_int_distribution<std::int64_t>(s.int_lo, s.int_hi)(rng));
        case ArgSpec::Kind::OneHot: {
            Array a({s.rows, s.cols}, 0.0);
            std::uniform_int_distribution<std::size_t> pick(0, s.cols - 1);
            for (std::size_t r = 0; r < s.rows; ++r) a.data[r * s.cols + pick(rng)] = 1.0;
            return Value(std::move(a));
        }
        case ArgSpec::Kind::Real:
            break;
    }
    std::uniform_real_distribution<double> u(s.lo, s.hi);
    if (s.shape.empty()) return Value(u(rng));
    Array a(s.shape, 0.0);
    for (auto& x : a.data) x = u(rng);
    return Value(std::move(a));
}

std::string digest(const std::vector<Value>& args) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& a : args) {
        mix(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            double d = a.element(i);
            std::uint64_t bits = 0;
            std::memcpy(&bits, &d, sizeof bits);
            mix(bits);
        }
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

double scalar_output(const std::vector<Value>& out, std::string_view function) {
    if (out.size() != 1 || !out[0].is_number())
        throw Error("'" + std::string(function) + "' must return a scalar to be checked, got " +
                    (out.size() == 1 ? out[0].type_name() + " of shape " + shape_string(out[0].shape())
                                     : std::to_string(out.size()) + " values") +
                    "; contract it explicitly (for example with sum) before checking");
    return out[0].as_double();
}

Value perturbed(const Value& v, std::size_t i, double delta) {
    if (v.is_scalar()) return Value(v.as_double() + delta);
    Value out = v;
    out.as_array().data[i] += delta;
    return out;
}

struct PointResult {
    std::vector<CheckFailure> failures;
    std::vector<ParamError> params;
};

}  // namespace

std::vector<ArgSpec> parse_arg_specs(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("invalid argument spec JSON: ") + e.what());
    }
    if (!j.is_array()) throw Error("argument spec must be a JSON array");
    std::vector<ArgSpec> out;
    try {
        for (const auto& e : j) out.push_back(spec_from(e));
    } catch (const json::exception& e) {
        throw Error(std::string("invalid argument spec: ") + e.what());
    }
    return out;
}

std::optional<std::vector<ArgSpec>> find_arg_specs(std::string_view source, std::string_view function) {
    const std::string prefix = "# check-args " + std::string(function) + ":";
    std::size_t pos = 0;
    while (pos < source.size()) {
        std::size_t end = source.find('\n', pos);
        if (end == std::string_view::npos) end = source.size();
        std::string_view line = source.substr(pos, end - pos);
        auto b = line.find_first_not_of(" \t");
        if (b != std::string_view::npos && line.substr(b).rfind(prefix, 0) == 0)
            return parse_arg_specs(line.substr(b + prefix.size()));
        pos = end + 1;
    }
    return std::nullopt;
}

std::vector<Value> finite_diff(const Interpreter& interp, std::string_view function, const std::vector<Value>& args,
                               const std::vector<int>& wrt, double h_scale) {
    scalar_output(interp.call(function, args), function);
    std::vector<Value> grads;
    for (int w : wrt) {
        if (w < 0 || w >= static_cast<int>(args.size())) throw Error("wrt index out of range");
        const Value& x = args[static_cast<std::size_t>(w)];
        if (!x.is_scalar() && !x.is_array())
            throw Error("cannot take finite differences with respect to a " + x.type_name() + " argument");
        Value g = x.is_scalar() ? Value(0.0) : Value(Array(x.shape(), 0.0));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double h = h_scale * std::max(1.0, std::abs(x.element(i)));
            std::vector<Value> plus = args, minus = args;
            plus[static_cast<std::size_t>(w)] = perturbed(x, i, h);
            minus[static_cast<std::size_t>(w)] = perturbed(x, i, -h);
            const double d = (scalar_output(interp.call(function, plus), function) -
                              scalar_output(interp.call(function, minus), function)) /
                             (2.0 * h);
            if (g.is_scalar())
                g = Value(d);
            else
                g.as_array().data[i] = d;
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

std::vector<std::vector<Value>> sample_points(const Program& program, std::string_view function,
                                              const CheckOptions& options) {
    const Node* fn = program.find(function);
    if (!fn) throw Error("unknown function '" + std::string(function) + "'");
    double closest = std::numeric_limits<double>::infinity();
    EvalOptions eo;
    eo.checked = false;
    eo.hooks.on_condition = [&](const Node&, double margin) { closest = std::min(closest, std::abs(margin)); };
    Interpreter interp(program, eo);

    std::mt19937_64 rng(options.seed);
    const ArgSpec fallback;
    std::vector<std::vector<Value>> points;
    const long long budget = 100LL * std::max(1, options.points);
    for (long long attempt = 0; attempt < budget && static_cast<int>(points.size()) < options.points; ++attempt) {
        std::vector<Value> args;
        for (std::size_t i = 0; i < fn->kids.size(); ++i) {
            if (i >= options.args.size() && !fn->kids[i].kids.empty()) break;  // leave defaults alone
            args.push_back(draw(i < options.args.size() ? options.args[i] : fallback, rng));
        }
        closest = std::numeric_limits<double>::infinity();
        interp.call(function, args);
        if (closest < options.boundary) continue;
        points.push_back(std::move(args));
    }
    if (static_cast<int>(points.size()) < options.points)
        throw Error("only " + std::to_string(points.size()) + " of " + std::to_string(options.points) +
                    " sample points avoid branch boundaries after " + std::to_string(budget) +
                    " draws; the function is too discontinuous to check");
    return points;
}

CheckReport check(const Program& program, std::string_view function, const GradResult& gradient,
                  const CheckOptions& options) {
    const Node* fn = program.find(function);
    if (!fn) throw Error("unknown function '" + std::string(function) + "'");
    const auto names = param_names(*fn);

    CheckReport report;
    report.function = std::string(function);
    report.wrt = gradient.wrt;
    for (int w : gradient.wrt) report.params.push_back({names.at(static_cast<std::size_t>(w)), 0.0, 0.0});

    auto points = sample_points(program, function, options);
    EvalOptions eo;
    eo.checked = checked_mode_from_env();
    const Interpreter interp(with_gradient(program, gradient), eo);
    const std::string grad_fn = gradient.fn_ast.text;

    auto run_point = [&](const std::vector<Value>& args) {
        PointResult r;
        r.params = report.params;
        scalar_output(interp.call(function, args), function);
        std::vector<Value> got = interp.call(grad_fn, args);
        if (got.size() == gradient.wrt.size() + 1) got.erase(got.begin());
        if (got.size() != gradient.wrt.size())
            throw Error("gradient '" + grad_fn + "' returned " + std::to_string(got.size()) + " values for " +
                        std::to_string(gradient.wrt.size()) + " parameters");
        std::vector<Value> expected = finite_diff(interp, function, args, gradient.wrt, options.h_scale);
        const std::string dig = digest(args);
        for (std::size_t k = 0; k < got.size(); ++k) {
            const Value& g = got[k];
            const Value& e = expected[k];
            ParamError& pe = r.params[k];
            if (g.size() != e.size() || (g.is_array() && g.shape() != e.shape())) {
                r.failures.push_back({dig, pe.parameter, 0, std::numeric_limits<double>::quiet_NaN(),
                                      std::numeric_limits<double>::quiet_NaN()});
                pe.max_abs_err = pe.max_rel_err = std::numeric_limits<double>::infinity();
                continue;
            }
            for (std::size_t i = 0; i < e.size(); ++i) {
                const double gi = g.element(i), ei = e.element(i);
                const double abs_err = std::abs(gi - ei);
                bool ok;
                if (std::abs(ei) > options.tol_abs) {
                    const double rel = abs_err / std::abs(ei);
                    pe.max_rel_err = std::max(pe.max_rel_err, std::isnan(rel) ? INFINITY : rel);
                    ok = rel <= options.tol_rel;
                } else {
                    ok = abs_err <= options.tol_abs;
                }
                pe.max_abs_err = std::max(pe.max_abs_err, std::isnan(abs_err) ? INFINITY : abs_err);
                if (!ok) r.failures.push_back({dig, pe.parameter, i, gi, ei});
            }
        }
        return r;
    };

    std::vector<PointResult> results(points.size());
    if (options.parallel && points.size() > 1) {
        std::vector<std::future<PointResult>> futures;
        for (const auto& p : points) futures.push_back(std::async(std::launch::async, run_point, std::cref(p)));
        for (std::size_t i = 0; i < futures.size(); ++i) results[i] = futures[i].get();
    } else {
        for (std::size_t i = 0; i < points.size(); ++i) results[i] = run_point(points[i]);
    }

    for (const auto& r : results) {
        for (std::size_t k = 0; k < r.params.size(); ++k) {
            report.params[k].max_rel_err = std::max(report.params[k].max_rel_err, r.params[k].max_rel_err);
            report.params[k].max_abs_err = std::max(report.params[k].max_abs_err, r.params[k].max_abs_err);
        }
        report.failures.insert(report.failures.end(), r.failures.begin(), r.failures.end());
    }
    for (const auto& p : report.params) {
        report.max_rel_err = std::max(report.max_rel_err, p.max_rel_err);
        report.max_abs_err = std::max(report.max_abs_err, p.max_abs_err);
    }
    report.points_tested = static_cast<int>(points.size());
    return report;
}

std::string CheckReport::to_text() const {
    std::ostringstream os;
    os << std::setprecision(3) << std::scientific;
    os << "check " << function << " wrt";
    for (const auto& p : params) os << " " << p.parameter;
    os << ": " << (pass() ? "PASS" : "FAIL") << " (" << points_tested << " points)\n";
    for (const auto& p : params)
        os << "  " << p.parameter << ": max_rel_err " << p.max_rel_err << ", max_abs_err " << p.max_abs_err << "\n";
    const std::size_t shown = std::min<std::size_t>(failures.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) {
        const auto& f = failures[i];
        os << std::setprecision(10) << "  mismatch at input " << f.input_digest << " " << f.parameter << "["
           << f.element << "]: got " << f.got << ", expected " << f.expected << "\n";
    }
    if (failures.size() > shown) os << "  ... " << failures.size() - shown << " more\n";
    return os.str();
}

std::string CheckReport::to_json() const {
    auto num = [](double d) { return std::isfinite(d) ? json(d) : json(nullptr); };
    json j;
    j["function"] = function;
    j["wrt"] = wrt;
    j["points"] = points_tested;
    j["max_rel_err"] = num(max_rel_err);
    j["max_abs_err"] = num(max_abs_err);
    j["pass"] = pass();
    json fs = json::array();
    for (const auto& f : failures)
        fs.push_back({{"input", f.input_digest},
                      {"parameter", f.parameter},
                      {"element", f.element},
                      {"got", num(f.got)},
                      {"expected", num(f.expected)}});
    j["failures"] = fs;
    return j.dump();
}

}  // namespace adjoint
