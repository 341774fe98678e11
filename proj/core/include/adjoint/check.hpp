#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/runtime.hpp"
#include "adjoint/transform.hpp"
#include "adjoint/value.hpp"

namespace adjoint {

/// How to draw one argument of a checked function.
struct ArgSpec {
    enum class Kind { Real, Int, OneHot, Fixed };
    Kind kind = Kind::Real;
    Shape shape;  // Real: empty for a scalar
    double lo = -1.0, hi = 1.0;
    std::int64_t int_lo = 1, int_hi = 1;
    std::size_t rows = 1, cols = 1;  // OneHot
    std::optional<Value> fixed;
};

/// JSON list such as
/// `[{"shape": [2], "range": [0.1, 2]}, {"int": [1, 5]}, {"onehot": [2, 3]}, {"value": 0.5}]`.
std::vector<ArgSpec> parse_arg_specs(std::string_view json_text);

/// Spec from a `# check-args <function>: [...]` line of `source`, if any.
std::optional<std::vector<ArgSpec>> find_arg_specs(std::string_view source, std::string_view function);

struct CheckOptions {
    int points = 10;
    std::uint64_t seed = 0;
    double tol_rel = 1e-5;
    double tol_abs = 1e-8;
    double h_scale = 1e-6;
    /// Points whose branch conditions lie this close to a threshold are redrawn.
    double boundary = 1e-4;
    /// One per parameter; missing entries default to scalars in [-1, 1].
    std::vector<ArgSpec> args;
    bool parallel = true;
};

struct CheckFailure {
    std::string input_digest;
    std::string parameter;
    std::size_t element = 0;
    double got = 0.0;
    double expected = 0.0;
};

struct ParamError {
    std::string parameter;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct CheckReport {
    std::string function;
    std::vector<int> wrt;
    std::vector<ParamError> params;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int points_tested = 0;
    std::vector<CheckFailure> failures;

    bool pass() const { return failures.empty(); }
    std::string to_text() const;
    std::string to_json() const;
};

/// Central differences of the scalar output of `function` with respect to each
/// `wrt` parameter, step h_scale * max(1, |x_i|) per element.
std::vector<Value> finite_diff(const Interpreter& interp, std::string_view function, const std::vector<Value>& args,
                               const std::vector<int>& wrt, double h_scale = 1e-6);

/// Draws inputs for `function` per `options.args`, redrawing points that sit
/// on a branch boundary.
std::vector<std::vector<Value>> sample_points(const Program& program, std::string_view function,
                                              const CheckOptions& options);

/// Compares `gradient` (generated for `function` of `program`) against
/// finite differences at options.points sampled inputs.
CheckReport check(const Program& program, std::string_view function, const GradResult& gradient,
                  const CheckOptions& options = {});

}  // namespace adjoint
