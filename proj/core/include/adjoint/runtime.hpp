#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/diagnostic.hpp"
#include "adjoint/value.hpp"

namespace adjoint {

/// True when ADJOINT_CHECKED=1 is set in the environment.
bool checked_mode_from_env();

/// Runtime failure with the TSL call stack, innermost frame first
/// ("in dfdx, line 4").
class EvalError : public Error {
  public:
    EvalError(const std::string& message, Span span) : Error(message, span), base_(message) {}

    const std::vector<std::string>& trace() const { return trace_; }
    void add_frame(std::string frame);
    const std::string& base_message() const { return base_; }

  private:
    std::string base_;
    std::vector<std::string> trace_;
};

struct EvalHooks {
    /// After a statement binds `name` (Assign, AugAssign, IndexAssign, tuple
    /// targets). The value may be modified in place.
    std::function<void(const Node& stmt, const std::string& name, Value& value)> on_assign;
    /// For every numeric comparison inside an `if`/`while` condition:
    /// lhs - rhs before the comparison is applied.
    std::function<void(const Node& comparison, double margin)> on_condition;
};

struct EvalOptions {
    /// Stack-balance, slot-id and NaN/division checks.
    bool checked = checked_mode_from_env();
    EvalHooks hooks;
    /// Destination for `print`; defaults to standard error.
    std::ostream* print_stream = nullptr;
    /// Destination for checked-mode warnings; defaults to standard error.
    std::ostream* warning_stream = nullptr;
};

/// Per-call statistics of the adjoint stack, summed over nested calls.
struct StackStats {
    std::size_t pushes = 0;
    std::size_t pops = 0;
    std::size_t max_depth = 0;
};

/// Tree-walking evaluator. `call` is const and keeps all mutable state in a
/// per-call frame, so one Interpreter may serve several threads as long as the
/// hooks are thread-safe.
class Interpreter {
  public:
    explicit Interpreter(Program program, EvalOptions options = {});

    /// Evaluates `function`; a tuple return yields several values.
    std::vector<Value> call(std::string_view function, std::vector<Value> args,
                            StackStats* stats = nullptr) const;
    /// Convenience for single-valued functions.
    Value call1(std::string_view function, std::vector<Value> args) const;

    const Program& program() const { return program_; }
    const EvalOptions& options() const { return options_; }

  private:
    friend class Frame;
    Program program_;
    EvalOptions options_;
    std::unordered_map<std::string, const Node*> functions_;
};

}  // namespace adjoint
