#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/diagnostic.hpp"

namespace adjoint {

struct SourceProgram {
    std::string text;
    std::string path;
};

struct ParseResult {
    Program program;
    std::vector<Diagnostic> diagnostics;

    bool ok() const { return !has_errors(diagnostics); }
};

/// Parse TSL source. Empty input yields an empty program. Spans are preserved.
ParseResult parse(const SourceProgram& source);
ParseResult parse(std::string_view text);

/// Parse and throw adjoint::Error on the first diagnostic. Handy for tests and
/// embedded programs known to be valid.
Program parse_or_throw(std::string_view text);

/// Names that resolve without a definition in the program: runtime kernels,
/// gradient helpers, stack primitives and the constants True/False/None.
bool is_intrinsic(std::string_view name);
bool is_constant_name(std::string_view name);
const std::vector<std::string>& intrinsic_names();

/// Subset checks for one function within its program. Empty result means the
/// function is eligible for differentiation.
std::vector<Diagnostic> validate_subset(const Node& fn, const Program& program);
std::vector<Diagnostic> validate_program(const Program& program);

/// Deterministic pretty printer. Four-space indentation per level.
std::string emit(const Node& fn);
std::string emit(const Program& program);
std::string emit_statement(const Node& stmt, int indent = 0);
std::string emit_expression(const Node& expr);

}  // namespace adjoint
