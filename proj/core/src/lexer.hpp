#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "adjoint/diagnostic.hpp"

namespace adjoint::detail {

enum class Tok { Name, Number, Op, Newline, Indent, Dedent, Comment, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    Span span;
};

struct LexResult {
    std::vector<Token> tokens;
    std::vector<Diagnostic> diagnostics;
};

/// Produces a Python-style token stream. Full-line comments become Comment
/// tokens placed after the indentation change of the next logical line so
/// they belong to the block that follows them.
LexResult lex(std::string_view text);

}  // namespace adjoint::detail
