#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "adjoint/ast.hpp"

namespace adjoint {

enum class Severity { Error, Warning };

struct Diagnostic {
    Severity severity = Severity::Error;
    std::string code;
    std::string message;
    Span span;
};

std::string format_diagnostic(const Diagnostic& d, std::string_view path = {});
bool has_errors(const std::vector<Diagnostic>& diags);

/// Base exception for toolchain failures (transform errors, runtime errors).
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& message, Span span = {})
        : std::runtime_error(message), span_(span) {}

    Span span() const { return span_; }

  private:
    Span span_;
};

}  // namespace adjoint
