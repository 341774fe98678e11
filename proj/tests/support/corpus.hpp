#pragma once

#include <string>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/check.hpp"

namespace adjoint::testing {

/// One differentiable function of the test corpus, with its sampling spec.
struct CorpusCase {
    std::string name;  // "<program>/<function>"
    std::string source;
    Program program;
    std::string function;
    std::vector<int> wrt;
    std::vector<ArgSpec> args;
    /// False when gradients are modified on purpose (grad_of), so finite
    /// differences do not apply.
    bool fd_checkable = true;
};

/// Every function of the bundled corpus that carries a `# check-args` line or
/// contains grad_of, then `fuzz_count` generated programs.
std::vector<CorpusCase> corpus_cases(int fuzz_count = 50);

/// wrt = every parameter drawn as a real (non-int, non-fixed) argument.
std::vector<int> real_params(const std::vector<ArgSpec>& specs);

/// Source of a bundled corpus program; throws if there is none.
std::string corpus_text(std::string_view name);

}  // namespace adjoint::testing
