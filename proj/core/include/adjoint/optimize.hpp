#pragma once

#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/diagnostic.hpp"

namespace adjoint {

enum class Pass { Simplify, CopyProp, Dce };

struct PassConfig {
    std::vector<Pass> passes{Pass::Simplify, Pass::CopyProp, Pass::Dce};
    bool fixpoint = true;
    int max_iterations = 10;
};

/// `x = 0; x += e` -> `x = e`, `e * 1` -> `e`, `e + 0` -> `e`, `c * 0` -> `0`
/// for numeric literals c, and `add_grad(v, e)` -> `e` when `v` is
/// certainly unbound.
Node simplify(const Node& fn);

/// Replaces uses of compiler temporaries (`_t<k>`, `b_t<k>`) defined by a
/// plain copy with the copied name, while neither side is reassigned.
Node copy_propagate(const Node& fn);

/// Removes assignments whose values never reach a return, a push, a print or
/// a control-flow condition. A dead `v = pop(k)` takes its `push(..., k)`
/// with it.
Node dce(const Node& fn);

struct PipelineResult {
    Node fn;
    std::vector<Diagnostic> warnings;
    int iterations = 0;
};

PipelineResult run_pipeline(const Node& fn, const PassConfig& config = {});

}  // namespace adjoint
