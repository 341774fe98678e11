#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <future>
#include <string>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/diagnostic.hpp"
#include "adjoint/registry.hpp"

namespace adjoint {

struct GradOptions {
    /// 0-based parameter indices, in the order the gradients are returned.
    std::vector<int> wrt;
    /// Name of the output-adjoint parameter. Empty: `b<returned variable>`.
    std::string seed_param;
    /// Return the primal value before the gradients.
    bool preserve_result = false;
    bool optimize = true;
    /// Loop id (preorder index among for/while loops) -> number of reverse
    /// iterations that propagate adjoints.
    std::map<int, std::int64_t> truncate;
};

enum class SlotPurpose { OverwrittenValue, LoopTripCount, BranchFlag, LoopVariable };

struct StackSlot {
    int id = 0;
    SlotPurpose purpose = SlotPurpose::OverwrittenValue;
    std::string variable;
};

struct GradResult {
    std::string source;
    Node fn_ast;
    std::vector<int> wrt;
    std::vector<StackSlot> slots;
    std::vector<Diagnostic> warnings;
    /// Generated gradients of called user functions, callees first. Needed
    /// next to fn_ast to evaluate it.
    std::vector<Node> callees;
    /// Variables that received adjoint names, mapped to those names.
    std::map<std::string, std::string> adjoint_names;
};

/// Memo table of generated gradients keyed by (function, wrt signature).
/// Each key is generated at most once even under concurrent requests. Holds
/// its own copies of the program and registry.
class GradCache {
  public:
    GradCache(const Program& program, const Registry& registry);

    std::shared_ptr<const GradResult> get(const std::string& function, const GradOptions& options);
    /// Number of distinct gradients generated so far.
    std::size_t generated() const;

  private:
    friend class Transformer;
    std::shared_ptr<const GradResult> get_chain(const std::string& function, const GradOptions& options,
                                                std::vector<std::string> chain);

    Program program_;
    Registry registry_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_future<std::shared_ptr<const GradResult>>> memo_;
};

/// Generates the gradient of `fn` (a function of `program`).
GradResult grad(const Node& fn, const Program& program, const GradOptions& options);
GradResult grad(const Node& fn, const Program& program, const GradOptions& options, const Registry& registry);

/// Same as grad() with the adjoint of loop `loop_id` limited to its last `k`
/// iterations. Throws on an unknown loop id.
GradResult truncate_loop_adjoint(const Node& fn, const Program& program, GradOptions options, int loop_id,
                                 std::int64_t k);

/// `d<fn>d<wrt parameter names>`.
std::string grad_function_name(const Node& fn, const std::vector<int>& wrt);

/// Parses "0,2" style index lists. Throws on malformed input.
std::vector<int> parse_wrt(const std::string& text);

/// Number of for/while loops in `fn`.
int count_loops(const Node& fn);

/// Program holding `result`'s callees and gradient, ready for evaluation
/// alongside the original functions.
Program with_gradient(const Program& program, const GradResult& result);

}  // namespace adjoint
