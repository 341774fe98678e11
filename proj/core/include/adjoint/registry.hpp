#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "adjoint/ast.hpp"

namespace adjoint {

/// An adjoint rule written as TSL. Every statement has the form
/// `d[p] = expr`, where `p` is one of `params` and `d[q]` inside `expr` reads
/// the adjoint of `q`. Parameters after the operands may carry defaults
/// (keyword arguments such as `axis=None`).
struct AdjointTemplate {
    std::string target;
    std::vector<std::string> params;
    std::vector<std::optional<Node>> defaults;
    std::vector<Node> body;
    /// Parameters whose primal values the body reads outside `d[...]`.
    std::set<std::string> requires_primal_values;
};

/// Template parameter -> concrete atom (a Name or a literal).
using Binding = std::map<std::string, Node>;

struct ExpandContext {
    /// Maps a primal variable to its adjoint identifier.
    std::function<std::string(const std::string&)> grad_name;
    /// Whether an adjoint already holds a value (accumulate with add_grad).
    std::function<bool(const std::string&)> is_initialized;
    /// Whether a variable receives adjoints at all; others are dropped.
    std::function<bool(const std::string&)> wants_grad;
    /// Fresh temporary for one of several contributions to the same variable.
    std::function<std::string(const std::string&)> fresh_temp;
};

/// Operator targets: "add", "sub", "mul", "div", "neg", comparisons "lt",
/// "gt", "le", "ge", "eq", "ne".
std::string operator_target(std::string_view op, bool unary);

/// Builds a template from `def adjoint_<name>(result, arg1, ...)`. Throws
/// adjoint::Error on hygiene violations.
AdjointTemplate template_from_function(const Node& fn, std::string target);

/// Substitutes the binding into the template body. Contributions to the same
/// variable inside one expansion go through temporaries and are then
/// accumulated; contributions to an initialized adjoint use add_grad.
std::vector<Node> expand(const AdjointTemplate& tpl, const Binding& binding, const ExpandContext& ctx);

/// Binds a call's positional and keyword arguments to the template
/// parameters following `result`. Missing optional parameters take their
/// defaults. Throws when a parameter stays unbound.
Binding bind_call(const AdjointTemplate& tpl, const Node& result, const std::vector<Node>& args);

class Registry {
  public:
    /// Throws when `tpl.target` is already registered, unless `overwrite`.
    void add(AdjointTemplate tpl, bool overwrite = false);
    const AdjointTemplate* lookup(std::string_view target) const;
    bool contains(std::string_view target) const { return lookup(target) != nullptr; }
    std::vector<std::string> targets() const;

    /// Registers every `adjoint_<name>` function of `program`, replacing
    /// existing rules. Returns the names registered.
    std::vector<std::string> load(const Program& program);

    /// Registry holding builtin_catalog().
    static Registry builtin();

  private:
    std::map<std::string, AdjointTemplate, std::less<>> templates_;
};

const std::vector<AdjointTemplate>& builtin_catalog();

/// TSL source of the builtin rules.
std::string_view builtin_adjoint_source();

}  // namespace adjoint
