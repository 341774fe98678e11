#include <algorithm>
#include <set>

#include "adjoint/frontend.hpp"

namespace adjoint {

const std::vector<std::string>& intrinsic_names() {
    static const std::vector<std::string> names = {
        // numeric kernels
        "dot", "tanh", "exp", "log", "sum", "mean", "multiply", "min",
        // gradient helpers used by generated code
        "unbroadcast", "add_grad", "zeros_like", "sum_grad", "mean_grad", "index_grad",
        "grad_dot_lhs", "grad_dot_rhs",
        // stack and debugging
        "push", "pop", "print",
    };
    return names;
}

bool is_intrinsic(std::string_view name) {
    const auto& names = intrinsic_names();
    return std::find(names.begin(), names.end(), name) != names.end();
}

bool is_constant_name(std::string_view name) { return name == "True" || name == "False" || name == "None"; }

namespace {

class SubsetChecker {
  public:
    SubsetChecker(const Node& fn, const Program& program) : fn_(fn), program_(program) {}

    std::vector<Diagnostic> run() {
        std::set<std::string> defined;
        for (const auto& p : fn_.kids) {
            if (!defined.insert(p.text).second)
                error("E_DUP_PARAM", "duplicate parameter '" + p.text + "'", p.span);
            check_target(p.text, p.span);
        }
        check_returns();
        block(fn_.body, defined, /*in_grad_of=*/false);
        return std::move(diags_);
    }

  private:
    void error(std::string code, std::string msg, Span span) {
        diags_.push_back({Severity::Error, std::move(code), std::move(msg), span});
    }

    void check_returns() {
        const auto& body = fn_.body;
        auto last_code = std::find_if(body.rbegin(), body.rend(),
                                      [](const Node& s) { return s.kind != NodeKind::Comment; });
        if (last_code == body.rend() || last_code->kind != NodeKind::Return)
            error("E_RETURN", "function '" + fn_.text + "' must end with a return statement", fn_.span);
        int top_level_returns = 0;
        for (const auto& s : body) top_level_returns += s.kind == NodeKind::Return;
        if (top_level_returns > 1)
            error("E_RETURN", "function '" + fn_.text + "' has more than one return (single exit required)",
                  fn_.span);
        for (const auto& s : body) {
            visit_statements(s.body, [&](const Node& n) {
                if (n.kind == NodeKind::Return)
                    error("E_RETURN", "return is only allowed as the last statement of a function", n.span);
            });
            visit_statements(s.orelse, [&](const Node& n) {
                if (n.kind == NodeKind::Return)
                    error("E_RETURN", "return is only allowed as the last statement of a function", n.span);
            });
        }
    }

    void check_target(const std::string& name, Span span) {
        if (is_intrinsic(name) || is_constant_name(name) || program_.find(name))
            error("E_SHADOW", "assignment to '" + name + "' would shadow a function or intrinsic", span);
    }

    void reads(const Node& e, const std::set<std::string>& defined) {
        switch (e.kind) {
            case NodeKind::Name:
                if (defined.count(e.text) || is_constant_name(e.text)) return;
                if (program_.find(e.text) || is_intrinsic(e.text))
                    error("E_FUNC_VALUE", "function '" + e.text + "' cannot be used as a value", e.span);
                else
                    error("E_FREE_VAR", "free variable '" + e.text + "' is not a parameter or local", e.span);
                return;
            case NodeKind::Call: {
                const Node* callee = program_.find(e.text);
                if (!callee && !is_intrinsic(e.text)) {
                    std::string why = defined.count(e.text) ? " (functions cannot be passed as values)" : "";
                    error("E_UNRESOLVED_CALL", "unresolvable function " + e.text + why, e.span);
                }
                if (callee) {
                    std::size_t positional = 0;
                    for (const auto& a : e.kids) {
                        if (a.kind == NodeKind::Keyword)
                            error("E_USER_KEYWORD", "keyword arguments are only supported for intrinsics", a.span);
                        else
                            ++positional;
                    }
                    std::size_t required = 0;
                    for (const auto& p : callee->kids) required += p.kids.empty();
                    if (positional < required || positional > callee->kids.size())
                        error("E_ARITY", "call to '" + e.text + "' with " + std::to_string(positional) +
                                             " arguments, expected " + std::to_string(callee->kids.size()),
                              e.span);
                }
                for (const auto& a : e.kids) reads(a.kind == NodeKind::Keyword ? a.kids[0] : a, defined);
                return;
            }
            case NodeKind::TupleExpr:
            case NodeKind::BinOp:
            case NodeKind::UnaryOp:
            case NodeKind::Index:
                for (const auto& k : e.kids) reads(k, defined);
                return;
            default:
                return;
        }
    }

    void block(const std::vector<Node>& stmts, std::set<std::string>& defined, bool in_grad_of) {
        for (const auto& s : stmts) stmt(s, defined, in_grad_of);
    }

    void stmt(const Node& s, std::set<std::string>& defined, bool in_grad_of) {
        switch (s.kind) {
            case NodeKind::Comment:
                return;
            case NodeKind::Return:
                reads(s.kids[0], defined);
                return;
            case NodeKind::Assign:
                reads(s.kids[1], defined);
                if (s.kids[0].kind == NodeKind::TupleExpr) {
                    if (s.kids[1].kind != NodeKind::Call)
                        error("E_TUPLE", "tuple assignment requires a call on the right-hand side", s.span);
                    for (const auto& t : s.kids[0].kids) {
                        check_target(t.text, t.span);
                        defined.insert(t.text);
                    }
                } else {
                    check_target(s.kids[0].text, s.span);
                    defined.insert(s.kids[0].text);
                }
                return;
            case NodeKind::AugAssign:
                reads(s.kids[0], defined);
                reads(s.kids[1], defined);
                return;
            case NodeKind::IndexAssign:
                reads(s.kids[0], defined);
                reads(s.kids[1], defined);
                reads(s.kids[2], defined);
                return;
            case NodeKind::ExprStmt:
                reads(s.kids[0], defined);
                return;
            case NodeKind::If: {
                reads(s.kids[0], defined);
                std::set<std::string> then_defs = defined, else_defs = defined;
                block(s.body, then_defs, in_grad_of);
                block(s.orelse, else_defs, in_grad_of);
                defined.insert(then_defs.begin(), then_defs.end());
                defined.insert(else_defs.begin(), else_defs.end());
                return;
            }
            case NodeKind::ForRange:
                reads(s.kids[0], defined);
                check_target(s.text, s.span);
                defined.insert(s.text);
                block(s.body, defined, in_grad_of);
                return;
            case NodeKind::While:
                reads(s.kids[0], defined);
                block(s.body, defined, in_grad_of);
                return;
            case NodeKind::GradOfBlock: {
                if (in_grad_of) error("E_GRADOF", "grad_of blocks cannot be nested", s.span);
                auto params = param_names(fn_);
                if (std::find(params.begin(), params.end(), s.text) == params.end())
                    error("E_GRADOF", "grad_of must name a parameter of '" + fn_.text + "', got '" + s.text + "'",
                          s.span);
                std::set<std::string> inner = defined;
                inner.insert(s.alias);
                block(s.body, inner, true);
                return;
            }
            default:
                error("E_INTERNAL", "unexpected node " + std::string(kind_name(s.kind)), s.span);
        }
    }

    const Node& fn_;
    const Program& program_;
    std::vector<Diagnostic> diags_;
};

}  // namespace

std::vector<Diagnostic> validate_subset(const Node& fn, const Program& program) {
    return SubsetChecker(fn, program).run();
}

std::vector<Diagnostic> validate_program(const Program& program) {
    std::vector<Diagnostic> all;
    std::set<std::string> seen;
    for (const auto& fn : program.functions) {
        if (!seen.insert(fn.text).second)
            all.push_back({Severity::Error, "E_DUP_FUNC", "function '" + fn.text + "' defined twice", fn.span});
        if (is_intrinsic(fn.text))
            all.push_back({Severity::Error, "E_SHADOW", "function '" + fn.text + "' shadows an intrinsic", fn.span});
        auto d = validate_subset(fn, program);
        all.insert(all.end(), d.begin(), d.end());
    }
    return all;
}

}  // namespace adjoint
