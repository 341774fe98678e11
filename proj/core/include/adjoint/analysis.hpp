#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "adjoint/ast.hpp"
#include "adjoint/diagnostic.hpp"

namespace adjoint {

enum class EdgeKind { Fallthrough, TrueBranch, FalseBranch, LoopBack };

struct CfgEdge {
    int from = 0;
    int to = 0;
    EdgeKind kind = EdgeKind::Fallthrough;
};

/// A basic block holds pointers into the analyzed AST. Compound statements
/// (If, ForRange, While) appear as the header item of the block that
/// evaluates their condition or trip count; their bodies live in other blocks.
struct BasicBlock {
    std::vector<const Node*> stmts;
};

/// Structured control flow graph for one FunctionDef. Pointers stay valid as
/// long as the analyzed function is alive and unmodified.
struct Cfg {
    std::vector<BasicBlock> blocks;
    std::vector<CfgEdge> edges;
    int entry = 0;
    int exit = 0;
    std::vector<Diagnostic> diagnostics;

    std::vector<int> successors(int block) const;
    std::vector<int> predecessors(int block) const;
    int count_edges(EdgeKind kind) const;
};

Cfg build_cfg(const Node& fn);

/// DOT rendering; node labels list the source lines of their statements.
std::string cfg_to_dot(const Cfg& cfg, const std::string& name = "cfg");

using NameSet = std::set<std::string>;

struct ActivityInfo {
    std::map<const Node*, NameSet> active_in;
    std::map<const Node*, NameSet> active_out;
    NameSet wrt;
    /// Union of every variable that is active at some program point.
    NameSet active_vars;

    /// True if the statement defines a variable from an active value, or is
    /// control flow enclosing such a statement. GradOf blocks are active.
    bool is_active(const Node& stmt) const;

    std::map<const Node*, bool> statement_active;
};

/// Forward taint from `wrt` to a fixpoint. Boolean-valued expressions and
/// index positions never carry activity; ForRange variables are never active.
ActivityInfo activity(const Node& fn, const Cfg& cfg, const NameSet& wrt);

/// True if evaluating `expr` with the given active set yields an active value.
bool expression_is_active(const Node& expr, const NameSet& active);

struct DefUseEntry {
    NameSet defs;
    NameSet uses;
};

struct DefUse {
    std::map<const Node*, DefUseEntry> per_statement;

    const DefUseEntry& at(const Node& stmt) const { return per_statement.at(&stmt); }
};

/// Exact read/write sets per statement (compound statements report only their
/// header: the condition or trip count, plus the loop variable as a def).
DefUse def_use(const Node& fn);
DefUseEntry statement_def_use(const Node& stmt);

}  // namespace adjoint
