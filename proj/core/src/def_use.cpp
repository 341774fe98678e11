#include "adjoint/analysis.hpp"
#include "adjoint/frontend.hpp"

namespace adjoint {
namespace {

void add_reads(const Node& expr, NameSet& uses) {
    std::vector<std::string> names;
    collect_reads(expr, names);
    for (auto& n : names)
        if (!is_constant_name(n)) uses.insert(std::move(n));
}

void walk(const std::vector<Node>& stmts, DefUse& du) {
    for (const auto& s : stmts) {
        du.per_statement[&s] = statement_def_use(s);
        walk(s.body, du);
        walk(s.orelse, du);
    }
}

}  // namespace

DefUseEntry statement_def_use(const Node& s) {
    DefUseEntry e;
    switch (s.kind) {
        case NodeKind::Assign:
            if (s.kids[0].kind == NodeKind::TupleExpr)
                for (const auto& t : s.kids[0].kids) e.defs.insert(t.text);
            else
                e.defs.insert(s.kids[0].text);
            add_reads(s.kids[1], e.uses);
            break;
        case NodeKind::AugAssign:
            e.defs.insert(s.kids[0].text);
            e.uses.insert(s.kids[0].text);
            add_reads(s.kids[1], e.uses);
            break;
        case NodeKind::IndexAssign:
            e.defs.insert(s.kids[0].text);
            e.uses.insert(s.kids[0].text);
            add_reads(s.kids[1], e.uses);
            add_reads(s.kids[2], e.uses);
            break;
        case NodeKind::Return:
        case NodeKind::ExprStmt:
        case NodeKind::If:
        case NodeKind::While:
            add_reads(s.kids[0], e.uses);
            break;
        case NodeKind::ForRange:
            e.defs.insert(s.text);
            add_reads(s.kids[0], e.uses);
            break;
        case NodeKind::GradOfBlock:
            e.uses.insert(s.text);
            break;
        default:
            break;
    }
    return e;
}

DefUse def_use(const Node& fn) {
    DefUse du;
    walk(fn.body, du);
    return du;
}

}  // namespace adjoint
