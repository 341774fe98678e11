#include "adjoint/ast.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "adjoint/diagnostic.hpp"

namespace adjoint {

std::string_view kind_name(NodeKind kind) {
    switch (kind) {
        case NodeKind::FunctionDef: return "FunctionDef";
        case NodeKind::Param: return "Param";
        case NodeKind::Return: return "Return";
        case NodeKind::Assign: return "Assign";
        case NodeKind::AugAssign: return "AugAssign";
        case NodeKind::IndexAssign: return "IndexAssign";
        case NodeKind::If: return "If";
        case NodeKind::ForRange: return "ForRange";
        case NodeKind::While: return "While";
        case NodeKind::GradOfBlock: return "GradOfBlock";
        case NodeKind::ExprStmt: return "ExprStmt";
        case NodeKind::Comment: return "Comment";
        case NodeKind::Call: return "Call";
        case NodeKind::Keyword: return "Keyword";
        case NodeKind::BinOp: return "BinOp";
        case NodeKind::UnaryOp: return "UnaryOp";
        case NodeKind::Index: return "Index";
        case NodeKind::Name: return "Name";
        case NodeKind::NumberLiteral: return "NumberLiteral";
        case NodeKind::TupleExpr: return "TupleExpr";
    }
    return "?";
}

bool Node::is_statement() const {
    switch (kind) {
        case NodeKind::Return:
        case NodeKind::Assign:
        case NodeKind::AugAssign:
        case NodeKind::IndexAssign:
        case NodeKind::If:
        case NodeKind::ForRange:
        case NodeKind::While:
        case NodeKind::GradOfBlock:
        case NodeKind::ExprStmt:
        case NodeKind::Comment:
            return true;
        default:
            return false;
    }
}

bool Node::is_expression() const {
    switch (kind) {
        case NodeKind::Call:
        case NodeKind::BinOp:
        case NodeKind::UnaryOp:
        case NodeKind::Index:
        case NodeKind::Name:
        case NodeKind::NumberLiteral:
        case NodeKind::TupleExpr:
            return true;
        default:
            return false;
    }
}

bool ast_equal(const Node& a, const Node& b) {
    if (a.kind != b.kind || a.text != b.text || a.alias != b.alias) return false;
    if (a.kind == NodeKind::NumberLiteral) {
        if (a.is_int != b.is_int) return false;
        if (!(a.number == b.number) && !(a.number != a.number && b.number != b.number)) return false;
    }
    return ast_equal(a.kids, b.kids) && ast_equal(a.body, b.body) && ast_equal(a.orelse, b.orelse);
}

bool ast_equal(const std::vector<Node>& a, const std::vector<Node>& b) {
    return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                      [](const Node& x, const Node& y) { return ast_equal(x, y); });
}

Node make_name(std::string id, Span span) {
    Node n;
    n.kind = NodeKind::Name;
    n.text = std::move(id);
    n.span = span;
    return n;
}

Node make_number(double value, Span span) {
    Node n;
    n.kind = NodeKind::NumberLiteral;
    n.number = value;
    n.span = span;
    return n;
}

Node make_int(std::int64_t value, Span span) {
    Node n = make_number(static_cast<double>(value), span);
    n.is_int = true;
    return n;
}

Node make_call(std::string callee, std::vector<Node> args, Span span) {
    Node n;
    n.kind = NodeKind::Call;
    n.text = std::move(callee);
    n.kids = std::move(args);
    n.span = span;
    return n;
}

Node make_keyword(std::string name, Node value) {
    Node n;
    n.kind = NodeKind::Keyword;
    n.text = std::move(name);
    n.kids.push_back(std::move(value));
    return n;
}

Node make_binop(std::string op, Node lhs, Node rhs, Span span) {
    Node n;
    n.kind = NodeKind::BinOp;
    n.text = std::move(op);
    n.kids.push_back(std::move(lhs));
    n.kids.push_back(std::move(rhs));
    n.span = span;
    return n;
}

Node make_unary(std::string op, Node operand, Span span) {
    Node n;
    n.kind = NodeKind::UnaryOp;
    n.text = std::move(op);
    n.kids.push_back(std::move(operand));
    n.span = span;
    return n;
}

Node make_index(Node base, Node index, Span span) {
    Node n;
    n.kind = NodeKind::Index;
    n.kids.push_back(std::move(base));
    n.kids.push_back(std::move(index));
    n.span = span;
    return n;
}

Node make_tuple(std::vector<Node> elements, Span span) {
    Node n;
    n.kind = NodeKind::TupleExpr;
    n.kids = std::move(elements);
    n.span = span;
    return n;
}

Node make_assign(Node target, Node value, Span span) {
    Node n;
    n.kind = NodeKind::Assign;
    n.kids.push_back(std::move(target));
    n.kids.push_back(std::move(value));
    n.span = span;
    return n;
}

Node make_assign(std::string target, Node value, Span span) {
    return make_assign(make_name(std::move(target), span), std::move(value), span);
}

Node make_aug_assign(std::string op, std::string target, Node value, Span span) {
    Node n;
    n.kind = NodeKind::AugAssign;
    n.text = std::move(op);
    n.kids.push_back(make_name(std::move(target), span));
    n.kids.push_back(std::move(value));
    n.span = span;
    return n;
}

Node make_index_assign(std::string array, Node index, Node value, Span span) {
    Node n;
    n.kind = NodeKind::IndexAssign;
    n.kids.push_back(make_name(std::move(array), span));
    n.kids.push_back(std::move(index));
    n.kids.push_back(std::move(value));
    n.span = span;
    return n;
}

Node make_return(Node value, Span span) {
    Node n;
    n.kind = NodeKind::Return;
    n.kids.push_back(std::move(value));
    n.span = span;
    return n;
}

Node make_expr_stmt(Node call, Span span) {
    Node n;
    n.kind = NodeKind::ExprStmt;
    n.kids.push_back(std::move(call));
    n.span = span;
    return n;
}

Node make_comment(std::string text) {
    Node n;
    n.kind = NodeKind::Comment;
    n.text = std::move(text);
    return n;
}

Node make_if(Node cond, std::vector<Node> body, std::vector<Node> orelse, Span span) {
    Node n;
    n.kind = NodeKind::If;
    n.kids.push_back(std::move(cond));
    n.body = std::move(body);
    n.orelse = std::move(orelse);
    n.span = span;
    return n;
}

Node make_for(std::string var, Node count, std::vector<Node> body, Span span) {
    Node n;
    n.kind = NodeKind::ForRange;
    n.text = std::move(var);
    n.kids.push_back(std::move(count));
    n.body = std::move(body);
    n.span = span;
    return n;
}

Node make_while(Node cond, std::vector<Node> body, Span span) {
    Node n;
    n.kind = NodeKind::While;
    n.kids.push_back(std::move(cond));
    n.body = std::move(body);
    n.span = span;
    return n;
}

Node make_param(std::string name, std::optional<Node> default_value) {
    Node n;
    n.kind = NodeKind::Param;
    n.text = std::move(name);
    if (default_value) n.kids.push_back(std::move(*default_value));
    return n;
}

Node make_function(std::string name, std::vector<Node> params, std::vector<Node> body, Span span) {
    Node n;
    n.kind = NodeKind::FunctionDef;
    n.text = std::move(name);
    n.kids = std::move(params);
    n.body = std::move(body);
    n.span = span;
    return n;
}

void visit_preorder(const Node& node, const std::function<void(const Node&)>& fn) {
    fn(node);
    for (const auto& k : node.kids) visit_preorder(k, fn);
    for (const auto& s : node.body) visit_preorder(s, fn);
    for (const auto& s : node.orelse) visit_preorder(s, fn);
}

void visit_statements(const std::vector<Node>& stmts, const std::function<void(const Node&)>& fn) {
    for (const auto& s : stmts) {
        fn(s);
        visit_statements(s.body, fn);
        visit_statements(s.orelse, fn);
    }
}

void rename_names(Node& node,
                  const std::function<std::optional<std::string>(const std::string&)>& renames) {
    if (node.kind == NodeKind::Name) {
        if (auto r = renames(node.text)) node.text = *r;
        return;
    }
    for (auto& k : node.kids) rename_names(k, renames);
    for (auto& s : node.body) rename_names(s, renames);
    for (auto& s : node.orelse) rename_names(s, renames);
}

void collect_reads(const Node& expr, std::vector<std::string>& out) {
    switch (expr.kind) {
        case NodeKind::Name:
            out.push_back(expr.text);
            return;
        case NodeKind::NumberLiteral:
            return;
        default:
            for (const auto& k : expr.kids) collect_reads(k, out);
    }
}

std::vector<std::string> all_identifiers(const Node& fn) {
    std::set<std::string> ids;
    visit_preorder(fn, [&](const Node& n) {
        switch (n.kind) {
            case NodeKind::Name:
            case NodeKind::Param:
            case NodeKind::ForRange:
                ids.insert(n.text);
                break;
            case NodeKind::GradOfBlock:
                ids.insert(n.text);
                ids.insert(n.alias);
                break;
            default:
                break;
        }
    });
    return {ids.begin(), ids.end()};
}

std::vector<std::string> param_names(const Node& fn) {
    std::vector<std::string> out;
    for (const auto& p : fn.kids) out.push_back(p.text);
    return out;
}

const Node* Program::find(std::string_view name) const {
    for (const auto& f : functions)
        if (f.text == name) return &f;
    return nullptr;
}

Node* Program::find(std::string_view name) {
    for (auto& f : functions)
        if (f.text == name) return &f;
    return nullptr;
}

std::string format_diagnostic(const Diagnostic& d, std::string_view path) {
    std::ostringstream os;
    if (!path.empty()) os << path << ":";
    os << d.span.line << ":" << d.span.column << ": "
       << (d.severity == Severity::Error ? "error" : "warning") << " [" << d.code << "] " << d.message;
    return os.str();
}

bool has_errors(const std::vector<Diagnostic>& diags) {
    return std::any_of(diags.begin(), diags.end(),
                       [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

}  // namespace adjoint
