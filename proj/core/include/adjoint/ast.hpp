#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adjoint {

/// Source location, 1-based. A zero line means "synthesized".
struct Span {
    int line = 0;
    int column = 0;
};

enum class NodeKind : std::uint8_t {
    FunctionDef,
    Param,
    Return,
    Assign,
    AugAssign,
    IndexAssign,
    If,
    ForRange,
    While,
    GradOfBlock,
    ExprStmt,
    Comment,
    Call,
    Keyword,
    BinOp,
    UnaryOp,
    Index,
    Name,
    NumberLiteral,
    TupleExpr,
};

std::string_view kind_name(NodeKind kind);

// Child layout per kind:
//   FunctionDef  text=name     kids=Param...           body
//   Param        text=name     kids=[default]?
//   Return       kids=[value]
//   Assign       kids=[target(Name|TupleExpr), value]
//   AugAssign    text=op ("+", "-", "*", "/")  kids=[Name, value]
//   IndexAssign  kids=[Name, index, value]
//   If           kids=[cond]   body   orelse
//   ForRange     text=var      kids=[count]            body
//   While        kids=[cond]   body
//   GradOfBlock  text=param    alias=alias name        body
//   ExprStmt     kids=[Call]
//   Comment      text=comment text (without the leading "# ")
//   Call         text=callee   kids=positional args..., Keyword...
//   Keyword      text=name     kids=[value]
//   BinOp        text=op       kids=[lhs, rhs]
//   UnaryOp      text=op ("-", "not")  kids=[operand]
//   Index        kids=[base, index]
//   Name         text=identifier
//   NumberLiteral number, is_int
//   TupleExpr    kids=elements
struct Node {
    NodeKind kind = NodeKind::Name;
    std::string text;
    std::string alias;
    double number = 0.0;
    bool is_int = false;
    std::vector<Node> kids;
    std::vector<Node> body;
    std::vector<Node> orelse;
    Span span;

    bool is_statement() const;
    bool is_expression() const;
};

/// Structural equality that ignores spans.
bool ast_equal(const Node& a, const Node& b);
bool ast_equal(const std::vector<Node>& a, const std::vector<Node>& b);

// Builders. Spans default to synthesized.
Node make_name(std::string id, Span span = {});
Node make_number(double value, Span span = {});
Node make_int(std::int64_t value, Span span = {});
Node make_call(std::string callee, std::vector<Node> args, Span span = {});
Node make_keyword(std::string name, Node value);
Node make_binop(std::string op, Node lhs, Node rhs, Span span = {});
Node make_unary(std::string op, Node operand, Span span = {});
Node make_index(Node base, Node index, Span span = {});
Node make_tuple(std::vector<Node> elements, Span span = {});
Node make_assign(Node target, Node value, Span span = {});
Node make_assign(std::string target, Node value, Span span = {});
Node make_aug_assign(std::string op, std::string target, Node value, Span span = {});
Node make_index_assign(std::string array, Node index, Node value, Span span = {});
Node make_return(Node value, Span span = {});
Node make_expr_stmt(Node call, Span span = {});
Node make_comment(std::string text);
Node make_if(Node cond, std::vector<Node> body, std::vector<Node> orelse = {}, Span span = {});
Node make_for(std::string var, Node count, std::vector<Node> body, Span span = {});
Node make_while(Node cond, std::vector<Node> body, Span span = {});
Node make_param(std::string name, std::optional<Node> default_value = std::nullopt);
Node make_function(std::string name, std::vector<Node> params, std::vector<Node> body, Span span = {});

// Traversal helpers.
void visit_preorder(const Node& node, const std::function<void(const Node&)>& fn);
void visit_statements(const std::vector<Node>& stmts, const std::function<void(const Node&)>& fn);

/// Replace every Name whose identifier is a key in `renames`.
void rename_names(Node& node, const std::function<std::optional<std::string>(const std::string&)>& renames);

/// Identifiers read by an expression (Names only, not callees or keyword names).
void collect_reads(const Node& expr, std::vector<std::string>& out);

/// All identifiers appearing anywhere in a function (params, targets, reads, loop vars, aliases).
std::vector<std::string> all_identifiers(const Node& fn);

std::vector<std::string> param_names(const Node& fn);

/// A parsed program: an ordered list of FunctionDefs.
struct Program {
    std::vector<Node> functions;

    const Node* find(std::string_view name) const;
    Node* find(std::string_view name);
};

}  // namespace adjoint
