#include <charconv>
#include <cmath>
#include <sstream>

#include "adjoint/frontend.hpp"

namespace adjoint {
namespace {

int precedence(const Node& e) {
    switch (e.kind) {
        case NodeKind::BinOp:
            if (e.text == "or") return 1;
            if (e.text == "and") return 2;
            if (e.text == "+" || e.text == "-") return 5;
            if (e.text == "*" || e.text == "/") return 6;
            return 4;  // comparisons
        case NodeKind::UnaryOp:
            return e.text == "not" ? 3 : 7;
        case NodeKind::TupleExpr:
            return 0;
        default:
            return 8;
    }
}

std::string format_number(const Node& n) {
    if (n.is_int) return std::to_string(static_cast<long long>(n.number));
    if (std::isnan(n.number)) return "nan";
    if (std::isinf(n.number)) return n.number > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, n.number);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

void expr(std::ostream& os, const Node& e, int min_prec);

void operand(std::ostream& os, const Node& e, int min_prec) {
    if (precedence(e) < min_prec) {
        os << '(';
        expr(os, e, 0);
        os << ')';
    } else {
        expr(os, e, min_prec);
    }
}

void expr(std::ostream& os, const Node& e, int /*min_prec*/) {
    switch (e.kind) {
        case NodeKind::Name:
            os << e.text;
            return;
        case NodeKind::NumberLiteral:
            os << format_number(e);
            return;
        case NodeKind::BinOp: {
            int p = precedence(e);
            bool cmp = p == 4;
            operand(os, e.kids[0], cmp ? 5 : p);
            os << ' ' << e.text << ' ';
            operand(os, e.kids[1], cmp ? 5 : p + 1);
            return;
        }
        case NodeKind::UnaryOp:
            if (e.text == "not") {
                os << "not ";
                operand(os, e.kids[0], 3);
            } else {
                os << '-';
                operand(os, e.kids[0], e.kids[0].kind == NodeKind::UnaryOp ? 8 : 7);
            }
            return;
        case NodeKind::Call: {
            os << e.text << '(';
            for (std::size_t i = 0; i < e.kids.size(); ++i) {
                if (i) os << ", ";
                expr(os, e.kids[i], 0);
            }
            os << ')';
            return;
        }
        case NodeKind::Keyword:
            os << e.text << '=';
            expr(os, e.kids[0], 0);
            return;
        case NodeKind::Index:
            operand(os, e.kids[0], 8);
            os << '[';
            expr(os, e.kids[1], 0);
            os << ']';
            return;
        case NodeKind::TupleExpr:
            for (std::size_t i = 0; i < e.kids.size(); ++i) {
                if (i) os << ", ";
                operand(os, e.kids[i], 1);
            }
            return;
        default:
            throw Error("emit: node of kind " + std::string(kind_name(e.kind)) + " is not an expression", e.span);
    }
}

void statements(std::ostream& os, const std::vector<Node>& stmts, int indent);

void statement(std::ostream& os, const Node& s, int indent) {
    std::string pad(static_cast<std::size_t>(indent) * 4, ' ');
    switch (s.kind) {
        case NodeKind::Comment:
            os << pad << "# " << s.text << '\n';
            return;
        case NodeKind::Return:
            os << pad << "return ";
            expr(os, s.kids[0], 0);
            os << '\n';
            return;
        case NodeKind::Assign:
            os << pad;
            expr(os, s.kids[0], 0);
            os << " = ";
            expr(os, s.kids[1], 0);
            os << '\n';
            return;
        case NodeKind::AugAssign:
            os << pad << s.kids[0].text << ' ' << s.text << "= ";
            expr(os, s.kids[1], 0);
            os << '\n';
            return;
        case NodeKind::IndexAssign:
            os << pad << s.kids[0].text << '[';
            expr(os, s.kids[1], 0);
            os << "] = ";
            expr(os, s.kids[2], 0);
            os << '\n';
            return;
        case NodeKind::ExprStmt:
            os << pad;
            expr(os, s.kids[0], 0);
            os << '\n';
            return;
        case NodeKind::If:
            os << pad << "if ";
            expr(os, s.kids[0], 0);
            os << ":\n";
            statements(os, s.body, indent + 1);
            if (!s.orelse.empty()) {
                os << pad << "else:\n";
                statements(os, s.orelse, indent + 1);
            }
            return;
        case NodeKind::ForRange:
            os << pad << "for " << s.text << " in range(";
            expr(os, s.kids[0], 0);
            os << "):\n";
            statements(os, s.body, indent + 1);
            return;
        case NodeKind::While:
            os << pad << "while ";
            expr(os, s.kids[0], 0);
            os << ":\n";
            statements(os, s.body, indent + 1);
            return;
        case NodeKind::GradOfBlock:
            os << pad << "with grad_of(" << s.text << ") as " << s.alias << ":\n";
            statements(os, s.body, indent + 1);
            return;
        default:
            throw Error("emit: node of kind " + std::string(kind_name(s.kind)) + " is not a statement", s.span);
    }
}

void statements(std::ostream& os, const std::vector<Node>& stmts, int indent) {
    for (const auto& s : stmts) statement(os, s, indent);
}

}  // namespace

std::string emit_expression(const Node& e) {
    std::ostringstream os;
    expr(os, e, 0);
    return os.str();
}

std::string emit_statement(const Node& stmt, int indent) {
    std::ostringstream os;
    statement(os, stmt, indent);
    return os.str();
}

std::string emit(const Node& fn) {
    if (fn.kind != NodeKind::FunctionDef)
        throw Error("emit: expected FunctionDef, got " + std::string(kind_name(fn.kind)), fn.span);
    std::ostringstream os;
    os << "def " << fn.text << '(';
    for (std::size_t i = 0; i < fn.kids.size(); ++i) {
        if (i) os << ", ";
        os << fn.kids[i].text;
        if (!fn.kids[i].kids.empty()) {
            os << '=';
            expr(os, fn.kids[i].kids[0], 0);
        }
    }
    os << "):\n";
    statements(os, fn.body, 1);
    return os.str();
}

std::string emit(const Program& program) {
    std::string out;
    for (std::size_t i = 0; i < program.functions.size(); ++i) {
        if (i) out += '\n';
        out += emit(program.functions[i]);
    }
    return out;
}

}  // namespace adjoint
