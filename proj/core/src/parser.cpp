// Recursive-descent parser for TSL. Stops at the first syntax error.

#include <algorithm>
#include <charconv>
#include <set>

#include "adjoint/frontend.hpp"
#include "lexer.hpp"

namespace adjoint {
namespace {

using detail::Tok;
using detail::Token;

struct SyntaxError {
    std::string message;
    Span span;
};

const std::set<std::string, std::less<>> kKeywords = {"def", "return", "if",  "else", "for", "in",
                                                      "while", "with", "as", "and", "or",  "not"};

class Parser {
  public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    Program program() {
        Program prog;
        while (!at(Tok::End)) {
            if (at(Tok::Newline)) {
                ++pos_;
            } else if (at(Tok::Comment)) {
                pos_ += 2;
            } else if (at_name("def")) {
                prog.functions.push_back(funcdef());
            } else {
                fail("expected 'def' at top level");
            }
        }
        return prog;
    }

  private:
    const Token& peek(std::size_t ahead = 0) const {
        std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
        return toks_[i];
    }
    bool at(Tok k) const { return peek().kind == k; }
    bool at_op(std::string_view op, std::size_t ahead = 0) const {
        return peek(ahead).kind == Tok::Op && peek(ahead).text == op;
    }
    bool at_name(std::string_view name) const { return at(Tok::Name) && peek().text == name; }

    [[noreturn]] void fail(std::string message) const {
        const Token& t = peek();
        std::string found;
        switch (t.kind) {
            case Tok::Newline: found = "end of line"; break;
            case Tok::Indent: found = "indent"; break;
            case Tok::Dedent: found = "dedent"; break;
            case Tok::End: found = "end of input"; break;
            case Tok::Comment: found = "comment"; break;
            default: found = "'" + t.text + "'";
        }
        throw SyntaxError{message + ", found " + found, t.span};
    }

    Token expect(Tok k, std::string_view what) {
        if (!at(k)) fail("expected " + std::string(what));
        return toks_[pos_++];
    }
    Token expect_op(std::string_view op) {
        if (!at_op(op)) fail("expected '" + std::string(op) + "'");
        return toks_[pos_++];
    }
    void expect_keyword(std::string_view kw) {
        if (!at_name(kw)) fail("expected '" + std::string(kw) + "'");
        ++pos_;
    }
    Token identifier() {
        if (!at(Tok::Name) || kKeywords.count(peek().text)) fail("expected identifier");
        return toks_[pos_++];
    }

    Node funcdef() {
        Span span = peek().span;
        expect_keyword("def");
        Token name = identifier();
        expect_op("(");
        std::vector<Node> params;
        if (!at_op(")")) {
            do {
                Token p = identifier();
                Node param = make_param(p.text);
                param.span = p.span;
                if (at_op("=")) {
                    ++pos_;
                    param.kids.push_back(expression());
                }
                params.push_back(std::move(param));
            } while (at_op(",") && (++pos_, true));
        }
        expect_op(")");
        expect_op(":");
        return make_function(name.text, std::move(params), block(), span);
    }

    std::vector<Node> block() {
        expect(Tok::Newline, "end of line");
        expect(Tok::Indent, "an indented block");
        std::vector<Node> stmts;
        while (!at(Tok::Dedent) && !at(Tok::End)) stmts.push_back(statement());
        expect(Tok::Dedent, "dedent");
        bool has_code = false;
        for (const auto& s : stmts) has_code = has_code || s.kind != NodeKind::Comment;
        if (!has_code) throw SyntaxError{"block contains no statements", stmts.front().span};
        return stmts;
    }

    void end_of_statement() { expect(Tok::Newline, "end of line"); }

    Node statement() {
        Span span = peek().span;
        if (at(Tok::Comment)) {
            Node c = make_comment(toks_[pos_++].text);
            c.span = span;
            end_of_statement();
            return c;
        }
        if (at_name("return")) {
            ++pos_;
            Node value = expression();
            if (at_op(",")) {
                std::vector<Node> elems{std::move(value)};
                while (at_op(",")) {
                    ++pos_;
                    elems.push_back(expression());
                }
                value = make_tuple(std::move(elems), span);
            }
            end_of_statement();
            return make_return(std::move(value), span);
        }
        if (at_name("if")) {
            ++pos_;
            Node cond = expression();
            expect_op(":");
            std::vector<Node> body = block();
            std::vector<Node> orelse;
            if (at_name("else")) {
                ++pos_;
                expect_op(":");
                orelse = block();
            }
            return make_if(std::move(cond), std::move(body), std::move(orelse), span);
        }
        if (at_name("for")) {
            ++pos_;
            Token var = identifier();
            expect_keyword("in");
            if (!at_name("range")) fail("expected 'range' (only range loops are supported)");
            ++pos_;
            expect_op("(");
            Node count = expression();
            expect_op(")");
            expect_op(":");
            return make_for(var.text, std::move(count), block(), span);
        }
        if (at_name("while")) {
            ++pos_;
            Node cond = expression();
            expect_op(":");
            return make_while(std::move(cond), block(), span);
        }
        if (at_name("with")) {
            ++pos_;
            if (!at_name("grad_of")) fail("expected 'grad_of'");
            ++pos_;
            expect_op("(");
            Token param = identifier();
            expect_op(")");
            expect_keyword("as");
            Token alias = identifier();
            expect_op(":");
            Node n;
            n.kind = NodeKind::GradOfBlock;
            n.text = param.text;
            n.alias = alias.text;
            n.span = span;
            n.body = block();
            return n;
        }
        if (at(Tok::Name) && !kKeywords.count(peek().text)) {
            if (at_op("(", 1)) {
                Node call = expression();
                if (call.kind != NodeKind::Call) fail("only calls may be used as statements");
                end_of_statement();
                return make_expr_stmt(std::move(call), span);
            }
            Token target = identifier();
            if (at_op("=")) {
                ++pos_;
                Node value = expression();
                end_of_statement();
                return make_assign(make_name(target.text, target.span), std::move(value), span);
            }
            if (at_op("+=") || at_op("-=") || at_op("*=") || at_op("/=")) {
                std::string op = toks_[pos_++].text.substr(0, 1);
                Node value = expression();
                end_of_statement();
                return make_aug_assign(op, target.text, std::move(value), span);
            }
            if (at_op("[")) {
                ++pos_;
                Node index = expression();
                expect_op("]");
                if (!at_op("=")) fail("expected '=' after indexed target");
                ++pos_;
                Node value = expression();
                end_of_statement();
                return make_index_assign(target.text, std::move(index), std::move(value), span);
            }
            if (at_op(",")) {
                std::vector<Node> targets{make_name(target.text, target.span)};
                while (at_op(",")) {
                    ++pos_;
                    Token t = identifier();
                    targets.push_back(make_name(t.text, t.span));
                }
                expect_op("=");
                Node value = expression();
                end_of_statement();
                return make_assign(make_tuple(std::move(targets), span), std::move(value), span);
            }
            fail("expected assignment");
        }
        fail("expected statement");
    }

    Node expression() { return or_expr(); }

    Node or_expr() {
        Node lhs = and_expr();
        while (at_name("or")) {
            Span s = toks_[pos_++].span;
            lhs = make_binop("or", std::move(lhs), and_expr(), s);
        }
        return lhs;
    }

    Node and_expr() {
        Node lhs = not_expr();
        while (at_name("and")) {
            Span s = toks_[pos_++].span;
            lhs = make_binop("and", std::move(lhs), not_expr(), s);
        }
        return lhs;
    }

    Node not_expr() {
        if (at_name("not")) {
            Span s = toks_[pos_++].span;
            return make_unary("not", not_expr(), s);
        }
        return comparison();
    }

    static bool is_cmp(const Token& t) {
        return t.kind == Tok::Op && (t.text == "<" || t.text == ">" || t.text == "<=" || t.text == ">=" ||
                                     t.text == "==" || t.text == "!=");
    }

    Node comparison() {
        Node lhs = arith();
        if (is_cmp(peek())) {
            Token op = toks_[pos_++];
            lhs = make_binop(op.text, std::move(lhs), arith(), op.span);
            if (is_cmp(peek())) fail("chained comparisons are not supported");
        }
        return lhs;
    }

    Node arith() {
        Node lhs = term();
        while (at_op("+") || at_op("-")) {
            Token op = toks_[pos_++];
            lhs = make_binop(op.text, std::move(lhs), term(), op.span);
        }
        return lhs;
    }

    Node term() {
        Node lhs = unary();
        while (at_op("*") || at_op("/")) {
            Token op = toks_[pos_++];
            lhs = make_binop(op.text, std::move(lhs), unary(), op.span);
        }
        return lhs;
    }

    Node unary() {
        if (at_op("-")) {
            Span s = toks_[pos_++].span;
            return make_unary("-", unary(), s);
        }
        return postfix();
    }

    Node postfix() {
        Node base = atom();
        while (at_op("[")) {
            Span s = toks_[pos_++].span;
            Node index = expression();
            expect_op("]");
            base = make_index(std::move(base), std::move(index), s);
        }
        return base;
    }

    Node atom() {
        const Token& t = peek();
        if (t.kind == Tok::Number) {
            ++pos_;
            bool is_int = t.text.find_first_of(".eE") == std::string::npos;
            double v = 0.0;
            auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
            if (res.ec != std::errc()) throw SyntaxError{"malformed number '" + t.text + "'", t.span};
            Node n = make_number(v, t.span);
            n.is_int = is_int;
            return n;
        }
        if (t.kind == Tok::Op && t.text == "(") {
            ++pos_;
            Node inner = expression();
            expect_op(")");
            return inner;
        }
        if (t.kind == Tok::Name && !kKeywords.count(t.text)) {
            Token name = toks_[pos_++];
            if (!at_op("(")) return make_name(name.text, name.span);
            ++pos_;
            std::vector<Node> args;
            bool seen_keyword = false;
            if (!at_op(")")) {
                do {
                    if (at(Tok::Name) && at_op("=", 1)) {
                        Token kw = identifier();
                        ++pos_;
                        Node k = make_keyword(kw.text, expression());
                        k.span = kw.span;
                        args.push_back(std::move(k));
                        seen_keyword = true;
                    } else {
                        if (seen_keyword) fail("positional argument after keyword argument");
                        args.push_back(expression());
                    }
                } while (at_op(",") && (++pos_, true));
            }
            expect_op(")");
            return make_call(name.text, std::move(args), name.span);
        }
        fail("expected expression");
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

}  // namespace

ParseResult parse(const SourceProgram& source) {
    ParseResult result;
    detail::LexResult lexed = detail::lex(source.text);
    if (!lexed.diagnostics.empty()) {
        result.diagnostics = std::move(lexed.diagnostics);
        return result;
    }
    try {
        result.program = Parser(std::move(lexed.tokens)).program();
    } catch (const SyntaxError& e) {
        result.diagnostics.push_back({Severity::Error, "E_SYNTAX", e.message, e.span});
    }
    // Spans of end-of-line/end-of-input tokens may point one past the text.
    std::vector<std::size_t> line_lengths{0};
    for (char c : source.text) {
        if (c == '\n')
            line_lengths.push_back(0);
        else
            ++line_lengths.back();
    }
    if (line_lengths.size() > 1 && line_lengths.back() == 0) line_lengths.pop_back();
    for (auto& d : result.diagnostics) {
        d.span.line = std::clamp<int>(d.span.line, 1, static_cast<int>(line_lengths.size()));
        int max_col = static_cast<int>(line_lengths[static_cast<std::size_t>(d.span.line - 1)]) + 1;
        d.span.column = std::clamp(d.span.column, 1, max_col);
    }
    return result;
}

ParseResult parse(std::string_view text) { return parse(SourceProgram{std::string(text), {}}); }

Program parse_or_throw(std::string_view text) {
    ParseResult r = parse(text);
    if (!r.ok()) throw Error(format_diagnostic(r.diagnostics.front()), r.diagnostics.front().span);
    return std::move(r.program);
}

}  // namespace adjoint
