#include "lexer.hpp"

#include <cctype>

namespace adjoint::detail {
namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Lexer {
  public:
    explicit Lexer(std::string_view text) : src_(text) {}

    LexResult run() {
        std::vector<Token> pending_comments;
        int line = 0;
        std::size_t pos = 0;
        while (pos < src_.size()) {
            ++line;
            std::size_t end = src_.find('\n', pos);
            if (end == std::string_view::npos) end = src_.size();
            std::string_view raw = src_.substr(pos, end - pos);
            if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
            pos = end + 1;

            if (paren_depth_ > 0) {
                scan_line(raw, line, 0);
                continue;
            }

            std::size_t indent = 0;
            while (indent < raw.size() && (raw[indent] == ' ' || raw[indent] == '\t')) ++indent;
            std::string_view rest = raw.substr(indent);
            if (rest.empty()) continue;
            if (rest.front() == '#') {
                std::string_view body = rest.substr(1);
                if (!body.empty() && body.front() == ' ') body.remove_prefix(1);
                pending_comments.push_back(
                    {Tok::Comment, std::string(body), {line, static_cast<int>(indent) + 1}});
                continue;
            }

            handle_indent(static_cast<int>(indent), line);
            for (auto& c : pending_comments) {
                out_.tokens.push_back(std::move(c));
                out_.tokens.push_back({Tok::Newline, "", out_.tokens.back().span});
            }
            pending_comments.clear();
            scan_line(raw, line, indent);
        }
        if (paren_depth_ > 0) error("unclosed bracket at end of input", {line, 1});
        if (!out_.tokens.empty() && out_.tokens.back().kind != Tok::Newline &&
            out_.tokens.back().kind != Tok::Dedent)
            out_.tokens.push_back({Tok::Newline, "", {line, 1}});
        while (indents_.size() > 1) {
            indents_.pop_back();
            out_.tokens.push_back({Tok::Dedent, "", {line + 1, 1}});
        }
        out_.tokens.push_back({Tok::End, "", {line + 1, 1}});
        return std::move(out_);
    }

  private:
    void error(std::string msg, Span span) {
        out_.diagnostics.push_back({Severity::Error, "E_LEX", std::move(msg), span});
    }

    void handle_indent(int width, int line) {
        if (width > indents_.back()) {
            indents_.push_back(width);
            out_.tokens.push_back({Tok::Indent, "", {line, 1}});
            return;
        }
        while (width < indents_.back()) {
            indents_.pop_back();
            out_.tokens.push_back({Tok::Dedent, "", {line, 1}});
        }
        if (width != indents_.back()) error("inconsistent dedent", {line, width + 1});
    }

    void scan_line(std::string_view raw, int line, std::size_t i) {
        while (i < raw.size()) {
            char c = raw[i];
            Span span{line, static_cast<int>(i) + 1};
            if (c == ' ' || c == '\t') {
                ++i;
                continue;
            }
            if (c == '#') break;
            if (is_ident_start(c)) {
                std::size_t j = i;
                while (j < raw.size() && is_ident_char(raw[j])) ++j;
                out_.tokens.push_back({Tok::Name, std::string(raw.substr(i, j - i)), span});
                i = j;
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '.' && i + 1 < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i + 1])))) {
                std::size_t j = i;
                while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
                if (j < raw.size() && raw[j] == '.') {
                    ++j;
                    while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
                }
                if (j < raw.size() && (raw[j] == 'e' || raw[j] == 'E')) {
                    std::size_t k = j + 1;
                    if (k < raw.size() && (raw[k] == '+' || raw[k] == '-')) ++k;
                    if (k < raw.size() && std::isdigit(static_cast<unsigned char>(raw[k]))) {
                        while (k < raw.size() && std::isdigit(static_cast<unsigned char>(raw[k]))) ++k;
                        j = k;
                    }
                }
                out_.tokens.push_back({Tok::Number, std::string(raw.substr(i, j - i)), span});
                i = j;
                continue;
            }
            if (c == '"' || c == '\'') {
                error("string literals are not supported", span);
                return;
            }
            static constexpr std::string_view two_char[] = {"+=", "-=", "*=", "/=", "==", "!=", "<=", ">="};
            bool matched = false;
            if (i + 1 < raw.size()) {
                std::string_view two = raw.substr(i, 2);
                for (auto op : two_char) {
                    if (two == op) {
                        out_.tokens.push_back({Tok::Op, std::string(op), span});
                        i += 2;
                        matched = true;
                        break;
                    }
                }
            }
            if (matched) continue;
            switch (c) {
                case '(':
                case '[':
                    ++paren_depth_;
                    break;
                case ')':
                case ']':
                    if (paren_depth_ > 0) --paren_depth_;
                    break;
                case '+': case '-': case '*': case '/': case '<': case '>': case '=':
                case ',': case ':':
                    break;
                default:
                    error(std::string("unexpected character '") + c + "'", span);
                    ++i;
                    continue;
            }
            out_.tokens.push_back({Tok::Op, std::string(1, c), span});
            ++i;
        }
        if (paren_depth_ == 0) out_.tokens.push_back({Tok::Newline, "", {line, static_cast<int>(raw.size()) + 1}});
    }

    std::string_view src_;
    std::vector<int> indents_{0};
    int paren_depth_ = 0;
    LexResult out_;
};

}  // namespace

LexResult lex(std::string_view text) { return Lexer(text).run(); }

}  // namespace adjoint::detail
