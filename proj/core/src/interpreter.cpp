#include <cmath>
#include <cstdlib>
#include <iostream>

#include "adjoint/kernels.hpp"
#include "adjoint/runtime.hpp"

namespace adjoint {

bool checked_mode_from_env() {
    const char* v = std::getenv("ADJOINT_CHECKED");
    return v && std::string_view(v) == "1";
}

void EvalError::add_frame(std::string frame) { trace_.push_back(std::move(frame)); }

namespace {

struct StackItem {
    std::optional<Value> value;  // nullopt: the pushed name was unbound
    std::int64_t slot = 0;
};

bool is_comparison(const std::string& op) {
    return op == "<" || op == ">" || op == "<=" || op == ">=" || op == "==" || op == "!=";
}

[[noreturn]] void fail(const std::string& message, const Node& at) { throw EvalError(message, at.span); }

}  // namespace

class Frame {
  public:
    Frame(const Interpreter& interp, const Node& fn, StackStats* stats, int depth)
        : interp_(interp), fn_(fn), stats_(stats), depth_(depth) {}

    std::vector<Value> run(std::vector<Value> args) {
        try {
            bind_params(std::move(args));
            for (const auto& s : fn_.body) {
                if (s.kind == NodeKind::Return) {
                    line_ = s.span.line;
                    try {
                        return finish(s);
                    } catch (EvalError&) {
                        throw;
                    } catch (const Error& e) {
                        throw EvalError(e.what(), s.span);
                    }
                }
                exec(s);
            }
            fail("function '" + fn_.text + "' ended without return", fn_);
        } catch (EvalError& err) {
            err.add_frame("in " + fn_.text + ", line " + std::to_string(line_));
            throw;
        }
    }

  private:
    const Interpreter& interp_;
    const Node& fn_;
    StackStats* stats_;
    int depth_;
    int line_ = 0;
    std::unordered_map<std::string, Value> env_;
    std::vector<StackItem> stack_;

    std::ostream& print_stream() const {
        return interp_.options_.print_stream ? *interp_.options_.print_stream : std::cerr;
    }
    std::ostream& warning_stream() const {
        return interp_.options_.warning_stream ? *interp_.options_.warning_stream : std::cerr;
    }
    bool checked() const { return interp_.options_.checked; }

    void warn(const std::string& message, const Node& at) const {
        warning_stream() << "warning: " << fn_.text << ", line " << at.span.line << ": " << message << "\n";
    }

    void bind_params(std::vector<Value> args) {
        std::size_t required = 0;
        for (const auto& p : fn_.kids)
            if (p.kids.empty()) ++required;
        if (args.size() < required || args.size() > fn_.kids.size())
            fail("'" + fn_.text + "' expects " +
                     (required == fn_.kids.size() ? std::to_string(required)
                                                  : std::to_string(required) + " to " + std::to_string(fn_.kids.size())) +
                     " arguments, got " + std::to_string(args.size()),
                 fn_);
        for (std::size_t i = 0; i < fn_.kids.size(); ++i) {
            const Node& p = fn_.kids[i];
            env_[p.text] = i < args.size() ? std::move(args[i]) : eval(p.kids[0]);
        }
    }

    std::vector<Value> finish(const Node& ret) {
        std::vector<Value> out;
        const Node& e = ret.kids[0];
        if (e.kind == NodeKind::TupleExpr) {
            for (const auto& k : e.kids) out.push_back(eval(k));
        } else {
            out = eval_multi(e);
        }
        if (checked() && !stack_.empty())
            fail("stack not empty at exit of '" + fn_.text + "': " + std::to_string(stack_.size()) + " item(s) left",
                 ret);
        return out;
    }

    void assign(const Node& stmt, const std::string& name, Value v) {
        if (interp_.options_.hooks.on_assign) interp_.options_.hooks.on_assign(stmt, name, v);
        env_[name] = std::move(v);
    }

    const Value& lookup(const Node& name) const {
        auto it = env_.find(name.text);
        if (it == env_.end()) fail("name '" + name.text + "' is not bound", name);
        return it->second;
    }

    void exec_block(const std::vector<Node>& body) {
        for (const auto& s : body) exec(s);
    }

    void exec(const Node& s) {
        line_ = s.span.line;
        try {
            exec_inner(s);
        } catch (EvalError&) {
            throw;
        } catch (const Error& e) {
            throw EvalError(e.what(), s.span);
        }
    }

    void exec_inner(const Node& s) {
        switch (s.kind) {
            case NodeKind::Assign:
                exec_assign(s);
                return;
            case NodeKind::AugAssign: {
                Value rhs = eval(s.kids[1]);
                Value cur = lookup(s.kids[0]);
                check_division(s.text, rhs, s);
                assign(s, s.kids[0].text, kernels::binary(s.text, cur, rhs));
                return;
            }
            case NodeKind::IndexAssign: {
                const std::string& name = s.kids[0].text;
                std::int64_t i = eval(s.kids[1]).as_int();
                Value v = eval(s.kids[2]);
                auto it = env_.find(name);
                if (it == env_.end()) fail("name '" + name + "' is not bound", s.kids[0]);
                Value updated = it->second;
                kernels::index_set(updated, i, v);
                assign(s, name, std::move(updated));
                return;
            }
            case NodeKind::If: {
                report_margins(s.kids[0]);
                if (eval(s.kids[0]).as_bool())
                    exec_block(s.body);
                else
                    exec_block(s.orelse);
                return;
            }
            case NodeKind::ForRange: {
                std::int64_t n = eval(s.kids[0]).as_int();
                for (std::int64_t i = 0; i < n; ++i) {
                    env_[s.text] = Value(i);
                    exec_block(s.body);
                }
                return;
            }
            case NodeKind::While:
                while (true) {
                    report_margins(s.kids[0]);
                    if (!eval(s.kids[0]).as_bool()) break;
                    exec_block(s.body);
                }
                return;
            case NodeKind::GradOfBlock:
                // Injected code belongs to the gradient; the primal ignores it.
                return;
            case NodeKind::ExprStmt:
                eval_call(s.kids[0]);
                return;
            case NodeKind::Comment:
                return;
            case NodeKind::Return:
                fail("return must be the last statement", s);
            default:
                fail("unexpected node '" + std::string(kind_name(s.kind)) + "' in statement position", s);
        }
    }

    void exec_assign(const Node& s) {
        const Node& target = s.kids[0];
        const Node& value = s.kids[1];
        if (value.kind == NodeKind::Call && value.text == "pop" && target.kind == NodeKind::Name) {
            std::optional<Value> v = pop(value);
            if (v)
                assign(s, target.text, std::move(*v));
            else
                env_.erase(target.text);
            return;
        }
        if (target.kind == NodeKind::TupleExpr) {
            std::vector<Value> values;
            if (value.kind == NodeKind::TupleExpr)
                for (const auto& k : value.kids) values.push_back(eval(k));
            else
                values = eval_multi(value);
            if (values.size() != target.kids.size())
                fail("cannot unpack " + std::to_string(values.size()) + " value(s) into " +
                         std::to_string(target.kids.size()) + " names",
                     s);
            for (std::size_t i = 0; i < values.size(); ++i) assign(s, target.kids[i].text, std::move(values[i]));
            return;
        }
        assign(s, target.text, eval(value));
    }

    std::optional<Value> pop(const Node& call) {
        if (call.kids.size() != 1) fail("pop expects one slot id", call);
        std::int64_t slot = eval(call.kids[0]).as_int();
        if (stack_.empty()) fail("pop from empty stack (slot " + std::to_string(slot) + ")", call);
        StackItem item = std::move(stack_.back());
        stack_.pop_back();
        if (stats_) ++stats_->pops;
        if (checked() && item.slot != slot)
            fail("stack discipline violated: popped slot " + std::to_string(item.slot) + ", expected " +
                     std::to_string(slot),
                 call);
        return std::move(item.value);
    }

    void push(const Node& call) {
        if (call.kids.size() != 2) fail("push expects a value and a slot id", call);
        const Node& what = call.kids[0];
        StackItem item;
        item.slot = eval(call.kids[1]).as_int();
        if (what.kind == NodeKind::Name) {
            auto it = env_.find(what.text);
            if (it != env_.end()) item.value = it->second;
        } else {
            item.value = eval(what);
        }
        stack_.push_back(std::move(item));
        if (stats_) {
            ++stats_->pushes;
            stats_->max_depth = std::max(stats_->max_depth, stack_.size());
        }
    }

    void report_margins(const Node& cond) {
        const auto& hook = interp_.options_.hooks.on_condition;
        if (!hook) return;
        if (cond.kind == NodeKind::BinOp && is_comparison(cond.text)) {
            Value a = eval(cond.kids[0]);
            Value b = eval(cond.kids[1]);
            if (a.is_number() && b.is_number()) hook(cond, a.as_double() - b.as_double());
            return;
        }
        if (cond.kind == NodeKind::BinOp && (cond.text == "and" || cond.text == "or")) {
            report_margins(cond.kids[0]);
            report_margins(cond.kids[1]);
        } else if (cond.kind == NodeKind::UnaryOp && cond.text == "not") {
            report_margins(cond.kids[0]);
        }
    }

    void check_division(const std::string& op, const Value& rhs, const Node& at) const {
        if (!checked() || op != "/") return;
        for (std::size_t i = 0; i < rhs.size(); ++i)
            if (rhs.element(i) == 0.0) {
                warn("division by zero", at);
                return;
            }
    }

    std::vector<Value> eval_multi(const Node& e) {
        if (e.kind == NodeKind::Call && interp_.functions_.count(e.text)) return call_user(e);
        return {eval(e)};
    }

    Value eval(const Node& e) {
        switch (e.kind) {
            case NodeKind::NumberLiteral:
                return e.is_int ? Value(static_cast<std::int64_t>(e.number)) : Value(e.number);
            case NodeKind::Name:
                if (e.text == "True") return Value(true);
                if (e.text == "False") return Value(false);
                if (e.text == "None") fail("None is only valid as an optional intrinsic argument", e);
                return lookup(e);
            case NodeKind::BinOp: {
                if (e.text == "and") return Value(eval(e.kids[0]).as_bool() && eval(e.kids[1]).as_bool());
                if (e.text == "or") return Value(eval(e.kids[0]).as_bool() || eval(e.kids[1]).as_bool());
                Value a = eval(e.kids[0]);
                Value b = eval(e.kids[1]);
                check_division(e.text, b, e);
                return kernels::binary(e.text, a, b);
            }
            case NodeKind::UnaryOp:
                if (e.text == "not") return Value(!eval(e.kids[0]).as_bool());
                return kernels::negate(eval(e.kids[0]));
            case NodeKind::Index: {
                Value base = eval(e.kids[0]);
                return kernels::index_get(base, eval(e.kids[1]).as_int());
            }
            case NodeKind::Call: {
                auto r = eval_call(e);
                if (!r) fail("'" + e.text + "' does not produce a value", e);
                return std::move(*r);
            }
            case NodeKind::TupleExpr:
                fail("tuples are only valid in assignments and returns", e);
            default:
                fail("unexpected node '" + std::string(kind_name(e.kind)) + "' in expression position", e);
        }
    }

    std::vector<Value> call_user(const Node& e) {
        const Node* callee = interp_.functions_.at(e.text);
        std::vector<Value> args;
        for (const auto& a : e.kids) {
            if (a.kind == NodeKind::Keyword) fail("user functions take positional arguments only", a);
            args.push_back(eval(a));
        }
        if (depth_ > 200) fail("call depth limit exceeded in '" + e.text + "'", e);
        Frame inner(interp_, *callee, stats_, depth_ + 1);
        return inner.run(std::move(args));
    }

    struct CallArgs {
        std::vector<const Node*> positional;
        std::unordered_map<std::string, const Node*> keywords;
    };

    // Optional argument: absent, or the literal None, yields nullopt.
    std::optional<Value> optional_arg(const Node* n) {
        if (!n || (n->kind == NodeKind::Name && n->text == "None")) return std::nullopt;
        return eval(*n);
    }

    std::optional<int> axis_arg(const Node* n) {
        auto v = optional_arg(n);
        if (!v) return std::nullopt;
        return static_cast<int>(v->as_int());
    }

    bool flag_arg(const Node* n) {
        auto v = optional_arg(n);
        return v && v->as_bool();
    }

    std::optional<Value> eval_call(const Node& e) {
        const std::string& f = e.text;
        if (interp_.functions_.count(f)) {
            auto values = call_user(e);
            if (values.size() != 1) fail("'" + f + "' returns " + std::to_string(values.size()) + " values", e);
            return std::move(values[0]);
        }
        if (f == "push") {
            push(e);
            return std::nullopt;
        }
        if (f == "pop") return pop(e);
        CallArgs args;
        for (const auto& a : e.kids) {
            if (a.kind == NodeKind::Keyword)
                args.keywords[a.text] = &a.kids[0];
            else
                args.positional.push_back(&a);
        }
        auto pos = [&](std::size_t i) -> const Node* {
            return i < args.positional.size() ? args.positional[i] : nullptr;
        };
        auto arg = [&](std::size_t i, const char* kw = nullptr) -> const Node* {
            if (const Node* p = pos(i)) return p;
            if (kw) {
                auto it = args.keywords.find(kw);
                if (it != args.keywords.end()) return it->second;
            }
            return nullptr;
        };
        auto need = [&](std::size_t n) {
            if (args.positional.size() < n)
                fail("'" + f + "' expects at least " + std::to_string(n) + " positional argument(s)", e);
        };
        auto v = [&](std::size_t i) { return eval(*args.positional[i]); };

        if (f == "print") {
            std::ostream& os = print_stream();
            for (std::size_t i = 0; i < args.positional.size(); ++i) os << (i ? " " : "") << v(i).to_string();
            os << "\n";
            return std::nullopt;
        }
        if (f == "add_grad") {
            need(2);
            const Node* a = args.positional[0];
            std::optional<Value> lhs;
            if (a->kind != NodeKind::Name || env_.count(a->text)) lhs = eval(*a);
            return kernels::add_grad(lhs, v(1));
        }
        if (f == "tanh" || f == "exp" || f == "log") {
            need(1);
            Value x = v(0);
            if (f == "tanh") return kernels::tanh(x);
            if (f == "exp") return kernels::exp(x);
            if (checked())
                for (std::size_t i = 0; i < x.size(); ++i)
                    if (x.element(i) <= 0.0) {
                        warn("log of non-positive value", e);
                        break;
                    }
            return kernels::log(x);
        }
        if (f == "dot") {
            need(2);
            return kernels::dot(v(0), v(1));
        }
        if (f == "multiply") {
            need(2);
            Value a = v(0), b = v(1);
            // The multiply rule does not reverse broadcasting, so shapes must agree.
            if (a.shape() != b.shape())
                fail("multiply requires equal shapes, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()),
                     e);
            return kernels::binary("*", a, b);
        }
        if (f == "sum") {
            need(1);
            return kernels::sum(v(0), axis_arg(arg(1, "axis")), flag_arg(arg(2, "keepdims")));
        }
        if (f == "mean") {
            need(1);
            return kernels::mean(v(0));
        }
        if (f == "min") {
            need(2);
            return kernels::minimum(v(0), v(1));
        }
        if (f == "unbroadcast") {
            need(2);
            return kernels::unbroadcast(v(0), v(1));
        }
        if (f == "zeros_like") {
            need(1);
            const Node* a = args.positional[0];
            if (a->kind == NodeKind::Name && !env_.count(a->text)) return Value(0.0);
            return kernels::zeros_like(v(0));
        }
        if (f == "sum_grad") {
            need(2);
            return kernels::sum_grad(v(0), v(1), axis_arg(arg(2, "axis")), flag_arg(arg(3, "keepdims")));
        }
        if (f == "mean_grad") {
            need(2);
            return kernels::mean_grad(v(0), v(1));
        }
        if (f == "grad_dot_lhs" || f == "grad_dot_rhs") {
            need(3);
            Value g = v(0), a = v(1), b = v(2);
            return f == "grad_dot_lhs" ? kernels::grad_dot_lhs(g, a, b) : kernels::grad_dot_rhs(g, a, b);
        }
        if (f == "index_grad") {
            need(3);
            return kernels::index_grad(v(0), v(1), v(2).as_int());
        }
        fail("unknown function '" + f + "'", e);
    }
};

Interpreter::Interpreter(Program program, EvalOptions options)
    : program_(std::move(program)), options_(std::move(options)) {
    for (const auto& fn : program_.functions) functions_[fn.text] = &fn;
}

std::vector<Value> Interpreter::call(std::string_view function, std::vector<Value> args, StackStats* stats) const {
    auto it = functions_.find(std::string(function));
    if (it == functions_.end()) throw Error("no function named '" + std::string(function) + "'");
    Frame frame(*this, *it->second, stats, 0);
    return frame.run(std::move(args));
}

Value Interpreter::call1(std::string_view function, std::vector<Value> args) const {
    auto out = call(function, std::move(args));
    if (out.size() != 1)
        throw Error("'" + std::string(function) + "' returned " + std::to_string(out.size()) + " values, expected 1");
    return std::move(out[0]);
}

}  // namespace adjoint
