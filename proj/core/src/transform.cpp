#include "adjoint/transform.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "adjoint/analysis.hpp"
#include "adjoint/frontend.hpp"
#include "adjoint/optimize.hpp"

namespace adjoint {
namespace {

constexpr std::string_view kOriginPrefix = "Grad of: ";

class NameAllocator {
  public:
    void reserve(const std::string& name) { used_.insert(name); }
    bool used(const std::string& name) const { return used_.count(name) > 0; }

    std::string fresh(const std::string& base) {
        if (!used(base)) {
            reserve(base);
            return base;
        }
        for (int k = 2;; ++k) {
            std::string c = base + std::to_string(k);
            if (!used(c)) {
                reserve(c);
                return c;
            }
        }
    }

  private:
    std::set<std::string> used_;
};

bool is_atom(const Node& e) {
    if (e.kind == NodeKind::Name || e.kind == NodeKind::NumberLiteral) return true;
    return e.kind == NodeKind::UnaryOp && e.text == "-" && e.kids[0].kind == NodeKind::NumberLiteral;
}

bool is_arith(const std::string& op) { return op == "+" || op == "-" || op == "*" || op == "/"; }

bool reads_name(const Node& e, const std::string& name) {
    std::vector<std::string> r;
    collect_reads(e, r);
    return std::find(r.begin(), r.end(), name) != r.end();
}

std::string first_line(const std::string& text) {
    std::string s = text.substr(0, text.find('\n'));
    auto b = s.find_first_not_of(' ');
    return b == std::string::npos ? std::string() : s.substr(b);
}

std::string origin_text(const Node& s) {
    switch (s.kind) {
        case NodeKind::If:
            return "if " + emit_expression(s.kids[0]) + ":";
        case NodeKind::While:
            return "while " + emit_expression(s.kids[0]) + ":";
        case NodeKind::ForRange:
            return "for " + s.text + " in range(" + emit_expression(s.kids[0]) + "):";
        default:
            return first_line(emit_statement(s));
    }
}

bool is_origin(const Node& s) {
    return s.kind == NodeKind::Comment && s.text.rfind(kOriginPrefix, 0) == 0;
}

void assigned_names(const std::vector<Node>& stmts, std::set<std::string>& out) {
    visit_statements(stmts, [&](const Node& s) {
        switch (s.kind) {
            case NodeKind::Assign:
                if (s.kids[0].kind == NodeKind::TupleExpr)
                    for (const auto& t : s.kids[0].kids) out.insert(t.text);
                else
                    out.insert(s.kids[0].text);
                break;
            case NodeKind::AugAssign:
            case NodeKind::IndexAssign:
                out.insert(s.kids[0].text);
                break;
            case NodeKind::ForRange:
                out.insert(s.text);
                break;
            default:
                break;
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization: augmented assignments become plain ones, the return value
// is bound to a variable, grad_of blocks are lifted out and every statement
// is preceded by a comment carrying its source text.

struct Normalized {
    Node fn;
    std::string ret_var;
    std::vector<Node> injections;
};

class Normalizer {
  public:
    Normalizer(NameAllocator& names) : names_(names) {}

    Normalized run(const Node& fn) {
        Normalized out;
        out.fn = fn;
        out.fn.body.clear();
        const Node& ret = fn.body.back();
        if (ret.kind != NodeKind::Return) throw Error("function '" + fn.text + "' must end with return", fn.span);
        std::vector<Node> body(fn.body.begin(), fn.body.end() - 1);
        out.fn.body = block(body, out.injections);
        const Node& value = ret.kids[0];
        if (value.kind == NodeKind::TupleExpr)
            throw Error("cannot differentiate '" + fn.text + "': it returns several values", ret.span);
        if (value.kind == NodeKind::Name && !is_constant_name(value.text)) {
            out.ret_var = value.text;
        } else {
            out.ret_var = names_.fresh("y");
            Node assign = make_assign(out.ret_var, value, ret.span);
            out.fn.body.push_back(make_comment(std::string(kOriginPrefix) + origin_text(assign)));
            out.fn.body.push_back(std::move(assign));
        }
        out.fn.body.push_back(make_return(make_name(out.ret_var), ret.span));
        return out;
    }

  private:
    NameAllocator& names_;

    std::vector<Node> block(const std::vector<Node>& in, std::vector<Node>& injections) {
        std::vector<Node> out;
        for (const auto& s : in) {
            switch (s.kind) {
                case NodeKind::Comment:
                    break;
                case NodeKind::GradOfBlock:
                    injections.push_back(s);
                    break;
                case NodeKind::Return:
                    throw Error("return must be the last statement", s.span);
                case NodeKind::AugAssign: {
                    out.push_back(make_comment(std::string(kOriginPrefix) + origin_text(s)));
                    Node lhs = make_name(s.kids[0].text, s.kids[0].span);
                    out.push_back(make_assign(s.kids[0].text, make_binop(s.text, lhs, s.kids[1], s.span), s.span));
                    break;
                }
                case NodeKind::If:
                case NodeKind::ForRange:
                case NodeKind::While: {
                    out.push_back(make_comment(std::string(kOriginPrefix) + origin_text(s)));
                    Node c = s;
                    c.body = block(s.body, injections);
                    c.orelse = block(s.orelse, injections);
                    out.push_back(std::move(c));
                    break;
                }
                default:
                    out.push_back(make_comment(std::string(kOriginPrefix) + origin_text(s)));
                    out.push_back(s);
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Three-address form for active statements: every operation gets its own
// assignment so that one template covers it.

class Decomposer {
  public:
    Decomposer(NameAllocator& names, const ActivityInfo& act, const Registry& registry)
        : names_(names), act_(act), registry_(registry) {}

    std::vector<Node> block(const std::vector<Node>& in) {
        std::vector<Node> out;
        for (const auto& s : in) {
            switch (s.kind) {
                case NodeKind::Assign:
                    if (act_.is_active(s))
                        assign(s, out);
                    else
                        out.push_back(s);
                    break;
                case NodeKind::IndexAssign:
                    if (act_.is_active(s)) {
                        active_ = &act_.active_in.at(&s);
                        Node c = s;
                        c.kids[1] = atomize(s.kids[1], out, s.span);
                        c.kids[2] = atomize(s.kids[2], out, s.span);
                        out.push_back(std::move(c));
                    } else {
                        out.push_back(s);
                    }
                    break;
                case NodeKind::If:
                case NodeKind::ForRange:
                case NodeKind::While: {
                    Node c = s;
                    c.body = block(s.body);
                    c.orelse = block(s.orelse);
                    out.push_back(std::move(c));
                    break;
                }
                default:
                    out.push_back(s);
            }
        }
        return out;
    }

  private:
    NameAllocator& names_;
    const ActivityInfo& act_;
    const Registry& registry_;
    const NameSet* active_ = nullptr;

    std::string temp() {
        std::string t;
        do t = "_t" + std::to_string(counter_++);
        while (names_.used(t));
        names_.reserve(t);
        return t;
    }
    int counter_ = 0;

    void assign(const Node& s, std::vector<Node>& out) {
        const Node& target = s.kids[0];
        if (target.kind == NodeKind::TupleExpr)
            throw Error("cannot differentiate through an assignment of several values", s.span);
        active_ = &act_.active_in.at(&s);
        const Node& v = s.kids[1];
        if (is_atom(v)) {
            out.push_back(s);
            return;
        }
        Node op = operation(v, out, s.span);
        const std::string& name = target.text;
        if (reads_name(op, name) && reads_result(op)) {
            std::string t = temp();
            out.push_back(make_assign(t, std::move(op), s.span));
            out.push_back(make_assign(name, make_name(t), s.span));
            return;
        }
        out.push_back(make_assign(name, std::move(op), s.span));
    }

    bool reads_result(const Node& op) const {
        std::string target;
        switch (op.kind) {
            case NodeKind::BinOp:
                target = operator_target(op.text, false);
                break;
            case NodeKind::UnaryOp:
                target = operator_target(op.text, true);
                break;
            case NodeKind::Index:
                target = "index";
                break;
            case NodeKind::Call:
                target = op.text;
                break;
            default:
                return false;
        }
        const AdjointTemplate* tpl = registry_.lookup(target);
        return tpl && !tpl->params.empty() && tpl->requires_primal_values.count(tpl->params[0]);
    }

    // Rewrites the operands of `e` into atoms.
    Node operation(const Node& e, std::vector<Node>& out, Span span) {
        Node op = e;
        switch (e.kind) {
            case NodeKind::BinOp:
                if (!is_arith(e.text)) return op;
                for (auto& k : op.kids) k = atomize(k, out, span);
                return op;
            case NodeKind::UnaryOp:
                if (e.text != "-") return op;
                op.kids[0] = atomize(op.kids[0], out, span);
                return op;
            case NodeKind::Index:
                for (auto& k : op.kids) k = atomize(k, out, span);
                return op;
            case NodeKind::Call:
                for (auto& k : op.kids)
                    if (k.kind != NodeKind::Keyword) k = atomize(k, out, span);
                return op;
            case NodeKind::TupleExpr:
                throw Error("tuples cannot appear inside a differentiated expression", e.span);
            default:
                return op;
        }
    }

    Node atomize(const Node& e, std::vector<Node>& out, Span span) {
        if (is_atom(e)) return e;
        Node value = expression_is_active(e, *active_) ? operation(e, out, span) : e;
        std::string t = temp();
        out.push_back(make_assign(t, std::move(value), span));
        return make_name(t);
    }
};

// ---------------------------------------------------------------------------
// Generation.

struct Rec {
    enum Kind { Origin, Simple, IndexSet, Branch, Loop, Other } kind = Other;
    const Node* stmt = nullptr;
    bool needs_reverse = false;
    std::vector<int> push_slots;  // Simple: per target; IndexSet: old element
    // Branch
    int cond_slot = -1;
    std::string cond_name;
    std::vector<Rec> then_recs, else_recs;
    // Loop
    int loop_id = -1;
    int count_slot = -1;
    std::optional<Node> count_literal;
    std::string trips_name;
    std::string rev_var;
    int var_slot = -1;
    int var_before_slot = -1;
    std::vector<Rec> body_recs;
};

using State = std::set<std::string>;  // variables whose adjoint holds a value

}  // namespace

class Transformer {
  public:
    Transformer(const Node& fn, const Program& program, const GradOptions& options, const Registry& registry,
                GradCache& cache, std::vector<std::string> chain)
        : source_fn_(fn), program_(program), options_(options), registry_(registry), cache_(cache),
          chain_(std::move(chain)) {}

    GradResult run();

  private:
    const Node& source_fn_;
    const Program& program_;
    const GradOptions& options_;
    const Registry& registry_;
    GradCache& cache_;
    std::vector<std::string> chain_;

    // Analyzed, normalized, decomposed function.
    Node fn_;
    std::string ret_var_;
    std::vector<Node> injections_;
    std::vector<std::string> wrt_names_;
    ActivityInfo act_;
    NameSet active_vars_;
    std::set<std::string> primal_vars_;

    struct Names {
        NameAllocator alloc;
        std::map<std::string, std::string> grads;
    } names_;

    // Per-run state.
    bool dry_ = false;
    std::set<std::string> needed_;  // primal values read by adjoint code
    std::vector<StackSlot> slots_;
    int next_loop_id_ = 0;
    std::vector<Node> callees_;
    std::set<std::string> callee_names_;
    std::vector<Diagnostic> warnings_;
    std::set<std::string> reads_;  // primal names read by the last reverse sweep
    std::string ret_saved_;

    std::string grad_name(const std::string& v) {
        auto it = names_.grads.find(v);
        if (it != names_.grads.end()) return it->second;
        std::string c = "b" + v;
        while (names_.alloc.used(c)) c += "_";
        names_.alloc.reserve(c);
        names_.grads[v] = c;
        return c;
    }

    std::string fresh_temp(const std::string& v) { return names_.alloc.fresh("_" + grad_name(v)); }

    int new_slot(SlotPurpose purpose, const std::string& var) {
        int id = static_cast<int>(slots_.size());
        slots_.push_back({id, purpose, var});
        return id;
    }

    static Node push_stmt(Node value, int slot) {
        return make_expr_stmt(make_call("push", {std::move(value), make_int(slot)}));
    }
    static Node pop_call(int slot) { return make_call("pop", {make_int(slot)}); }

    bool active_at(const Node& stmt, const std::string& v) const {
        auto it = act_.active_in.find(&stmt);
        return it != act_.active_in.end() && it->second.count(v) > 0;
    }

    void prepare();
    GradResult generate(bool dry);

    // forward sweep
    void forward_block(const std::vector<Node>& in, std::vector<Node>& out, std::vector<Rec>& recs,
                       std::set<std::string>& bound);
    void forward_stmt(const Node& s, std::vector<Node>& out, Rec& rec, std::set<std::string>& bound);

    // reverse sweep; each returns true when adjoint (not just stack) code was emitted
    bool reverse_block(const std::vector<Rec>& recs, std::vector<Node>& out, State& st, bool pops_only);
    bool reverse_stmt(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only);
    bool reverse_simple(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only);
    bool reverse_index(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only);
    bool reverse_branch(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only);
    bool reverse_loop(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only);

    std::vector<Node> adjoint_of_assign(const Node& s, State& st);
    std::vector<Node> adjoint_of_call(const Node& s, const Node& call, State& st);
    std::vector<Node> loop_body(const Rec& rec, State& st, bool pops_only, bool& adjoint);
    Node accumulate(const std::string& var, Node value, State& st);
};

namespace {

std::string options_key(const std::string& function, const GradOptions& o) {
    std::ostringstream k;
    k << function << "|";
    for (int w : o.wrt) k << w << ",";
    k << "|" << o.seed_param << "|" << o.preserve_result << o.optimize << "|";
    for (const auto& [id, n] : o.truncate) k << id << ":" << n << ",";
    return k.str();
}

const Registry& builtin_registry() {
    static const Registry r = Registry::builtin();
    return r;
}

void reject_generated_code(const Node& fn) {
    visit_preorder(fn, [&](const Node& n) {
        if (n.kind == NodeKind::Call && (n.text == "push" || n.text == "pop" || n.text == "add_grad"))
            throw Error("cannot differentiate '" + fn.text +
                            "': it is generated gradient code (higher-order derivatives are not supported)",
                        n.span);
    });
}

}  // namespace

void Transformer::prepare() {
    reject_generated_code(source_fn_);
    auto diags = validate_subset(source_fn_, program_);
    for (const auto& d : diags)
        if (d.severity == Severity::Error) throw Error(d.message, d.span);

    auto params = param_names(source_fn_);
    if (options_.wrt.empty()) throw Error("wrt must name at least one parameter");
    std::set<int> seen;
    for (int w : options_.wrt) {
        if (w < 0 || w >= static_cast<int>(params.size()))
            throw Error("wrt index " + std::to_string(w) + " is out of range for '" + source_fn_.text + "' with " +
                        std::to_string(params.size()) + " parameter(s)");
        if (!seen.insert(w).second) throw Error("wrt index " + std::to_string(w) + " is repeated");
        wrt_names_.push_back(params[static_cast<std::size_t>(w)]);
    }

    for (const auto& id : all_identifiers(source_fn_)) names_.alloc.reserve(id);
    for (const auto& f : program_.functions) names_.alloc.reserve(f.text);
    for (const auto& i : intrinsic_names()) names_.alloc.reserve(i);
    for (const char* c : {"True", "False", "None", "d"}) names_.alloc.reserve(c);

    Normalizer normalizer(names_.alloc);
    Normalized norm = normalizer.run(source_fn_);
    ret_var_ = norm.ret_var;
    injections_ = std::move(norm.injections);
    NameSet wrt(wrt_names_.begin(), wrt_names_.end());
    for (const auto& inj : injections_)
        if (!wrt.count(inj.text))
            throw Error("grad_of(" + inj.text + ") names a parameter that is not differentiated", inj.span);

    Node decomposed;
    {
        Cfg cfg = build_cfg(norm.fn);
        ActivityInfo pre = activity(norm.fn, cfg, wrt);
        Decomposer dec(names_.alloc, pre, registry_);
        decomposed = norm.fn;
        decomposed.body = dec.block(norm.fn.body);
    }
    fn_ = std::move(decomposed);
    Cfg cfg = build_cfg(fn_);
    act_ = activity(fn_, cfg, wrt);
    active_vars_ = act_.active_vars;
    for (const auto& id : all_identifiers(fn_)) primal_vars_.insert(id);
}

void Transformer::forward_block(const std::vector<Node>& in, std::vector<Node>& out, std::vector<Rec>& recs,
                                std::set<std::string>& bound) {
    for (const auto& s : in) {
        if (s.kind == NodeKind::Return) continue;
        Rec rec;
        rec.stmt = &s;
        forward_stmt(s, out, rec, bound);
        recs.push_back(std::move(rec));
    }
}

void Transformer::forward_stmt(const Node& s, std::vector<Node>& out, Rec& rec, std::set<std::string>& bound) {
    switch (s.kind) {
        case NodeKind::Comment:
            rec.kind = is_origin(s) ? Rec::Origin : Rec::Other;
            return;
        case NodeKind::Assign: {
            rec.kind = Rec::Simple;
            std::vector<std::string> targets;
            if (s.kids[0].kind == NodeKind::TupleExpr)
                for (const auto& t : s.kids[0].kids) targets.push_back(t.text);
            else
                targets.push_back(s.kids[0].text);
            for (const auto& v : targets) {
                int slot = -1;
                if (needed_.count(v) && bound.count(v)) {
                    slot = new_slot(SlotPurpose::OverwrittenValue, v);
                    out.push_back(push_stmt(make_name(v), slot));
                }
                rec.push_slots.push_back(slot);
                if (slot >= 0 || active_vars_.count(v)) rec.needs_reverse = true;
            }
            if (act_.is_active(s)) rec.needs_reverse = true;
            out.push_back(s);
            for (const auto& v : targets) bound.insert(v);
            return;
        }
        case NodeKind::IndexAssign: {
            rec.kind = Rec::IndexSet;
            const std::string& a = s.kids[0].text;
            int slot = -1;
            if (needed_.count(a)) {
                slot = new_slot(SlotPurpose::OverwrittenValue, a);
                out.push_back(push_stmt(make_index(make_name(a), s.kids[1]), slot));
            }
            rec.push_slots.push_back(slot);
            rec.needs_reverse = slot >= 0 || act_.is_active(s);
            out.push_back(s);
            return;
        }
        case NodeKind::If: {
            rec.kind = Rec::Branch;
            std::vector<Node> then_out, else_out;
            std::set<std::string> then_bound = bound, else_bound = bound;
            forward_block(s.body, then_out, rec.then_recs, then_bound);
            forward_block(s.orelse, else_out, rec.else_recs, else_bound);
            bound = then_bound;
            bound.insert(else_bound.begin(), else_bound.end());
            for (const auto* list : {&rec.then_recs, &rec.else_recs})
                for (const auto& r : *list) rec.needs_reverse = rec.needs_reverse || r.needs_reverse;
            if (!rec.needs_reverse) {
                Node c = s;
                c.body = std::move(then_out);
                c.orelse = std::move(else_out);
                out.push_back(std::move(c));
                return;
            }
            rec.cond_name = names_.alloc.fresh("cond");
            out.push_back(make_assign(rec.cond_name, s.kids[0], s.span));
            out.push_back(make_if(make_name(rec.cond_name), std::move(then_out), std::move(else_out), s.span));
            rec.cond_slot = new_slot(SlotPurpose::BranchFlag, rec.cond_name);
            out.push_back(push_stmt(make_name(rec.cond_name), rec.cond_slot));
            return;
        }
        case NodeKind::ForRange:
        case NodeKind::While: {
            rec.kind = Rec::Loop;
            rec.loop_id = next_loop_id_++;
            const bool is_for = s.kind == NodeKind::ForRange;
            const bool var_was_bound = is_for && bound.count(s.text) > 0;
            std::set<std::string> in_body;
            assigned_names(s.body, in_body);
            std::set<std::string> body_bound = bound;
            body_bound.insert(in_body.begin(), in_body.end());
            if (is_for) body_bound.insert(s.text);
            std::vector<Node> body_out;
            forward_block(s.body, body_out, rec.body_recs, body_bound);
            for (const auto& r : rec.body_recs) rec.needs_reverse = rec.needs_reverse || r.needs_reverse;
            if (is_for && needed_.count(s.text)) {
                rec.var_slot = new_slot(SlotPurpose::LoopVariable, s.text);
                body_out.push_back(push_stmt(make_name(s.text), rec.var_slot));
                rec.needs_reverse = true;
            }
            bound = body_bound;
            if (!rec.needs_reverse) {
                Node c = s;
                c.body = std::move(body_out);
                out.push_back(std::move(c));
                return;
            }
            if (is_for) {
                if (needed_.count(s.text) && var_was_bound) {
                    rec.var_before_slot = new_slot(SlotPurpose::OverwrittenValue, s.text);
                    out.push_back(push_stmt(make_name(s.text), rec.var_before_slot));
                }
                Node count = s.kids[0];
                if (count.kind == NodeKind::NumberLiteral) {
                    rec.count_literal = count;
                } else if (count.kind != NodeKind::Name || in_body.count(count.text)) {
                    std::string hoisted = names_.alloc.fresh("count");
                    out.push_back(make_assign(hoisted, count, s.span));
                    count = make_name(hoisted);
                }
                rec.trips_name = names_.alloc.fresh("trips");
                rec.rev_var = needed_.count(s.text) ? names_.alloc.fresh("_") : s.text;
                Node loop = make_for(s.text, count, std::move(body_out), s.span);
                out.push_back(std::move(loop));
                if (!rec.count_literal) {
                    rec.count_slot = new_slot(SlotPurpose::LoopTripCount, count.text);
                    out.push_back(push_stmt(count, rec.count_slot));
                }
            } else {
                rec.trips_name = names_.alloc.fresh("trips");
                rec.rev_var = names_.alloc.fresh("_");
                out.push_back(make_assign(rec.trips_name, make_int(0), s.span));
                body_out.push_back(make_assign(rec.trips_name,
                                               make_binop("+", make_name(rec.trips_name), make_int(1)), s.span));
                out.push_back(make_while(s.kids[0], std::move(body_out), s.span));
                rec.count_slot = new_slot(SlotPurpose::LoopTripCount, rec.trips_name);
                out.push_back(push_stmt(make_name(rec.trips_name), rec.count_slot));
            }
            return;
        }
        default:
            rec.kind = Rec::Other;
            out.push_back(s);
    }
}

namespace {

Node zeros_for(const std::string& grad, const std::string& var) {
    return make_assign(grad, make_call("zeros_like", {make_name(var)}));
}

// Names read by a statement list, excluding assignment targets.
void statement_reads(const std::vector<Node>& stmts, std::set<std::string>& out) {
    std::vector<std::string> r;
    visit_statements(stmts, [&](const Node& s) {
        switch (s.kind) {
            case NodeKind::Assign:
                collect_reads(s.kids[1], r);
                break;
            case NodeKind::AugAssign:
                r.push_back(s.kids[0].text);
                collect_reads(s.kids[1], r);
                break;
            case NodeKind::IndexAssign:
                r.push_back(s.kids[0].text);
                collect_reads(s.kids[1], r);
                collect_reads(s.kids[2], r);
                break;
            case NodeKind::If:
            case NodeKind::While:
            case NodeKind::ForRange:
            case NodeKind::ExprStmt:
            case NodeKind::Return:
                collect_reads(s.kids[0], r);
                break;
            default:
                break;
        }
    });
    out.insert(r.begin(), r.end());
}

}  // namespace

Node Transformer::accumulate(const std::string& var, Node value, State& st) {
    std::string g = grad_name(var);
    Node rhs = st.count(var) ? make_call("add_grad", {make_name(g), std::move(value)}) : std::move(value);
    st.insert(var);
    return make_assign(g, std::move(rhs));
}

std::vector<Node> Transformer::adjoint_of_assign(const Node& s, State& st) {
    const std::string& v = s.kids[0].text;
    const Node& e = s.kids[1];
    const bool in_args = reads_name(e, v);
    if (e.kind == NodeKind::Call && !is_intrinsic(e.text) && !registry_.contains(e.text))
        return adjoint_of_call(s, e, st);

    std::string target;
    std::vector<Node> args;
    switch (e.kind) {
        case NodeKind::Name:
            target = "copy";
            args = {e};
            break;
        case NodeKind::BinOp:
            target = operator_target(e.text, false);
            args = e.kids;
            break;
        case NodeKind::UnaryOp:
            if (is_atom(e)) return {};
            target = operator_target(e.text, true);
            args = e.kids;
            break;
        case NodeKind::Index:
            target = "index";
            args = e.kids;
            break;
        case NodeKind::Call:
            target = e.text;
            args = e.kids;
            break;
        case NodeKind::NumberLiteral:
            return {};
        default:
            throw Error("cannot differentiate " + std::string(kind_name(e.kind)) + " in '" +
                            first_line(emit_statement(s)) + "'",
                        s.span);
    }
    const AdjointTemplate* tpl = registry_.lookup(target);
    if (!tpl)
        throw Error("no adjoint registered for '" + target + "' (in '" + first_line(emit_statement(s)) + "')",
                    s.span);
    Binding binding = bind_call(*tpl, make_name(v), args);
    ExpandContext ctx;
    ctx.grad_name = [this](const std::string& n) { return grad_name(n); };
    ctx.is_initialized = [&](const std::string& n) { return !(in_args && n == v) && st.count(n) > 0; };
    ctx.wants_grad = [&](const std::string& n) { return primal_vars_.count(n) && active_at(s, n); };
    ctx.fresh_temp = [this](const std::string& n) { return fresh_temp(n); };
    std::vector<Node> out = expand(*tpl, binding, ctx);

    const std::string gv = grad_name(v);
    if (in_args) {
        st.erase(v);
        std::vector<std::size_t> writes;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i].kids[0].kind == NodeKind::Name && out[i].kids[0].text == gv) writes.push_back(i);
        if (writes.size() == 1) {
            // The new adjoint of v replaces the one the other statements read.
            Node last = std::move(out[writes[0]]);
            out.erase(out.begin() + static_cast<std::ptrdiff_t>(writes[0]));
            out.push_back(std::move(last));
        }
    }
    for (const auto& n : out) {
        if (n.kids[0].kind != NodeKind::Name) continue;
        for (const auto& [var, g] : names_.grads)
            if (g == n.kids[0].text) st.insert(var);
    }
    return out;
}

std::vector<Node> Transformer::adjoint_of_call(const Node& s, const Node& call, State& st) {
    const std::string& v = s.kids[0].text;
    const Node* callee = program_.find(call.text);
    if (!callee) throw Error("unresolvable function " + call.text, call.span);
    if (call.text == source_fn_.text || std::find(chain_.begin(), chain_.end(), call.text) != chain_.end())
        throw Error("cannot differentiate recursive call to '" + call.text + "'", call.span);

    std::vector<int> mask;
    std::vector<Node> args;
    for (const auto& a : call.kids) {
        if (a.kind == NodeKind::Keyword) throw Error("user functions take positional arguments only", a.span);
        if (a.kind == NodeKind::Name && primal_vars_.count(a.text) && active_at(s, a.text))
            mask.push_back(static_cast<int>(args.size()));
        args.push_back(a);
    }
    if (mask.empty()) return {};
    for (std::size_t i = args.size(); i < callee->kids.size(); ++i) {
        if (callee->kids[i].kids.empty())
            throw Error("missing argument '" + callee->kids[i].text + "' in call to " + call.text, call.span);
        args.push_back(callee->kids[i].kids[0]);
    }

    GradOptions sub_options;
    sub_options.wrt = mask;
    sub_options.optimize = options_.optimize;
    std::vector<std::string> chain = chain_;
    chain.push_back(source_fn_.text);
    auto sub = cache_.get_chain(call.text, sub_options, chain);
    for (const auto* list : {&sub->callees})
        for (const auto& c : *list)
            if (callee_names_.insert(c.text).second) callees_.push_back(c);
    if (callee_names_.insert(sub->fn_ast.text).second) callees_.push_back(sub->fn_ast);

    args.push_back(make_name(grad_name(v)));
    Node dcall = make_call(sub->fn_ast.text, std::move(args), call.span);
    const bool in_args = reads_name(call, v);
    std::vector<Node> out;
    if (mask.size() == 1) {
        if (in_args) st.erase(v);
        out.push_back(accumulate(call.kids[static_cast<std::size_t>(mask[0])].text, std::move(dcall), st));
        return out;
    }
    std::vector<Node> temps;
    for (int j : mask) temps.push_back(make_name(fresh_temp(call.kids[static_cast<std::size_t>(j)].text)));
    out.push_back(make_assign(make_tuple(temps), std::move(dcall), s.span));
    if (in_args) st.erase(v);
    for (std::size_t k = 0; k < mask.size(); ++k)
        out.push_back(accumulate(call.kids[static_cast<std::size_t>(mask[k])].text, temps[k], st));
    return out;
}

bool Transformer::reverse_block(const std::vector<Rec>& recs, std::vector<Node>& out, State& st, bool pops_only) {
    bool any = false;
    std::size_t group_start = out.size();
    bool group_adjoint = false;
    for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
        if (it->kind == Rec::Origin) {
            if (group_adjoint && !pops_only)
                out.insert(out.begin() + static_cast<std::ptrdiff_t>(group_start), make_comment(it->stmt->text));
            group_start = out.size();
            group_adjoint = false;
            continue;
        }
        bool adj = reverse_stmt(*it, out, st, pops_only);
        group_adjoint = group_adjoint || adj;
        any = any || adj;
    }
    return any;
}

bool Transformer::reverse_stmt(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only) {
    switch (rec.kind) {
        case Rec::Simple:
            return reverse_simple(rec, out, st, pops_only);
        case Rec::IndexSet:
            return reverse_index(rec, out, st, pops_only);
        case Rec::Branch:
            return reverse_branch(rec, out, st, pops_only);
        case Rec::Loop:
            return reverse_loop(rec, out, st, pops_only);
        default:
            return false;
    }
}

bool Transformer::reverse_simple(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only) {
    const Node& s = *rec.stmt;
    const Node& target = s.kids[0];
    if (target.kind == NodeKind::TupleExpr) {
        for (std::size_t i = target.kids.size(); i-- > 0;) {
            if (!pops_only) st.erase(target.kids[i].text);
            if (rec.push_slots[i] >= 0) out.push_back(make_assign(target.kids[i].text, pop_call(rec.push_slots[i])));
        }
        return false;
    }
    const std::string& v = target.text;
    const int slot = rec.push_slots[0];
    if (pops_only) {
        if (slot >= 0) out.push_back(make_assign(v, pop_call(slot)));
        return false;
    }
    const bool in_args = reads_name(s.kids[1], v);
    std::vector<Node> adj;
    if (act_.is_active(s) && st.count(v)) adj = adjoint_of_assign(s, st);
    const bool emitted = !adj.empty();
    if (in_args) {
        if (slot >= 0) out.push_back(make_assign(v, pop_call(slot)));
        if (!emitted) st.erase(v);
        for (auto& n : adj) out.push_back(std::move(n));
    } else {
        for (auto& n : adj) out.push_back(std::move(n));
        st.erase(v);
        if (slot >= 0) out.push_back(make_assign(v, pop_call(slot)));
    }
    return emitted;
}

bool Transformer::reverse_index(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only) {
    const Node& s = *rec.stmt;
    const std::string& a = s.kids[0].text;
    const Node& index = s.kids[1];
    const int slot = rec.push_slots[0];
    bool emitted = false;
    if (!pops_only && act_.is_active(s) && st.count(a)) {
        const Node& e = s.kids[2];
        if (e.kind == NodeKind::Name && primal_vars_.count(e.text) && active_at(s, e.text)) {
            const AdjointTemplate* tpl = registry_.lookup("setitem");
            if (!tpl) throw Error("no adjoint registered for 'setitem'", s.span);
            Binding b{{tpl->params.at(0), make_name(a)}, {tpl->params.at(1), index}, {tpl->params.at(2), e}};
            ExpandContext ctx;
            ctx.grad_name = [this](const std::string& n) { return grad_name(n); };
            ctx.is_initialized = [&](const std::string& n) { return st.count(n) > 0; };
            ctx.wants_grad = [&](const std::string& n) { return n == e.text; };
            ctx.fresh_temp = [this](const std::string& n) { return fresh_temp(n); };
            for (auto& n : expand(*tpl, b, ctx)) out.push_back(std::move(n));
            st.insert(e.text);
        }
        out.push_back(make_index_assign(grad_name(a), index, make_number(0.0), s.span));
        emitted = true;
    }
    if (slot >= 0) out.push_back(make_index_assign(a, index, pop_call(slot), s.span));
    return emitted;
}

bool Transformer::reverse_branch(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only) {
    if (!rec.needs_reverse) return false;
    State st_then = st, st_else = st;
    std::vector<Node> then_out, else_out;
    bool adj = reverse_block(rec.then_recs, then_out, st_then, pops_only);
    adj = reverse_block(rec.else_recs, else_out, st_else, pops_only) || adj;
    if (!pops_only) {
        for (const auto& n : st_then)
            if (!st_else.count(n)) {
                else_out.push_back(zeros_for(grad_name(n), n));
                adj = true;
            }
        for (const auto& n : st_else)
            if (!st_then.count(n)) {
                then_out.push_back(zeros_for(grad_name(n), n));
                adj = true;
            }
        st = st_then;
        st.insert(st_else.begin(), st_else.end());
    }
    const Span span = rec.stmt->span;
    out.push_back(make_assign(rec.cond_name, pop_call(rec.cond_slot)));
    if (then_out.empty() && else_out.empty()) return adj;
    if (then_out.empty())
        out.push_back(make_if(make_unary("not", make_name(rec.cond_name)), std::move(else_out), {}, span));
    else
        out.push_back(make_if(make_name(rec.cond_name), std::move(then_out), std::move(else_out), span));
    return adj;
}

std::vector<Node> Transformer::loop_body(const Rec& rec, State& st, bool pops_only, bool& adjoint) {
    std::vector<Node> body;
    if (rec.var_slot >= 0) body.push_back(make_assign(rec.stmt->text, pop_call(rec.var_slot)));
    adjoint = reverse_block(rec.body_recs, body, st, pops_only);
    return body;
}

bool Transformer::reverse_loop(const Rec& rec, std::vector<Node>& out, State& st, bool pops_only) {
    if (!rec.needs_reverse) return false;
    const Span span = rec.stmt->span;
    bool adj = false;
    std::vector<Node> body;
    if (pops_only) {
        State scratch = st;
        body = loop_body(rec, scratch, true, adj);
    } else {
        // Grow the entry state until one reverse iteration maps it to itself.
        State entry = st;
        while (true) {
            Names saved = names_;
            State s_body = entry;
            bool ignored = false;
            loop_body(rec, s_body, false, ignored);
            names_ = std::move(saved);
            bool changed = false;
            for (const auto& n : s_body)
                if (entry.insert(n).second) changed = true;
            if (!changed) break;
        }
        for (const auto& n : entry)
            if (!st.count(n)) {
                out.push_back(zeros_for(grad_name(n), n));
                adj = true;
            }
        State s_body = entry;
        bool body_adj = false;
        body = loop_body(rec, s_body, false, body_adj);
        adj = adj || body_adj;
        for (const auto& n : entry)
            if (!s_body.count(n)) {
                body.push_back(zeros_for(grad_name(n), n));
                adj = true;
            }
        st = entry;
    }

    Node trips = rec.count_literal ? *rec.count_literal : make_name(rec.trips_name);
    if (!rec.count_literal) out.push_back(make_assign(rec.trips_name, pop_call(rec.count_slot)));
    if (!body.empty()) {
        auto trunc = options_.truncate.find(rec.loop_id);
        if (trunc != options_.truncate.end() && !pops_only) {
            std::string window = names_.alloc.fresh("window");
            out.push_back(make_assign(window, make_call("min", {trips, make_int(trunc->second)})));
            out.push_back(make_for(rec.rev_var, make_name(window), std::move(body), span));
            State scratch = st;
            bool ignored = false;
            std::vector<Node> pops = loop_body(rec, scratch, true, ignored);
            if (!pops.empty())
                out.push_back(
                    make_for(rec.rev_var, make_binop("-", trips, make_name(window)), std::move(pops), span));
        } else {
            out.push_back(make_for(rec.rev_var, trips, std::move(body), span));
        }
    }
    if (rec.var_before_slot >= 0) out.push_back(make_assign(rec.stmt->text, pop_call(rec.var_before_slot)));
    return adj;
}

GradResult Transformer::generate(bool dry) {
    dry_ = dry;
    slots_.clear();
    next_loop_id_ = 0;
    reads_.clear();
    const std::string ret_grad = grad_name(ret_var_);
    std::string seed = options_.seed_param.empty() ? ret_grad : options_.seed_param;
    if (!options_.seed_param.empty()) {
        if (names_.alloc.used(seed) && seed != ret_grad)
            throw Error("seed parameter '" + seed + "' collides with an existing name");
        names_.alloc.reserve(seed);
    }

    std::vector<Node> primal;
    std::vector<Rec> recs;
    std::set<std::string> bound;
    for (const auto& p : param_names(fn_)) bound.insert(p);
    forward_block(fn_.body, primal, recs, bound);
    if (options_.preserve_result) {
        std::string saved = names_.alloc.fresh("result");
        primal.push_back(make_assign(saved, make_name(ret_var_)));
        ret_saved_ = saved;
    }

    std::vector<Node> reverse;
    if (seed != ret_grad) reverse.push_back(make_assign(ret_grad, make_name(seed)));
    State st{ret_var_};
    reverse_block(recs, reverse, st, false);

    for (const auto& inj : injections_) {
        const std::string g = grad_name(inj.text);
        if (!st.count(inj.text)) {
            reverse.push_back(zeros_for(g, inj.text));
            st.insert(inj.text);
        }
        for (Node s : inj.body) {
            rename_names(s, [&](const std::string& n) -> std::optional<std::string> {
                if (n == inj.alias) return g;
                return std::nullopt;
            });
            reverse.push_back(std::move(s));
        }
    }
    for (const auto& p : wrt_names_)
        if (!st.count(p)) {
            reverse.push_back(zeros_for(grad_name(p), p));
            st.insert(p);
        }
    statement_reads(reverse, reads_);

    std::vector<Node> ret;
    if (options_.preserve_result) ret.push_back(make_name(ret_saved_));
    for (const auto& p : wrt_names_) ret.push_back(make_name(grad_name(p)));
    Node ret_value = ret.size() == 1 ? ret[0] : make_tuple(ret);

    std::vector<Node> params = fn_.kids;
    params.push_back(make_param(seed, make_number(1.0)));
    std::string name = grad_function_name(source_fn_, options_.wrt);
    while (program_.find(name) || std::find(chain_.begin(), chain_.end(), name) != chain_.end()) name += "_";

    std::vector<Node> body = std::move(primal);
    for (auto& s : reverse) body.push_back(std::move(s));
    body.push_back(make_return(std::move(ret_value)));

    GradResult r;
    r.fn_ast = make_function(name, std::move(params), std::move(body), source_fn_.span);
    r.wrt = options_.wrt;
    r.slots = slots_;
    r.warnings = warnings_;
    r.callees = callees_;
    for (const auto& [var, g] : names_.grads)
        if (primal_vars_.count(var)) r.adjoint_names[var] = g;
    return r;
}

GradResult Transformer::run() {
    prepare();
    const Names snapshot = names_;
    needed_.clear();
    GradResult r;
    // Each pass pushes what the previous one read; the set only grows.
    for (int pass = 0;; ++pass) {
        names_ = snapshot;
        r = generate(pass == 0);
        std::set<std::string> grown = needed_;
        for (const auto& n : reads_)
            if (primal_vars_.count(n)) grown.insert(n);
        if (pass > 0 && grown == needed_) break;
        if (pass > 64) throw Error("internal error: stack plan for '" + source_fn_.text + "' does not settle");
        needed_ = std::move(grown);
    }
    if (options_.optimize) {
        PipelineResult opt = run_pipeline(r.fn_ast);
        r.fn_ast = std::move(opt.fn);
        for (auto& w : opt.warnings) r.warnings.push_back(std::move(w));
    }
    r.source = emit(r.fn_ast);
    return r;
}

GradCache::GradCache(const Program& program, const Registry& registry) : program_(program), registry_(registry) {}

std::size_t GradCache::generated() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return memo_.size();
}

std::shared_ptr<const GradResult> GradCache::get(const std::string& function, const GradOptions& options) {
    return get_chain(function, options, {});
}

std::shared_ptr<const GradResult> GradCache::get_chain(const std::string& function, const GradOptions& options,
                                                       std::vector<std::string> chain) {
    const std::string key = options_key(function, options);
    std::promise<std::shared_ptr<const GradResult>> promise;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = memo_.find(key);
        if (it != memo_.end()) {
            auto fut = it->second;
            if (std::find(chain.begin(), chain.end(), function) != chain.end())
                throw Error("cannot differentiate recursive call to '" + function + "'");
            return fut.get();
        }
        memo_.emplace(key, promise.get_future().share());
    }
    try {
        const Node* fn = program_.find(function);
        if (!fn) throw Error("unknown function '" + function + "'");
        Transformer t(*fn, program_, options, registry_, *this, std::move(chain));
        auto result = std::make_shared<const GradResult>(t.run());
        promise.set_value(result);
        return result;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard<std::mutex> lock(mutex_);
        memo_.erase(key);
        throw;
    }
}

GradResult grad(const Node& fn, const Program& program, const GradOptions& options, const Registry& registry) {
    Program local = program;
    if (!local.find(fn.text)) local.functions.push_back(fn);
    GradCache cache(local, registry);
    return *cache.get(fn.text, options);
}

GradResult grad(const Node& fn, const Program& program, const GradOptions& options) {
    return grad(fn, program, options, builtin_registry());
}

GradResult truncate_loop_adjoint(const Node& fn, const Program& program, GradOptions options, int loop_id,
                                 std::int64_t k) {
    const int loops = count_loops(fn);
    if (loop_id < 0 || loop_id >= loops)
        throw Error("loop id " + std::to_string(loop_id) + " does not exist in '" + fn.text + "' (" +
                    std::to_string(loops) + " loop(s))");
    if (k < 0) throw Error("truncation length must be non-negative");
    options.truncate[loop_id] = k;
    return grad(fn, program, options);
}

std::string grad_function_name(const Node& fn, const std::vector<int>& wrt) {
    auto params = param_names(fn);
    std::string name = "d" + fn.text + "d";
    for (int w : wrt)
        if (w >= 0 && w < static_cast<int>(params.size())) name += params[static_cast<std::size_t>(w)];
    return name;
}

std::vector<int> parse_wrt(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto b = item.find_first_not_of(" \t");
        auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw Error("malformed wrt list '" + text + "'");
        item = item.substr(b, e - b + 1);
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            throw Error("malformed wrt list '" + text + "'");
        }
        if (used != item.size() || v < 0) throw Error("malformed wrt list '" + text + "'");
        out.push_back(v);
    }
    if (out.empty()) throw Error("malformed wrt list '" + text + "'");
    return out;
}

int count_loops(const Node& fn) {
    int n = 0;
    visit_statements(fn.body, [&](const Node& s) {
        if (s.kind == NodeKind::ForRange || s.kind == NodeKind::While) ++n;
    });
    return n;
}

Program with_gradient(const Program& program, const GradResult& result) {
    Program out = program;
    auto add = [&](const Node& f) {
        if (Node* existing = out.find(f.text))
            *existing = f;
        else
            out.functions.push_back(f);
    };
    for (const auto& c : result.callees) add(c);
    add(result.fn_ast);
    return out;
}

}  // namespace adjoint
