#include "adjoint/optimize.hpp"

#include <regex>
#include <set>
#include <string>

#include "adjoint/frontend.hpp"

namespace adjoint {
namespace {

using Names = std::set<std::string>;

bool is_literal(const Node& e, double v) {
    if (e.kind == NodeKind::NumberLiteral) return e.number == v;
    return false;
}

bool is_number(const Node& e) { return e.kind == NodeKind::NumberLiteral; }

void assigned(const std::vector<Node>& stmts, Names& out) {
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
// simplify

Node simplify_expr(const Node& e, const Names& maybe_bound) {
    Node out = e;
    for (auto& k : out.kids) k = simplify_expr(k, maybe_bound);
    if (out.kind == NodeKind::BinOp) {
        const Node& l = out.kids[0];
        const Node& r = out.kids[1];
        if (out.text == "*") {
            if (is_literal(r, 1.0)) return l;
            if (is_literal(l, 1.0)) return r;
            if ((is_literal(l, 0.0) && is_number(r)) || (is_literal(r, 0.0) && is_number(l)))
                return make_number(0.0, out.span);
        } else if (out.text == "+") {
            if (is_literal(r, 0.0)) return l;
            if (is_literal(l, 0.0)) return r;
        } else if (out.text == "-") {
            if (is_literal(r, 0.0)) return l;
        } else if (out.text == "/") {
            if (is_literal(r, 1.0)) return l;
        }
    } else if (out.kind == NodeKind::Call && out.text == "add_grad" && out.kids.size() == 2) {
        if (out.kids[0].kind == NodeKind::Name && !maybe_bound.count(out.kids[0].text)) return out.kids[1];
    }
    return out;
}

void bind_targets(const Node& s, Names& bound) {
    Names a;
    assigned({s}, a);
    bound.insert(a.begin(), a.end());
}

std::vector<Node> simplify_block(const std::vector<Node>& in, Names& bound) {
    std::vector<Node> out;
    for (const auto& s0 : in) {
        Node s = s0;
        switch (s.kind) {
            case NodeKind::If: {
                s.kids[0] = simplify_expr(s.kids[0], bound);
                Names t = bound, f = bound;
                s.body = simplify_block(s.body, t);
                s.orelse = simplify_block(s.orelse, f);
                bound = t;
                bound.insert(f.begin(), f.end());
                break;
            }
            case NodeKind::ForRange:
            case NodeKind::While: {
                s.kids[0] = simplify_expr(s.kids[0], bound);
                // Later iterations see everything the body may bind.
                assigned({s}, bound);
                Names b = bound;
                s.body = simplify_block(s.body, b);
                break;
            }
            case NodeKind::AugAssign: {
                // x = 0; x += e  ->  x = e
                if (!out.empty() && out.back().kind == NodeKind::Assign &&
                    out.back().kids[0].kind == NodeKind::Name && out.back().kids[0].text == s.kids[0].text &&
                    is_literal(out.back().kids[1], 0.0) && (s.text == "+" || s.text == "-")) {
                    Node v = simplify_expr(s.kids[1], bound);
                    out.back().kids[1] = s.text == "+" ? v : make_unary("-", v, s.span);
                    continue;
                }
                s.kids[1] = simplify_expr(s.kids[1], bound);
                break;
            }
            case NodeKind::Comment:
                break;
            default:
                for (auto& k : s.kids)
                    if (k.kind != NodeKind::TupleExpr || s.kind != NodeKind::Assign) k = simplify_expr(k, bound);
                break;
        }
        bind_targets(s, bound);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// copy propagation

bool is_temp(const std::string& n) {
    static const std::regex re("b?_t[0-9]+");
    return std::regex_match(n, re);
}

void replace_reads(Node& s, const std::string& from, const std::string& to) {
    auto rn = [&](const std::string& n) -> std::optional<std::string> {
        if (n == from) return to;
        return std::nullopt;
    };
    auto expr = [&](Node& e) { rename_names(e, rn); };
    switch (s.kind) {
        case NodeKind::Assign:
        case NodeKind::AugAssign:
            expr(s.kids[1]);
            if (s.kind == NodeKind::AugAssign && s.kids[0].text == from) s.kids[0].text = to;
            break;
        case NodeKind::IndexAssign:
            if (s.kids[0].text == from) s.kids[0].text = to;
            expr(s.kids[1]);
            expr(s.kids[2]);
            break;
        case NodeKind::Comment:
            break;
        default:
            for (auto& k : s.kids) expr(k);
            for (auto& b : s.body) replace_reads(b, from, to);
            for (auto& b : s.orelse) replace_reads(b, from, to);
    }
}

void propagate_block(std::vector<Node>& stmts) {
    for (std::size_t i = 0; i < stmts.size(); ++i) {
        Node& s = stmts[i];
        propagate_block(s.body);
        propagate_block(s.orelse);
        if (s.kind != NodeKind::Assign || s.kids[0].kind != NodeKind::Name || s.kids[1].kind != NodeKind::Name)
            continue;
        const std::string t = s.kids[0].text;
        const std::string src = s.kids[1].text;
        if (!is_temp(t) || t == src) continue;
        for (std::size_t j = i + 1; j < stmts.size(); ++j) {
            Names a;
            assigned({stmts[j]}, a);
            const bool compound = !stmts[j].body.empty() || !stmts[j].orelse.empty() ||
                                  stmts[j].kind == NodeKind::ForRange || stmts[j].kind == NodeKind::While;
            if (compound && (a.count(t) || a.count(src))) break;
            replace_reads(stmts[j], t, src);
            if (a.count(t) || a.count(src)) break;
        }
    }
}

// ---------------------------------------------------------------------------
// dead code elimination

void reads_of(const Node& e, Names& out) {
    std::vector<std::string> r;
    collect_reads(e, r);
    out.insert(r.begin(), r.end());
}

bool is_pop(const Node& e) { return e.kind == NodeKind::Call && e.text == "pop"; }

int slot_of(const Node& call) {
    if (call.kids.size() == 2 && call.kids[1].kind == NodeKind::NumberLiteral) return static_cast<int>(call.kids[1].number);
    if (call.kids.size() == 1 && call.kids[0].kind == NodeKind::NumberLiteral) return static_cast<int>(call.kids[0].number);
    return -1;
}

bool has_effect(const Node& e) {
    bool effect = false;
    visit_preorder(e, [&](const Node& n) {
        if (n.kind == NodeKind::Call && (n.text == "pop" || n.text == "push" || n.text == "print")) effect = true;
    });
    return effect;
}

struct DceState {
    std::set<int> forced;      // slots whose pops are all kept
    std::set<int> dead_pops;   // slots with a removed pop
    std::set<int> live_pops;   // slots with a kept pop
    bool record = true;
};

std::vector<Node> dce_block(const std::vector<Node>& in, Names& live, DceState& ds);

Names loop_live(const Node& s, const Names& after, DceState& ds) {
    Names x = after;
    if (s.kind == NodeKind::While) reads_of(s.kids[0], x);
    const bool saved = ds.record;
    ds.record = false;
    while (true) {
        Names body_live = x;
        dce_block(s.body, body_live, ds);
        Names next = after;
        next.insert(body_live.begin(), body_live.end());
        if (s.kind == NodeKind::While) reads_of(s.kids[0], next);
        if (next == x) break;
        x = std::move(next);
    }
    ds.record = saved;
    return x;
}

std::vector<Node> dce_block(const std::vector<Node>& in, Names& live, DceState& ds) {
    std::vector<Node> rev;
    for (auto it = in.rbegin(); it != in.rend(); ++it) {
        Node s = *it;
        switch (s.kind) {
            case NodeKind::Return:
                live.clear();
                reads_of(s.kids[0], live);
                break;
            case NodeKind::Assign: {
                Names targets;
                assigned({s}, targets);
                bool needed = false;
                for (const auto& t : targets) needed = needed || live.count(t);
                const Node& v = s.kids[1];
                if (is_pop(v)) {
                    int k = slot_of(v);
                    if (!needed && !ds.forced.count(k)) {
                        if (ds.record) ds.dead_pops.insert(k);
                        continue;
                    }
                    if (ds.record) ds.live_pops.insert(k);
                } else if (!needed && !has_effect(v)) {
                    continue;
                }
                for (const auto& t : targets) live.erase(t);
                reads_of(v, live);
                break;
            }
            case NodeKind::AugAssign:
                if (!live.count(s.kids[0].text) && !has_effect(s.kids[1])) continue;
                reads_of(s.kids[1], live);
                break;
            case NodeKind::IndexAssign: {
                const Node& v = s.kids[2];
                const bool needed = live.count(s.kids[0].text) > 0;
                if (is_pop(v)) {
                    int k = slot_of(v);
                    if (!needed && !ds.forced.count(k)) {
                        if (ds.record) ds.dead_pops.insert(k);
                        continue;
                    }
                    if (ds.record) ds.live_pops.insert(k);
                } else if (!needed && !has_effect(v) && !has_effect(s.kids[1])) {
                    continue;
                }
                live.insert(s.kids[0].text);
                reads_of(s.kids[1], live);
                reads_of(v, live);
                break;
            }
            case NodeKind::ExprStmt: {
                const Node& c = s.kids[0];
                if (c.kind == NodeKind::Call && c.text == "push") {
                    int k = slot_of(c);
                    if (!ds.record) {
                        // analysis only: a push keeps its operand alive unless its pop is dead
                    } else if (ds.dead_pops.count(k) && !ds.live_pops.count(k) && !ds.forced.count(k)) {
                        continue;
                    }
                }
                reads_of(c, live);
                break;
            }
            case NodeKind::If: {
                Names t = live, f = live;
                s.body = dce_block(s.body, t, ds);
                s.orelse = dce_block(s.orelse, f, ds);
                live = std::move(t);
                live.insert(f.begin(), f.end());
                if (s.body.empty() && s.orelse.empty() && !has_effect(s.kids[0])) continue;
                if (s.body.empty()) {
                    s.kids[0] = make_unary("not", s.kids[0], s.span);
                    std::swap(s.body, s.orelse);
                }
                reads_of(s.kids[0], live);
                break;
            }
            case NodeKind::ForRange:
            case NodeKind::While: {
                Names x = loop_live(s, live, ds);
                Names body_live = x;
                s.body = dce_block(s.body, body_live, ds);
                if (s.body.empty() && !has_effect(s.kids[0])) {
                    if (s.kind == NodeKind::While) {
                        // an empty while still decides termination; keep it
                    } else {
                        continue;
                    }
                }
                live = std::move(x);
                live.insert(body_live.begin(), body_live.end());
                reads_of(s.kids[0], live);
                break;
            }
            default:
                break;
        }
        rev.push_back(std::move(s));
    }
    std::vector<Node> out(rev.rbegin(), rev.rend());
    // Drop comments that no longer introduce anything.
    std::vector<Node> kept;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].kind == NodeKind::Comment && (i + 1 == out.size() || out[i + 1].kind == NodeKind::Comment))
            continue;
        kept.push_back(std::move(out[i]));
    }
    return kept;
}

}  // namespace

Node simplify(const Node& fn) {
    Node out = fn;
    Names bound;
    for (const auto& p : fn.kids) bound.insert(p.text);
    out.body = simplify_block(fn.body, bound);
    return out;
}

Node copy_propagate(const Node& fn) {
    Node out = fn;
    propagate_block(out.body);
    return out;
}

Node dce(const Node& fn) {
    DceState ds;
    // A slot popped in several places is kept everywhere once any pop is live.
    for (int round = 0; round < 64; ++round) {
        ds.dead_pops.clear();
        ds.live_pops.clear();
        Names live;
        Node out = fn;
        out.body = dce_block(fn.body, live, ds);
        bool mixed = false;
        for (int k : ds.dead_pops)
            if (ds.live_pops.count(k) && ds.forced.insert(k).second) mixed = true;
        if (!mixed) return out;
    }
    return fn;
}

PipelineResult run_pipeline(const Node& fn, const PassConfig& config) {
    PipelineResult r;
    r.fn = fn;
    const int limit = config.fixpoint ? std::max(1, config.max_iterations) : 1;
    bool converged = false;
    for (int i = 0; i < limit; ++i) {
        Node before = r.fn;
        for (Pass p : config.passes) {
            switch (p) {
                case Pass::Simplify:
                    r.fn = simplify(r.fn);
                    break;
                case Pass::CopyProp:
                    r.fn = copy_propagate(r.fn);
                    break;
                case Pass::Dce:
                    r.fn = dce(r.fn);
                    break;
            }
        }
        r.iterations = i + 1;
        if (ast_equal(before, r.fn)) {
            converged = true;
            break;
        }
    }
    if (config.fixpoint && !converged)
        r.warnings.push_back({Severity::Warning, "opt-no-fixpoint",
                              "optimization did not reach a fixpoint after " + std::to_string(limit) + " iterations",
                              fn.span});
    return r;
}

}  // namespace adjoint
