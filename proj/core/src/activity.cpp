#include <algorithm>
#include <deque>

#include "adjoint/analysis.hpp"
#include "adjoint/frontend.hpp"

namespace adjoint {
namespace {

bool is_boolean_op(const std::string& op) {
    return op == "<" || op == ">" || op == "<=" || op == ">=" || op == "==" || op == "!=" || op == "and" ||
           op == "or";
}

bool is_nondifferentiable_call(const std::string& callee) {
    return callee == "min" || callee == "zeros_like" || callee == "print" || callee == "push" ||
           callee == "pop";
}

NameSet transfer(const Node& s, NameSet active) {
    switch (s.kind) {
        case NodeKind::Assign: {
            bool act = expression_is_active(s.kids[1], active);
            const Node& target = s.kids[0];
            auto apply = [&](const std::string& name) {
                if (act)
                    active.insert(name);
                else
                    active.erase(name);
            };
            if (target.kind == NodeKind::TupleExpr)
                for (const auto& t : target.kids) apply(t.text);
            else
                apply(target.text);
            break;
        }
        case NodeKind::AugAssign: {
            const std::string& v = s.kids[0].text;
            if (active.count(v) || expression_is_active(s.kids[1], active))
                active.insert(v);
            else
                active.erase(v);
            break;
        }
        case NodeKind::IndexAssign:
            if (expression_is_active(s.kids[2], active)) active.insert(s.kids[0].text);
            break;
        case NodeKind::ForRange:
            active.erase(s.text);
            break;
        default:
            break;
    }
    return active;
}

bool statement_is_active(const Node& s, const NameSet& in, const std::map<const Node*, bool>& known) {
    switch (s.kind) {
        case NodeKind::Assign:
            return expression_is_active(s.kids[1], in);
        case NodeKind::AugAssign:
            return in.count(s.kids[0].text) || expression_is_active(s.kids[1], in);
        case NodeKind::IndexAssign:
            return in.count(s.kids[0].text) || expression_is_active(s.kids[2], in);
        case NodeKind::Return:
            return expression_is_active(s.kids[0], in);
        case NodeKind::GradOfBlock:
            return true;
        case NodeKind::If:
        case NodeKind::ForRange:
        case NodeKind::While: {
            bool any = false;
            for (const auto* list : {&s.body, &s.orelse})
                for (const auto& c : *list) {
                    auto it = known.find(&c);
                    any = any || (it != known.end() && it->second);
                }
            return any;
        }
        default:
            return false;
    }
}

void mark_compound(const std::vector<Node>& stmts, ActivityInfo& info) {
    // Children first so enclosing statements see their results.
    for (const auto& s : stmts) {
        mark_compound(s.body, info);
        mark_compound(s.orelse, info);
        auto in_it = info.active_in.find(&s);
        NameSet in = in_it == info.active_in.end() ? NameSet{} : in_it->second;
        info.statement_active[&s] = statement_is_active(s, in, info.statement_active);
    }
}

}  // namespace

bool expression_is_active(const Node& e, const NameSet& active) {
    switch (e.kind) {
        case NodeKind::Name:
            return active.count(e.text) > 0;
        case NodeKind::NumberLiteral:
            return false;
        case NodeKind::BinOp:
            if (is_boolean_op(e.text)) return false;
            return expression_is_active(e.kids[0], active) || expression_is_active(e.kids[1], active);
        case NodeKind::UnaryOp:
            return e.text == "-" && expression_is_active(e.kids[0], active);
        case NodeKind::Index:
            return expression_is_active(e.kids[0], active);
        case NodeKind::Call:
            if (is_nondifferentiable_call(e.text)) return false;
            for (const auto& a : e.kids)
                if (a.kind != NodeKind::Keyword && expression_is_active(a, active)) return true;
            return false;
        case NodeKind::TupleExpr:
            for (const auto& a : e.kids)
                if (expression_is_active(a, active)) return true;
            return false;
        default:
            return false;
    }
}

bool ActivityInfo::is_active(const Node& stmt) const {
    auto it = statement_active.find(&stmt);
    return it != statement_active.end() && it->second;
}

ActivityInfo activity(const Node& fn, const Cfg& cfg, const NameSet& wrt) {
    auto params = param_names(fn);
    for (const auto& w : wrt)
        if (std::find(params.begin(), params.end(), w) == params.end())
            throw Error("activity: '" + w + "' is not a parameter of '" + fn.text + "'", fn.span);

    const std::size_t n = cfg.blocks.size();
    std::vector<NameSet> block_in(n), block_out(n);
    std::vector<std::vector<int>> preds(n);
    for (const auto& e : cfg.edges) preds[static_cast<std::size_t>(e.to)].push_back(e.from);

    ActivityInfo info;
    info.wrt = wrt;

    std::deque<int> work;
    std::vector<bool> queued(n, true);
    for (std::size_t b = 0; b < n; ++b) work.push_back(static_cast<int>(b));
    while (!work.empty()) {
        int b = work.front();
        work.pop_front();
        queued[static_cast<std::size_t>(b)] = false;
        NameSet in = b == cfg.entry ? wrt : NameSet{};
        for (int p : preds[static_cast<std::size_t>(b)])
            in.insert(block_out[static_cast<std::size_t>(p)].begin(), block_out[static_cast<std::size_t>(p)].end());
        NameSet cur = in;
        for (const Node* s : cfg.blocks[static_cast<std::size_t>(b)].stmts) {
            info.active_in[s] = cur;
            cur = transfer(*s, std::move(cur));
            info.active_out[s] = cur;
        }
        block_in[static_cast<std::size_t>(b)] = std::move(in);
        if (cur != block_out[static_cast<std::size_t>(b)]) {
            block_out[static_cast<std::size_t>(b)] = std::move(cur);
            for (int s : cfg.successors(b)) {
                if (!queued[static_cast<std::size_t>(s)]) {
                    queued[static_cast<std::size_t>(s)] = true;
                    work.push_back(s);
                }
            }
        }
    }

    for (const auto& [_, set] : info.active_in) info.active_vars.insert(set.begin(), set.end());
    for (const auto& [_, set] : info.active_out) info.active_vars.insert(set.begin(), set.end());
    info.active_vars.insert(wrt.begin(), wrt.end());
    mark_compound(fn.body, info);
    return info;
}

}  // namespace adjoint
