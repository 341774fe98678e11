#include "adjoint/registry.hpp"

#include <algorithm>

#include "adjoint/diagnostic.hpp"
#include "adjoint/frontend.hpp"

namespace adjoint {
namespace {

constexpr std::string_view kBuiltinSource = R"(def adjoint_add(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result], arg1)
    d[arg2] = unbroadcast(d[result], arg2)

def adjoint_sub(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result], arg1)
    d[arg2] = unbroadcast(-d[result], arg2)

def adjoint_mul(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result] * arg2, arg1)
    d[arg2] = unbroadcast(d[result] * arg1, arg2)

def adjoint_div(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result] / arg2, arg1)
    d[arg2] = unbroadcast(-d[result] * arg1 / (arg2 * arg2), arg2)

def adjoint_neg(result, arg1):
    d[arg1] = -d[result]

def adjoint_multiply(result, arg1, arg2):
    d[arg1] = arg2 * d[result]
    d[arg2] = arg1 * d[result]

def adjoint_dot(result, arg1, arg2):
    d[arg1] = grad_dot_lhs(d[result], arg1, arg2)
    d[arg2] = grad_dot_rhs(d[result], arg1, arg2)

def adjoint_tanh(result, arg1):
    d[arg1] = d[result] * (1.0 - result * result)

def adjoint_exp(result, arg1):
    d[arg1] = d[result] * result

def adjoint_log(result, arg1):
    d[arg1] = d[result] / arg1

def adjoint_sum(result, arg1, axis=None, keepdims=False):
    d[arg1] = sum_grad(d[result], arg1, axis, keepdims)

def adjoint_mean(result, arg1):
    d[arg1] = mean_grad(d[result], arg1)

def adjoint_index(result, arg1, arg2):
    d[arg1] = index_grad(d[result], arg1, arg2)

def adjoint_setitem(arr, index, value):
    d[value] = d[arr][index]

def adjoint_copy(result, arg1):
    d[arg1] = d[result]
)";

bool is_d_marker(const Node& n) {
    return n.kind == NodeKind::Index && n.kids[0].kind == NodeKind::Name && n.kids[0].text == "d";
}

void check_hygiene(const Node& e, const std::set<std::string>& params, const std::string& target,
                   std::set<std::string>& primal_reads) {
    if (is_d_marker(e)) {
        const Node& p = e.kids[1];
        if (p.kind != NodeKind::Name || !params.count(p.text))
            throw Error("adjoint template '" + target + "': d[...] must name a template parameter", e.span);
        return;
    }
    if (e.kind == NodeKind::Name) {
        if (params.count(e.text)) {
            primal_reads.insert(e.text);
            return;
        }
        if (is_constant_name(e.text)) return;
        throw Error("adjoint template '" + target + "' references '" + e.text + "', which is not a parameter",
                    e.span);
    }
    if (e.kind == NodeKind::Call && !is_intrinsic(e.text))
        throw Error("adjoint template '" + target + "' calls unknown function '" + e.text + "'", e.span);
    for (const auto& k : e.kids) check_hygiene(k, params, target, primal_reads);
}

const Node& bound(const Binding& binding, const std::string& param, const std::string& target) {
    auto it = binding.find(param);
    if (it == binding.end())
        throw Error("expanding '" + target + "': template parameter '" + param + "' is unbound");
    return it->second;
}

Node substitute(const Node& e, const Binding& binding, const ExpandContext& ctx, const std::string& target) {
    if (is_d_marker(e)) {
        const Node& v = bound(binding, e.kids[1].text, target);
        if (v.kind != NodeKind::Name)
            throw Error("expanding '" + target + "': the adjoint of a literal is read");
        return make_name(ctx.grad_name(v.text));
    }
    if (e.kind == NodeKind::Name) {
        if (binding.count(e.text)) return bound(binding, e.text, target);
        return e;
    }
    Node out = e;
    out.span = {};
    for (auto& k : out.kids) k = substitute(k, binding, ctx, target);
    return out;
}

}  // namespace

std::string operator_target(std::string_view op, bool unary) {
    if (unary) return op == "-" ? "neg" : "not";
    if (op == "+") return "add";
    if (op == "-") return "sub";
    if (op == "*") return "mul";
    if (op == "/") return "div";
    if (op == "<") return "lt";
    if (op == ">") return "gt";
    if (op == "<=") return "le";
    if (op == ">=") return "ge";
    if (op == "==") return "eq";
    if (op == "!=") return "ne";
    return std::string(op);
}

AdjointTemplate template_from_function(const Node& fn, std::string target) {
    AdjointTemplate tpl;
    tpl.target = std::move(target);
    std::set<std::string> params;
    for (const auto& p : fn.kids) {
        tpl.params.push_back(p.text);
        tpl.defaults.push_back(p.kids.empty() ? std::nullopt : std::optional<Node>(p.kids[0]));
        params.insert(p.text);
    }
    for (const auto& s : fn.body) {
        if (s.kind == NodeKind::Comment) continue;
        if (s.kind != NodeKind::IndexAssign || s.kids[0].text != "d")
            throw Error("adjoint template '" + tpl.target + "': statements must have the form d[p] = expr", s.span);
        const Node& p = s.kids[1];
        if (p.kind != NodeKind::Name || !params.count(p.text))
            throw Error("adjoint template '" + tpl.target + "': d[...] must name a template parameter", s.span);
        check_hygiene(s.kids[2], params, tpl.target, tpl.requires_primal_values);
        tpl.body.push_back(s);
    }
    return tpl;
}

std::vector<Node> expand(const AdjointTemplate& tpl, const Binding& binding, const ExpandContext& ctx) {
    struct Contribution {
        std::string var;
        Node expr;
    };
    std::vector<Contribution> contributions;
    for (const auto& s : tpl.body) {
        const Node& v = bound(binding, s.kids[1].text, tpl.target);
        if (v.kind != NodeKind::Name || is_constant_name(v.text)) continue;
        if (ctx.wants_grad && !ctx.wants_grad(v.text)) continue;
        contributions.push_back({v.text, substitute(s.kids[2], binding, ctx, tpl.target)});
    }

    std::map<std::string, int> count;
    std::vector<std::string> order;
    for (const auto& c : contributions)
        if (count[c.var]++ == 0) order.push_back(c.var);

    std::set<std::string> initialized;
    auto is_init = [&](const std::string& var) {
        return initialized.count(var) || (ctx.is_initialized && ctx.is_initialized(var));
    };
    auto accumulate = [&](const std::string& var, Node value) {
        std::string g = ctx.grad_name(var);
        Node rhs = is_init(var) ? make_call("add_grad", {make_name(g), std::move(value)}) : std::move(value);
        initialized.insert(var);
        return make_assign(g, std::move(rhs));
    };

    std::vector<Node> out;
    std::map<std::string, std::vector<std::string>> temps;
    std::map<std::string, int> local_temp_index;
    for (auto& c : contributions) {
        if (count[c.var] == 1) {
            out.push_back(accumulate(c.var, std::move(c.expr)));
            continue;
        }
        std::string tmp;
        if (ctx.fresh_temp) {
            tmp = ctx.fresh_temp(c.var);
        } else {
            int k = ++local_temp_index[c.var];
            tmp = "_" + ctx.grad_name(c.var) + (k == 1 ? "" : std::to_string(k));
        }
        temps[c.var].push_back(tmp);
        out.push_back(make_assign(tmp, std::move(c.expr)));
    }
    for (const auto& var : order)
        for (const auto& tmp : temps[var]) out.push_back(accumulate(var, make_name(tmp)));
    return out;
}

Binding bind_call(const AdjointTemplate& tpl, const Node& result, const std::vector<Node>& args) {
    Binding b;
    if (tpl.params.empty()) throw Error("adjoint template '" + tpl.target + "' has no parameters");
    b[tpl.params[0]] = result;
    std::size_t next = 1;
    for (const auto& a : args) {
        if (a.kind == NodeKind::Keyword) {
            auto it = std::find(tpl.params.begin() + 1, tpl.params.end(), a.text);
            if (it == tpl.params.end())
                throw Error("adjoint template '" + tpl.target + "' has no parameter '" + a.text + "'", a.span);
            b[a.text] = a.kids[0];
            continue;
        }
        if (next >= tpl.params.size())
            throw Error("too many arguments for adjoint template '" + tpl.target + "'", a.span);
        b[tpl.params[next++]] = a;
    }
    for (std::size_t i = 1; i < tpl.params.size(); ++i) {
        if (b.count(tpl.params[i])) continue;
        if (!tpl.defaults[i])
            throw Error("adjoint template '" + tpl.target + "': parameter '" + tpl.params[i] + "' is unbound");
        b[tpl.params[i]] = *tpl.defaults[i];
    }
    return b;
}

void Registry::add(AdjointTemplate tpl, bool overwrite) {
    auto it = templates_.find(tpl.target);
    if (it != templates_.end() && !overwrite)
        throw Error("conflicting adjoint definitions for '" + tpl.target + "'");
    std::string key = tpl.target;
    templates_.insert_or_assign(std::move(key), std::move(tpl));
}

const AdjointTemplate* Registry::lookup(std::string_view target) const {
    auto it = templates_.find(target);
    return it == templates_.end() ? nullptr : &it->second;
}

std::vector<std::string> Registry::targets() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : templates_) out.push_back(k);
    return out;
}

std::vector<std::string> Registry::load(const Program& program) {
    std::vector<std::string> names;
    for (const auto& fn : program.functions) {
        if (fn.text.rfind("adjoint_", 0) != 0) continue;
        std::string target = fn.text.substr(8);
        add(template_from_function(fn, target), true);
        names.push_back(target);
    }
    return names;
}

const std::vector<AdjointTemplate>& builtin_catalog() {
    static const std::vector<AdjointTemplate> catalog = [] {
        std::vector<AdjointTemplate> out;
        Program p = parse_or_throw(kBuiltinSource);
        for (const auto& fn : p.functions) out.push_back(template_from_function(fn, fn.text.substr(8)));
        // Comparisons produce booleans and pass no adjoint to their operands.
        for (const char* op : {"lt", "gt", "le", "ge", "eq", "ne"}) {
            AdjointTemplate t;
            t.target = op;
            t.params = {"result", "arg1", "arg2"};
            t.defaults.assign(3, std::nullopt);
            out.push_back(std::move(t));
        }
        return out;
    }();
    return catalog;
}

Registry Registry::builtin() {
    Registry r;
    for (const auto& t : builtin_catalog()) r.add(t);
    return r;
}

std::string_view builtin_adjoint_source() { return kBuiltinSource; }

}  // namespace adjoint
