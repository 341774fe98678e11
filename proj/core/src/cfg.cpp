#include <sstream>

#include "adjoint/analysis.hpp"

namespace adjoint {

std::vector<int> Cfg::successors(int block) const {
    std::vector<int> out;
    for (const auto& e : edges)
        if (e.from == block) out.push_back(e.to);
    return out;
}

std::vector<int> Cfg::predecessors(int block) const {
    std::vector<int> out;
    for (const auto& e : edges)
        if (e.to == block) out.push_back(e.from);
    return out;
}

int Cfg::count_edges(EdgeKind kind) const {
    int n = 0;
    for (const auto& e : edges) n += e.kind == kind;
    return n;
}

namespace {

class CfgBuilder {
  public:
    Cfg run(const Node& fn) {
        cfg_.entry = new_block();
        int last = build(fn.body, cfg_.entry);
        cfg_.exit = last;
        return std::move(cfg_);
    }

  private:
    int new_block() {
        cfg_.blocks.emplace_back();
        return static_cast<int>(cfg_.blocks.size()) - 1;
    }

    void edge(int from, int to, EdgeKind kind) { cfg_.edges.push_back({from, to, kind}); }

    int build(const std::vector<Node>& stmts, int cur) {
        bool returned = false;
        for (const auto& s : stmts) {
            if (returned && s.kind != NodeKind::Comment) {
                cfg_.diagnostics.push_back(
                    {Severity::Warning, "W_UNREACHABLE", "unreachable statement after return", s.span});
                returned = false;  // warn once per run of dead statements
            }
            switch (s.kind) {
                case NodeKind::If: {
                    cfg_.blocks[cur].stmts.push_back(&s);
                    int then_block = new_block();
                    edge(cur, then_block, EdgeKind::TrueBranch);
                    int then_end = build(s.body, then_block);
                    int else_end = -1;
                    if (!s.orelse.empty()) {
                        int else_block = new_block();
                        edge(cur, else_block, EdgeKind::FalseBranch);
                        else_end = build(s.orelse, else_block);
                    }
                    int join = new_block();
                    edge(then_end, join, EdgeKind::Fallthrough);
                    if (else_end >= 0)
                        edge(else_end, join, EdgeKind::Fallthrough);
                    else
                        edge(cur, join, EdgeKind::FalseBranch);
                    cur = join;
                    break;
                }
                case NodeKind::ForRange:
                case NodeKind::While: {
                    int head = new_block();
                    edge(cur, head, EdgeKind::Fallthrough);
                    cfg_.blocks[head].stmts.push_back(&s);
                    int body = new_block();
                    edge(head, body, EdgeKind::TrueBranch);
                    int body_end = build(s.body, body);
                    edge(body_end, head, EdgeKind::LoopBack);
                    int after = new_block();
                    edge(head, after, EdgeKind::FalseBranch);
                    cur = after;
                    break;
                }
                default:
                    cfg_.blocks[cur].stmts.push_back(&s);
                    if (s.kind == NodeKind::Return) returned = true;
            }
        }
        return cur;
    }

    Cfg cfg_;
};

const char* edge_label(EdgeKind k) {
    switch (k) {
        case EdgeKind::Fallthrough: return "";
        case EdgeKind::TrueBranch: return "true";
        case EdgeKind::FalseBranch: return "false";
        case EdgeKind::LoopBack: return "loop";
    }
    return "";
}

}  // namespace

Cfg build_cfg(const Node& fn) { return CfgBuilder().run(fn); }

std::string cfg_to_dot(const Cfg& cfg, const std::string& name) {
    std::ostringstream os;
    os << "digraph \"" << name << "\" {\n";
    os << "  node [shape=box];\n";
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        os << "  b" << i << " [label=\"";
        if (static_cast<int>(i) == cfg.entry) os << "entry ";
        if (static_cast<int>(i) == cfg.exit) os << "exit ";
        os << "lines:";
        if (cfg.blocks[i].stmts.empty()) os << " -";
        for (const Node* s : cfg.blocks[i].stmts) os << ' ' << s->span.line;
        os << "\"];\n";
    }
    for (const auto& e : cfg.edges) {
        os << "  b" << e.from << " -> b" << e.to;
        const char* label = edge_label(e.kind);
        if (*label) os << " [label=\"" << label << "\"]";
        os << ";\n";
    }
    os << "}\n";
    return os.str();
}

}  // namespace adjoint
