#include "fuzz.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

namespace adjoint::testing {
namespace {

class Generator {
  public:
    explicit Generator(std::uint64_t seed) : rng_(seed) {}

    std::string body() {
        std::set<std::string> scalars{"x", "y"}, arrays{"z"};
        std::string out = block(1, 0, scalars, arrays, 3 + pick(4));
        out += "    return " + ret(scalars, arrays) + "\n";
        return out;
    }

  private:
    std::mt19937_64 rng_;
    int next_local_ = 0;
    int next_counter_ = 0;

    int pick(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }
    bool chance(int percent) { return pick(100) < percent; }

    template <class T>
    const T& choose(const std::set<T>& s) {
        auto it = s.begin();
        std::advance(it, pick(static_cast<int>(s.size())));
        return *it;
    }

    static std::string indent(int level) { return std::string(4 * static_cast<std::size_t>(level), ' '); }

    std::string literal() {
        static const char* lits[] = {"0.5", "1.5", "2.0", "0.25", "0.75"};
        return lits[pick(5)];
    }

    std::string scalar(const std::set<std::string>& s, const std::set<std::string>& a, int depth) {
        if (depth <= 0 || chance(30)) {
            int k = pick(10);
            if (k < 6) return choose(s);
            if (k < 7) return literal();
            if (k < 8) return "sum(" + choose(a) + ")";
            return choose(a) + "[" + std::to_string(pick(3)) + "]";
        }
        std::string l = scalar(s, a, depth - 1);
        std::string r = scalar(s, a, depth - 1);
        switch (pick(8)) {
            case 0:
                return l + " + " + r;
            case 1:
                return l + " - " + r;
            case 2:
                return l + " * " + literal();
            case 3:
                return "tanh(" + l + ") * " + r;
            case 4:
                return "tanh(" + l + ")";
            case 5:
                return l + " / (1.5 + " + r + " * " + r + ")";
            case 6:
                return "exp(tanh(" + l + "))";
            default:
                return "-" + ("tanh(" + l + ")");
        }
    }

    std::string array(const std::set<std::string>& s, const std::set<std::string>& a) {
        switch (pick(3)) {
            case 0:
                return choose(a) + " * " + scalar(s, a, 1);
            case 1:
                return "tanh(" + choose(a) + " + " + choose(a) + ")";
            default:
                return choose(a) + " - " + literal();
        }
    }

    std::string fresh() { return "v" + std::to_string(next_local_++); }

    std::string stmt(int level, int depth, std::set<std::string>& s, std::set<std::string>& a) {
        const std::string in = indent(level);
        const int k = pick(depth >= 2 ? 7 : 10);
        std::set<std::string> locals_s, locals_a;
        for (const auto& n : s)
            if (n != "x" && n != "y") locals_s.insert(n);
        for (const auto& n : a)
            if (n != "z") locals_a.insert(n);
        switch (k) {
            case 0:
            case 1: {
                std::string v = (chance(40) && !s.empty()) ? choose(s) : fresh();
                std::string line = in + v + " = " + scalar(s, a, 2) + "\n";
                s.insert(v);
                return line;
            }
            case 2: {
                const std::string v = choose(s);
                static const char* ops[] = {"+=", "-=", "*="};
                const int op = pick(3);
                return in + v + " " + ops[op] + " " + (op == 2 ? literal() : scalar(s, a, 1)) + "\n";
            }
            case 3: {
                std::string v = (chance(40) && !locals_a.empty()) ? choose(locals_a) : fresh();
                std::string line = in + v + " = " + array(s, a) + "\n";
                a.insert(v);
                return line;
            }
            case 4: {
                if (locals_a.empty()) return stmt(level, depth, s, a);
                return in + choose(locals_a) + "[" + std::to_string(pick(3)) + "] = " + scalar(s, a, 1) + "\n";
            }
            case 5:
            case 6: {
                if (depth >= 2) return stmt(level, depth, s, a);
                return compound(level, depth, s, a);
            }
            default: {
                std::string v = fresh();
                std::string line = in + v + " = " + scalar(s, a, 1) + "\n";
                s.insert(v);
                return line;
            }
        }
    }

    std::string compound(int level, int depth, std::set<std::string>& s, std::set<std::string>& a) {
        const std::string in = indent(level);
        std::ostringstream os;
        switch (pick(4)) {
            case 0:
            case 1: {
                os << in << "if " << scalar(s, a, 1) << " > " << (chance(50) ? "0.1" : "-0.3") << ":\n";
                auto ts = s, ta = a;
                os << block(level + 1, depth + 1, ts, ta, 1 + pick(3));
                if (chance(60)) {
                    auto es = s, ea = a;
                    os << in << "else:\n" << block(level + 1, depth + 1, es, ea, 1 + pick(2));
                    for (const auto& n : ts)
                        if (es.count(n)) s.insert(n);
                    for (const auto& n : ta)
                        if (ea.count(n)) a.insert(n);
                }
                return os.str();
            }
            case 2: {
                os << in << "for i" << level << " in range(" << (chance(60) ? "n" : "2") << "):\n";
                auto bs = s, bl = a;
                os << block(level + 1, depth + 1, bs, bl, 1 + pick(3));
                return os.str();
            }
            default: {
                const std::string c = "c" + std::to_string(next_counter_++);
                os << in << c << " = 0.0\n";
                os << in << "while " << c << " < 1.5:\n";
                auto bs = s, bl = a;
                os << block(level + 1, depth + 1, bs, bl, 1 + pick(2));
                os << indent(level + 1) << c << " = " << c << " + 1.0\n";
                return os.str();
            }
        }
    }

    std::string block(int level, int depth, std::set<std::string>& s, std::set<std::string>& a, int n) {
        std::string out;
        for (int i = 0; i < n; ++i) out += stmt(level, depth, s, a);
        return out;
    }

    std::string ret(const std::set<std::string>& s, const std::set<std::string>& a) {
        std::string e = choose(s);
        if (chance(60)) e += " + sum(" + choose(a) + ")";
        if (chance(50)) e += " * " + choose(s);
        return e;
    }
};

}  // namespace

FuzzProgram fuzz_program(std::uint64_t seed) {
    Generator g(seed * 0x9e3779b97f4a7c15ULL + 17);
    FuzzProgram p;
    p.function = "fuzz" + std::to_string(seed);
    p.source = "def " + p.function + "(x, y, z, n):\n" + g.body();
    p.wrt = {0, 1, 2};
    p.arg_spec = R"([{"range": [-1.0, 1.0]}, {"range": [-1.0, 1.0]}, {"shape": [3], "range": [-1.0, 1.0]}, {"int": [0, 3]}])";
    return p;
}

}  // namespace adjoint::testing
