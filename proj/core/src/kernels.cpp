#include "adjoint/kernels.hpp"

#include <cmath>

#include "adjoint/diagnostic.hpp"

namespace adjoint::kernels {
namespace {

// Strides of `s` aligned to a result of rank `rank`, zero on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
        std::size_t i = s.size() - 1 - k;
        std::size_t o = out.size() - 1 - k;
        strides[o] = s[i] == 1 ? 0 : stride;
        stride *= s[i];
    }
    return strides;
}

template <class F>
Value elementwise(const Value& a, const Value& b, F f) {
    if (a.is_number() && b.is_number()) return Value(f(a.as_double(), b.as_double()));
    Shape out = broadcast_shapes(a.shape(), b.shape());
    std::size_t n = shape_size(out);
    std::vector<double> data(n);
    if (a.shape() == out && b.shape() == out) {
        const auto& x = a.as_array().data;
        const auto& y = b.as_array().data;
        for (std::size_t i = 0; i < n; ++i) data[i] = f(x[i], y[i]);
    } else if (b.is_number() && a.shape() == out) {
        const auto& x = a.as_array().data;
        double y = b.as_double();
        for (std::size_t i = 0; i < n; ++i) data[i] = f(x[i], y);
    } else if (a.is_number() && b.shape() == out) {
        double x = a.as_double();
        const auto& y = b.as_array().data;
        for (std::size_t i = 0; i < n; ++i) data[i] = f(x, y[i]);
    } else {
        auto sa = broadcast_strides(a.shape(), out);
        auto sb = broadcast_strides(b.shape(), out);
        std::vector<std::size_t> idx(out.size(), 0);
        std::size_t ia = 0, ib = 0;
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = f(a.element(ia), b.element(ib));
            for (std::size_t d = out.size(); d-- > 0;) {
                ++idx[d];
                ia += sa[d];
                ib += sb[d];
                if (idx[d] < out[d]) break;
                ia -= sa[d] * idx[d];
                ib -= sb[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    return Value(Array(std::move(out), std::move(data)));
}

template <class F>
Value unary_map(const Value& x, F f) {
    if (x.is_number()) return Value(f(x.as_double()));
    Array out = x.as_array();
    for (auto& d : out.data) d = f(d);
    return Value(std::move(out));
}

void require_numeric(const Value& v, std::string_view what) {
    if (v.is_bool()) throw Error(std::string(what) + ": boolean operand is not numeric");
}

Value from_shape(Shape shape, std::vector<double> data) {
    if (shape.empty()) return Value(data.at(0));
    return Value(Array(std::move(shape), std::move(data)));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
    int r = static_cast<int>(rank);
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw Error("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
    return static_cast<std::size_t>(a);
}

std::size_t normalize_index(std::int64_t i, std::size_t size) {
    auto n = static_cast<std::int64_t>(size);
    std::int64_t k = i < 0 ? i + n : i;
    if (k < 0 || k >= n) throw Error("index " + std::to_string(i) + " out of range for size " + std::to_string(size));
    return static_cast<std::size_t>(k);
}

// (m,k) x (k,n) with explicit transposition flags.
std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m, std::size_t k,
                           std::size_t n, bool ta, bool tb) {
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = ta ? a[p * m + i] : a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * (tb ? b[j * k + p] : b[p * n + j]);
        }
    return out;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
        std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (da != db && da != 1 && db != 1)
            throw Error("shapes " + shape_string(a) + " and " + shape_string(b) + " cannot be broadcast together");
        out[rank - 1 - k] = std::max(da, db);
    }
    return out;
}

Value broadcast_to(const Value& v, const Shape& target) {
    if (broadcast_shapes(v.shape(), target) != target)
        throw Error("cannot broadcast shape " + shape_string(v.shape()) + " to " + shape_string(target));
    if (target.empty()) return Value(v.as_double());
    return elementwise(v, Value(Array(target, 0.0)), [](double x, double) { return x; });
}

Value binary(std::string_view op, const Value& a, const Value& b) {
    if (op == "==" || op == "!=" || op == "<" || op == ">" || op == "<=" || op == ">=") {
        if (!a.is_number() || !b.is_number()) {
            if (a.is_bool() && b.is_bool() && (op == "==" || op == "!="))
                return Value((a.as_bool() == b.as_bool()) == (op == "=="));
            throw Error("comparison '" + std::string(op) + "' requires numbers, got " + a.type_name() + " and " +
                        b.type_name());
        }
        if (a.is_int() && b.is_int()) {
            auto x = a.as_int(), y = b.as_int();
            if (op == "==") return Value(x == y);
            if (op == "!=") return Value(x != y);
            if (op == "<") return Value(x < y);
            if (op == ">") return Value(x > y);
            if (op == "<=") return Value(x <= y);
            return Value(x >= y);
        }
        double x = a.as_double(), y = b.as_double();
        if (op == "==") return Value(x == y);
        if (op == "!=") return Value(x != y);
        if (op == "<") return Value(x < y);
        if (op == ">") return Value(x > y);
        if (op == "<=") return Value(x <= y);
        return Value(x >= y);
    }
    require_numeric(a, op);
    require_numeric(b, op);
    if (a.is_int() && b.is_int() && op != "/") {
        auto x = a.as_int(), y = b.as_int();
        if (op == "+") return Value(x + y);
        if (op == "-") return Value(x - y);
        if (op == "*") return Value(x * y);
    }
    if (op == "+") return elementwise(a, b, [](double x, double y) { return x + y; });
    if (op == "-") return elementwise(a, b, [](double x, double y) { return x - y; });
    if (op == "*") return elementwise(a, b, [](double x, double y) { return x * y; });
    if (op == "/") return elementwise(a, b, [](double x, double y) { return x / y; });
    throw Error("unknown binary operator '" + std::string(op) + "'");
}

Value negate(const Value& a) {
    require_numeric(a, "-");
    if (a.is_int()) return Value(-a.as_int());
    return unary_map(a, [](double x) { return -x; });
}

Value tanh(const Value& x) {
    require_numeric(x, "tanh");
    return unary_map(x, [](double v) { return std::tanh(v); });
}

Value exp(const Value& x) {
    require_numeric(x, "exp");
    return unary_map(x, [](double v) { return std::exp(v); });
}

Value log(const Value& x) {
    require_numeric(x, "log");
    return unary_map(x, [](double v) { return v < 0 ? std::nan("") : std::log(v); });
}

Value dot(const Value& a, const Value& b) {
    require_numeric(a, "dot");
    require_numeric(b, "dot");
    if (a.is_number() || b.is_number()) return binary("*", a, b);
    const Array& x = a.as_array();
    const Array& y = b.as_array();
    if (x.rank() > 2 || y.rank() > 2)
        throw Error("dot supports operands of rank <= 2, got " + shape_string(x.shape) + " and " +
                    shape_string(y.shape));
    std::size_t kx = x.shape.back();
    std::size_t ky = y.shape.front();
    if (kx != ky)
        throw Error("dot: inner dimensions differ for shapes " + shape_string(x.shape) + " and " +
                    shape_string(y.shape));
    std::size_t m = x.rank() == 2 ? x.shape[0] : 1;
    std::size_t n = y.rank() == 2 ? y.shape[1] : 1;
    auto out = matmul(x.data, y.data, m, kx, n, false, false);
    Shape shape;
    if (x.rank() == 2) shape.push_back(m);
    if (y.rank() == 2) shape.push_back(n);
    return from_shape(std::move(shape), std::move(out));
}

Value sum(const Value& x, std::optional<int> axis, bool keepdims) {
    require_numeric(x, "sum");
    if (x.is_number()) return Value(x.as_double());
    const Array& a = x.as_array();
    if (!axis) {
        double total = 0.0;
        for (double d : a.data) total += d;
        if (keepdims) return Value(Array(Shape(a.rank(), 1), std::vector<double>{total}));
        return Value(total);
    }
    std::size_t ax = normalize_axis(*axis, a.rank());
    std::size_t outer = 1, inner = 1, len = a.shape[ax];
    for (std::size_t i = 0; i < ax; ++i) outer *= a.shape[i];
    for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape[i];
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += a.data[(o * len + l) * inner + i];
    Shape shape = a.shape;
    if (keepdims)
        shape[ax] = 1;
    else
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    return from_shape(std::move(shape), std::move(out));
}

Value mean(const Value& x) {
    require_numeric(x, "mean");
    return Value(sum(x).as_double() / static_cast<double>(x.size()));
}

Value minimum(const Value& a, const Value& b) {
    if (a.is_int() && b.is_int()) return Value(std::min(a.as_int(), b.as_int()));
    return Value(std::min(a.as_double(), b.as_double()));
}

Value unbroadcast(const Value& y, const Value& like) {
    const Shape ys = y.shape();
    const Shape ls = like.shape();
    Shape joint;
    try {
        joint = broadcast_shapes(ys, ls);
    } catch (const Error&) {
        joint.clear();
    }
    if (joint != ys || (ys.empty() && !ls.empty()))
        throw Error("unbroadcast: shape " + shape_string(ys) + " is not a broadcast of " + shape_string(ls));
    if (ys == ls) return y;
    if (ls.empty()) return sum(y);
    const Array& a = y.as_array();
    std::vector<double> out(shape_size(ls), 0.0);
    // Map each element of y onto like's (broadcast) coordinates.
    auto sl = broadcast_strides(ls, ys);
    std::vector<std::size_t> idx(ys.size(), 0);
    std::size_t il = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[il] += a.data[i];
        for (std::size_t d = ys.size(); d-- > 0;) {
            ++idx[d];
            il += sl[d];
            if (idx[d] < ys[d]) break;
            il -= sl[d] * idx[d];
            idx[d] = 0;
        }
    }
    return Value(Array(ls, std::move(out)));
}

Value add_grad(const std::optional<Value>& a, const Value& b) {
    if (!a) return b;
    return binary("+", *a, b);
}

Value zeros_like(const Value& x) {
    if (x.is_array()) return Value(Array(x.shape(), 0.0));
    if (x.is_bool()) throw Error("zeros_like: boolean has no gradient");
    return Value(0.0);
}

Value sum_grad(const Value& g, const Value& x, std::optional<int> axis, bool keepdims) {
    if (x.is_number()) return Value(g.as_double());
    Shape target = x.shape();
    if (!axis) return broadcast_to(g.is_number() ? g : Value(g.element(0)), target);
    std::size_t ax = normalize_axis(*axis, target.size());
    Value reshaped = g;
    if (!keepdims) {
        Shape gs = g.shape();
        gs.insert(gs.begin() + static_cast<std::ptrdiff_t>(ax), 1);
        std::vector<double> data(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) data[i] = g.element(i);
        reshaped = Value(Array(std::move(gs), std::move(data)));
    }
    return broadcast_to(reshaped, target);
}

Value mean_grad(const Value& g, const Value& x) {
    if (x.is_number()) return Value(g.as_double());
    return broadcast_to(Value(g.as_double() / static_cast<double>(x.size())), x.shape());
}

Value grad_dot_lhs(const Value& g, const Value& a, const Value& b) {
    if (a.is_number()) return sum(binary("*", g, b));
    if (b.is_number()) return binary("*", g, b);
    const Array& x = a.as_array();
    const Array& y = b.as_array();
    if (x.rank() == 1 && y.rank() == 1) return binary("*", g, b);
    if (x.rank() == 2 && y.rank() == 2) {
        std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
        return Value(Array({m, k}, matmul(g.as_array().data, y.data, m, n, k, false, true)));
    }
    if (x.rank() == 1) {  // (k)·(k,n): b · g
        std::size_t k = y.shape[0], n = y.shape[1];
        return Value(Array({k}, matmul(y.data, g.as_array().data, k, n, 1, false, false)));
    }
    // (m,k)·(k): outer(g, b)
    std::size_t m = x.shape[0], k = x.shape[1];
    return Value(Array({m, k}, matmul(g.as_array().data, y.data, m, 1, k, false, false)));
}

Value grad_dot_rhs(const Value& g, const Value& a, const Value& b) {
    if (a.is_number()) return binary("*", g, a);
    if (b.is_number()) return sum(binary("*", g, a));
    const Array& x = a.as_array();
    const Array& y = b.as_array();
    if (x.rank() == 1 && y.rank() == 1) return binary("*", g, a);
    if (x.rank() == 2 && y.rank() == 2) {
        std::size_t m = x.shape[0], k = x.shape[1], n = y.shape[1];
        return Value(Array({k, n}, matmul(x.data, g.as_array().data, k, m, n, true, false)));
    }
    if (x.rank() == 1) {  // (k)·(k,n): outer(a, g)
        std::size_t k = x.shape[0], n = y.shape[1];
        return Value(Array({k, n}, matmul(x.data, g.as_array().data, k, 1, n, false, false)));
    }
    // (m,k)·(k): aᵀ · g
    std::size_t m = x.shape[0], k = x.shape[1];
    return Value(Array({k}, matmul(x.data, g.as_array().data, k, m, 1, true, false)));
}

Value index_get(const Value& x, std::int64_t i) {
    const Array& a = x.as_array();
    return Value(a.data[normalize_index(i, a.size())]);
}

void index_set(Value& x, std::int64_t i, const Value& v) {
    Array& a = x.as_array();
    if (v.size() != 1 || v.is_bool()) throw Error("index assignment requires a number, got " + v.type_name());
    a.data[normalize_index(i, a.size())] = v.element(0);
}

Value index_grad(const Value& g, const Value& x, std::int64_t i) {
    Value out = zeros_like(x);
    index_set(out, i, g);
    return out;
}

}  // namespace adjoint::kernels
