#include "oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace adjoint::testing {

std::function<double(const std::vector<Value>&)> scalar_function(const Interpreter& interp, std::string function) {
    return [&interp, function](const std::vector<Value>& args) {
        auto out = interp.call(function, args);
        if (out.size() != 1 || !out[0].is_number()) throw std::runtime_error(function + " is not scalar-valued");
        return out[0].as_double();
    };
}

std::vector<Value> richardson_gradient(const std::function<double(const std::vector<Value>&)>& f,
                                       const std::vector<Value>& args, const std::vector<int>& wrt, double h) {
    auto bump = [&](std::size_t p, std::size_t i, double d) {
        std::vector<Value> a = args;
        if (a[p].is_array())
            a[p].as_array().data[i] += d;
        else
            a[p] = Value(a[p].as_double() + d);
        return f(a);
    };
    std::vector<Value> out;
    for (int w : wrt) {
        const auto p = static_cast<std::size_t>(w);
        std::vector<double> g(args[p].size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d1 = (bump(p, i, h) - bump(p, i, -h)) / (2 * h);
            const double d2 = (bump(p, i, h / 2) - bump(p, i, -h / 2)) / h;
            g[i] = (4 * d2 - d1) / 3;
        }
        if (args[p].is_array())
            out.push_back(Value::array(args[p].shape(), g));
        else
            out.push_back(Value(g[0]));
    }
    return out;
}

std::size_t broadcast_offset(const Shape& shape, const std::vector<std::size_t>& idx) {
    std::size_t off = 0;
    const std::size_t lead = idx.size() - shape.size();
    for (std::size_t d = 0; d < shape.size(); ++d) {
        const std::size_t i = shape[d] == 1 ? 0 : idx[lead + d];
        off = off * shape[d] + i;
    }
    return off;
}

Value unbroadcast_by_tiling(const Value& y, const Shape& small) {
    const Shape big = y.shape();
    std::vector<double> acc(shape_size(small), 0.0);
    std::vector<std::size_t> idx(big.size(), 0);
    for (std::size_t flat = 0; flat < y.size(); ++flat) {
        std::size_t rem = flat;
        for (std::size_t d = big.size(); d-- > 0;) {
            idx[d] = rem % big[d];
            rem /= big[d];
        }
        acc[small.empty() ? 0 : broadcast_offset(small, idx)] += y.element(flat);
    }
    if (small.empty()) return Value(acc[0]);
    return Value::array(small, acc);
}

double mlp_loss_loops(const Value& x, const Value& w1, const Value& b1, const Value& wout, const Value& bout,
                      const Value& label) {
    const std::size_t batch = x.shape()[0], in = x.shape()[1], hidden = w1.shape()[1], out = wout.shape()[1];
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        std::vector<double> h(hidden), logits(out);
        for (std::size_t j = 0; j < hidden; ++j) {
            double s = b1.element(j);
            for (std::size_t k = 0; k < in; ++k) s += x.element(r * in + k) * w1.element(k * hidden + j);
            h[j] = std::tanh(s);
        }
        double z = 0.0;
        for (std::size_t c = 0; c < out; ++c) {
            double s = bout.element(c);
            for (std::size_t j = 0; j < hidden; ++j) s += h[j] * wout.element(j * out + c);
            logits[c] = s;
            z += std::exp(s);
        }
        const double lse = std::log(z);
        for (std::size_t c = 0; c < out; ++c) total -= (logits[c] - lse) * label.element(r * out + c);
    }
    return total / static_cast<double>(batch);
}

double max_rel_diff(const Value& a, const Value& b, double floor) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.element(i) - b.element(i)) / std::max(std::abs(b.element(i)), floor));
    return m;
}

}  // namespace adjoint::testing
