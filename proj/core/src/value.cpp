#include "adjoint/value.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "adjoint/diagnostic.hpp"

namespace adjoint {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.empty()) throw Error("array rank must be at least 1");
    if (shape_size(shape) != data.size())
        throw Error("array data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_string(shape));
}

Array::Array(Shape s, double fill) : shape(std::move(s)) {
    if (shape.empty()) throw Error("array rank must be at least 1");
    data.assign(shape_size(shape), fill);
}

Value::Value(Array a) : v_(std::move(a)) {}

Value Value::array(Shape shape, std::vector<double> data) { return Value(Array(std::move(shape), std::move(data))); }

Value Value::vector(std::initializer_list<double> data) {
    return Value(Array({data.size()}, std::vector<double>(data)));
}

Value Value::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Value(Array({rows, cols}, std::move(data)));
}

double Value::as_double() const {
    if (auto d = std::get_if<double>(&v_)) return *d;
    if (auto i = std::get_if<std::int64_t>(&v_)) return static_cast<double>(*i);
    throw Error("expected a number, got " + type_name());
}

std::int64_t Value::as_int() const {
    if (auto i = std::get_if<std::int64_t>(&v_)) return *i;
    if (auto d = std::get_if<double>(&v_)) {
        if (std::floor(*d) == *d && std::isfinite(*d)) return static_cast<std::int64_t>(*d);
        throw Error("expected an integer, got non-integral " + to_string());
    }
    throw Error("expected an integer, got " + type_name());
}

bool Value::as_bool() const {
    if (auto b = std::get_if<bool>(&v_)) return *b;
    if (auto i = std::get_if<std::int64_t>(&v_)) return *i != 0;
    if (auto d = std::get_if<double>(&v_)) return *d != 0.0;
    throw Error("the truth value of an array is ambiguous");
}

const Array& Value::as_array() const {
    if (auto a = std::get_if<Array>(&v_)) return *a;
    throw Error("expected an array, got " + type_name());
}

Array& Value::as_array() {
    if (auto a = std::get_if<Array>(&v_)) return *a;
    throw Error("expected an array, got " + type_name());
}

Shape Value::shape() const {
    if (auto a = std::get_if<Array>(&v_)) return a->shape;
    return {};
}

std::size_t Value::size() const {
    if (auto a = std::get_if<Array>(&v_)) return a->size();
    return 1;
}

double Value::element(std::size_t i) const {
    if (auto a = std::get_if<Array>(&v_)) return a->data.at(i);
    return as_double();
}

std::string Value::type_name() const {
    switch (v_.index()) {
        case 0: return "scalar";
        case 1: return "array" + shape_string(std::get<Array>(v_).shape);
        case 2: return "bool";
        default: return "int";
    }
}

namespace {

void format_double(std::ostream& os, double d) {
    if (std::isnan(d)) {
        os << "NaN";
        return;
    }
    if (std::isinf(d)) {
        os << (d > 0 ? "Infinity" : "-Infinity");
        return;
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, d);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    os << s;
}

void format_array(std::ostream& os, const Array& a, std::size_t dim, std::size_t& offset) {
    os << '[';
    for (std::size_t i = 0; i < a.shape[dim]; ++i) {
        if (i) os << ", ";
        if (dim + 1 == a.shape.size())
            format_double(os, a.data[offset++]);
        else
            format_array(os, a, dim + 1, offset);
    }
    os << ']';
}

std::uint64_t bits(double d) {
    if (d == 0.0) d = 0.0;
    std::uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    return u;
}

}  // namespace

std::string Value::to_string() const {
    std::ostringstream os;
    switch (v_.index()) {
        case 0:
            format_double(os, std::get<double>(v_));
            break;
        case 1: {
            std::size_t offset = 0;
            format_array(os, std::get<Array>(v_), 0, offset);
            break;
        }
        case 2:
            os << (std::get<bool>(v_) ? "true" : "false");
            break;
        default:
            os << std::get<std::int64_t>(v_);
    }
    return os.str();
}

bool bitwise_equal(const Value& a, const Value& b) {
    if (a.is_bool() || b.is_bool()) return a.is_bool() && b.is_bool() && a.as_bool() == b.as_bool();
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (bits(a.element(i)) != bits(b.element(i))) return false;
    return true;
}

bool all_close(const Value& a, const Value& b, double rtol, double atol) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a.element(i), y = b.element(i);
        if (!(std::abs(x - y) <= atol + rtol * std::abs(y))) return false;
    }
    return true;
}

}  // namespace adjoint
