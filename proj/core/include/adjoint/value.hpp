#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace adjoint {

using Shape = std::vector<std::size_t>;

/// Dense row-major float64 array. Rank >= 1.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    Array(Shape s, std::vector<double> d);
    Array(Shape s, double fill);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Runtime value of TSL: float scalar, n-d array, boolean or integer.
class Value {
  public:
    using Storage = std::variant<double, Array, bool, std::int64_t>;

    Value() : v_(0.0) {}
    Value(double d) : v_(d) {}
    Value(Array a);
    Value(bool b) : v_(b) {}
    Value(std::int64_t i) : v_(i) {}
    Value(int i) : v_(static_cast<std::int64_t>(i)) {}

    static Value array(Shape shape, std::vector<double> data);
    static Value vector(std::initializer_list<double> data);
    static Value matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    bool is_scalar() const { return std::holds_alternative<double>(v_); }
    bool is_array() const { return std::holds_alternative<Array>(v_); }
    bool is_bool() const { return std::holds_alternative<bool>(v_); }
    bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
    /// Scalar or Int: usable as a float in arithmetic.
    bool is_number() const { return is_scalar() || is_int(); }

    double as_double() const;  // Scalar or Int
    std::int64_t as_int() const;  // Int, or Scalar with integral value
    bool as_bool() const;
    const Array& as_array() const;
    Array& as_array();

    /// Shape for broadcasting; numbers have the empty shape.
    Shape shape() const;
    std::size_t size() const;
    /// Flat element access for numbers and arrays.
    double element(std::size_t i) const;

    const Storage& storage() const { return v_; }
    std::string type_name() const;
    std::string to_string() const;

  private:
    Storage v_;
};

/// Bitwise equality of the float payloads (+0.0 and -0.0 compare equal).
bool bitwise_equal(const Value& a, const Value& b);

/// Element-wise closeness for tests: |a-b| <= atol + rtol*|b|, shapes equal.
bool all_close(const Value& a, const Value& b, double rtol, double atol);

/// JSON number, boolean or rectangular nested array of numbers. Integer
/// literals become Int values unless they sit inside an array.
Value value_from_json(std::string_view text);
/// JSON array of argument values.
std::vector<Value> args_from_json(std::string_view text);

}  // namespace adjoint
