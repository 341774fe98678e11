#pragma once

#include <optional>
#include <string_view>

#include "adjoint/value.hpp"

/// Numeric kernels behind the TSL intrinsics. Plain loops, float64, row-major,
/// trailing-axis broadcasting.
namespace adjoint::kernels {

/// Throws adjoint::Error naming both shapes when they do not broadcast.
Shape broadcast_shapes(const Shape& a, const Shape& b);
/// Replicates `v` to `target`; `v`'s shape must broadcast to `target`.
Value broadcast_to(const Value& v, const Shape& target);

/// Arithmetic ("+", "-", "*", "/") and comparisons ("<", ">", "<=", ">=", "==", "!=").
Value binary(std::string_view op, const Value& a, const Value& b);
Value negate(const Value& a);

Value tanh(const Value& x);
Value exp(const Value& x);
Value log(const Value& x);

/// Rank <= 2 matrix/vector product; a number operand multiplies element-wise.
Value dot(const Value& a, const Value& b);
/// Reduction over one axis (negative counts from the end) or all axes.
Value sum(const Value& x, std::optional<int> axis = std::nullopt, bool keepdims = false);
Value mean(const Value& x);
Value minimum(const Value& a, const Value& b);

/// Sums `y` over every axis created or stretched by broadcasting so the result
/// has exactly `like`'s shape.
Value unbroadcast(const Value& y, const Value& like);
/// Gradient accumulation; an absent lhs acts as zero.
Value add_grad(const std::optional<Value>& a, const Value& b);
Value zeros_like(const Value& x);

Value sum_grad(const Value& g, const Value& x, std::optional<int> axis, bool keepdims);
Value mean_grad(const Value& g, const Value& x);
Value grad_dot_lhs(const Value& g, const Value& a, const Value& b);
Value grad_dot_rhs(const Value& g, const Value& a, const Value& b);

/// Flat row-major element access; negative indices count from the end.
Value index_get(const Value& x, std::int64_t i);
void index_set(Value& x, std::int64_t i, const Value& v);
Value index_grad(const Value& g, const Value& x, std::int64_t i);

}  // namespace adjoint::kernels
