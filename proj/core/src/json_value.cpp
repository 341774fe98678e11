#include <json.hpp>

#include "adjoint/diagnostic.hpp"
#include "adjoint/value.hpp"

namespace adjoint {
namespace {

using nlohmann::json;

void flatten(const json& j, std::size_t depth, Shape& shape, std::vector<double>& data) {
    if (j.is_array()) {
        if (depth == shape.size()) {
            if (!data.empty()) throw Error("array is not rectangular");
            shape.push_back(j.size());
        } else if (shape[depth] != j.size()) {
            throw Error("array is not rectangular");
        }
        if (j.empty()) throw Error("empty arrays are not supported");
        for (const auto& e : j) flatten(e, depth + 1, shape, data);
        return;
    }
    if (!j.is_number()) throw Error("array elements must be numbers");
    if (depth != shape.size()) throw Error("array is not rectangular");
    data.push_back(j.get<double>());
}

Value from(const json& j) {
    if (j.is_boolean()) return Value(j.get<bool>());
    if (j.is_number_integer()) return Value(j.get<std::int64_t>());
    if (j.is_number()) return Value(j.get<double>());
    if (j.is_array()) {
        Shape shape;
        std::vector<double> data;
        flatten(j, 0, shape, data);
        return Value::array(std::move(shape), std::move(data));
    }
    throw Error("expected a number, boolean or array, got " + j.dump());
}

json parse(std::string_view text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace

Value value_from_json(std::string_view text) { return from(parse(text)); }

std::vector<Value> args_from_json(std::string_view text) {
    json j = parse(text);
    if (!j.is_array()) throw Error("arguments must be a JSON array");
    std::vector<Value> out;
    for (const auto& e : j) out.push_back(from(e));
    return out;
}

}  // namespace adjoint
