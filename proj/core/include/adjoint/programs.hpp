#pragma once

#include <optional>
#include <string_view>
#include <vector>

namespace adjoint {

/// A program of the bundled corpus (corpus/*.tsl, compiled in).
struct CorpusProgram {
    std::string_view name;
    std::string_view source;
};

/// Sorted by name.
const std::vector<CorpusProgram>& corpus_programs();
std::optional<std::string_view> corpus_source(std::string_view name);

}  // namespace adjoint
