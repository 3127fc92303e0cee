#pragma once

// Loading models by bundled name or file path, whatever their family.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mbp/finite_model.hpp"
#include "mbp/nbp.hpp"

namespace mbp {

using AnyModel = std::variant<FiniteTypeModel, NbpModel>;

/// Dispatches on the `model = finite | nbp` key. Throws ParseError.
AnyModel parse_model(std::string_view text);

/// Bundled model text by name, empty if unknown.
std::string_view bundled_text(std::string_view name);
std::vector<std::string> all_bundled_names();

/// A bundled name, or else a path to a model file. `text_out` receives the
/// source text (used for hashing run outputs).
AnyModel load_model(const std::string& name_or_path, std::string* text_out = nullptr);

const std::string& model_name(const AnyModel& model);

}  // namespace mbp
