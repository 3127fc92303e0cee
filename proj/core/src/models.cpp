#include "mbp/models.hpp"

#include <fstream>
#include <sstream>

#include "mbp/error.hpp"
#include "text_util.hpp"

namespace mbp {

AnyModel parse_model(std::string_view text) {
    for (const auto& kv : detail::split_key_values(text)) {
        if (kv.malformed || kv.key != "model") continue;
        if (kv.value == "finite") return parse_finite_model(text);
        if (kv.value == "nbp") return parse_nbp_model(text);
        throw ParseError("unknown model family '" + std::string(kv.value) + "' (expected finite or nbp)", kv.line);
    }
    throw ParseError("missing 'model = finite | nbp' line", 0);
}

std::string_view bundled_text(std::string_view name) {
    const std::string_view finite = bundled_model_text(name);
    return finite.empty() ? bundled_nbp_text(name) : finite;
}

std::vector<std::string> all_bundled_names() {
    auto names = bundled_model_names();
    for (auto& n : bundled_nbp_names()) names.push_back(std::move(n));
    return names;
}

AnyModel load_model(const std::string& name_or_path, std::string* text_out) {
    std::string text(bundled_text(name_or_path));
    if (text.empty()) {
        std::ifstream in(name_or_path, std::ios::binary);
        if (!in) throw ParseError("no bundled model or readable file named '" + name_or_path + "'", 0);
        std::ostringstream os;
        os << in.rdbuf();
        text = os.str();
    }
    AnyModel model = parse_model(text);
    if (text_out != nullptr) *text_out = std::move(text);
    return model;
}

const std::string& model_name(const AnyModel& model) {
    return std::visit([](const auto& m) -> const std::string& { return m.name(); }, model);
}

}  // namespace mbp
