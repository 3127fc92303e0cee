#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mbp/models.hpp"

using namespace mbp;

TEST_CASE("shipped model files match the bundled definitions") {
    const std::filesystem::path dir = MBP_MODELS_DIR;
    for (const auto& name : all_bundled_names()) {
        INFO(name);
        std::ifstream in(dir / (name + ".model"), std::ios::binary);
        REQUIRE(in.good());
        std::ostringstream os;
        os << in.rdbuf();
        CHECK(os.str() == bundled_text(name));
        const AnyModel m = load_model((dir / (name + ".model")).string());
        CHECK(model_name(m) == name);
    }
}

TEST_CASE("model family dispatch") {
    CHECK(std::holds_alternative<FiniteTypeModel>(load_model("model-3t")));
    CHECK(std::holds_alternative<NbpModel>(load_model("nbp-box")));
    CHECK_THROWS_AS(parse_model("name = x\n"), ParseError);
    CHECK_THROWS_AS(parse_model("model = quantum\n"), ParseError);
}
