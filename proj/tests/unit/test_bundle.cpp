#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "unitconcepts/errors.hpp"
#include "unitconcepts/bundle.hpp"

using namespace uc;
namespace fs = std::filesystem;

namespace {

RepresentationBundle sample_bundle() {
    RepresentationBundle b;
    b.encoder = "test-encoder";
    for (int i = 0; i < 36; ++i)
        b.labels.push_back({static_cast<std::uint64_t>(100 + i), CompositeClass::from_index(i % 18),
                            Rgb{static_cast<std::uint8_t>(i), 2, 3}, i < 18 ? Split::Train : Split::Test});
    MatrixF a(36, 4), f(36, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.25f * static_cast<float>(i) - 3.0f;
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(i % 7) / 3.0f;
    b.layers.push_back({"conv.1", a});
    b.layers.push_back({"final", f});
    return b;
}

fs::path fresh(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("uc_test_bundle_" + name);
    fs::remove_all(p);
    save_bundle(sample_bundle(), p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

void replace_once(const fs::path& p, const std::string& from, const std::string& to) {
    auto s = slurp(p);
    const auto at = s.find(from);
    REQUIRE(at != std::string::npos);
    s.replace(at, from.size(), to);
    spit(p, s);
}

} // namespace

TEST_CASE("bundles round-trip bit-exactly", "[bundle]") {
    const auto dir = fresh("rt");
    const auto b = import_bundle(dir);
    const auto ref = sample_bundle();
    CHECK(b.encoder == "test-encoder");
    REQUIRE(b.n_items() == 36);
    CHECK(b.layer_names() == std::vector<std::string>{"conv.1", "final"});
    CHECK(b.layer("conv.1") == ref.layers[0].data);
    CHECK(b.final_layer() == ref.layers[1].data);
    CHECK(b.labels[20].cls == ref.labels[20].cls);
    CHECK(b.labels[20].color == ref.labels[20].color);
    CHECK(b.labels[20].split == Split::Test);
    CHECK(b.labels[20].item_id == 120);
    CHECK_THROWS_AS(b.layer("nope"), InputError);

    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m.at("format") == "unitconcepts-bundle");
    CHECK(m.at("dtype") == "float32");
    CHECK(m.at("layers").at(0).at("file") == "layers/conv.1.cbm");
    CHECK(m.at("layers").at(0).at("dim") == 4);
    CHECK(slurp(dir / "labels.csv").rfind("item_id,class,layout,shape,stroke,color,split\n", 0) == 0);
}

TEST_CASE("labels with CRLF line endings are accepted", "[bundle]") {
    const auto dir = fresh("crlf");
    std::string text = slurp(dir / "labels.csv"), crlf;
    for (char c : text) crlf += c == '\n' ? std::string("\r\n") : std::string(1, c);
    std::ofstream(dir / "labels.csv", std::ios::binary) << crlf;
    const auto b = import_bundle(dir);
    CHECK(b.labels[35].split == Split::Test);
    CHECK(b.labels[35].cls == sample_bundle().labels[35].cls);
}

TEST_CASE("truncated layer files are rejected naming the layer", "[bundle]") {
    const auto dir = fresh("trunc");
    fs::resize_file(dir / "layers/final.cbm", fs::file_size(dir / "layers/final.cbm") - 4);
    try {
        import_bundle(dir);
        FAIL("import should fail");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("final") != std::string::npos);
    }
}

TEST_CASE("manifest and matrix disagreements are rejected", "[bundle]") {
    SECTION("column count") {
        const auto dir = fresh("dim");
        replace_once(dir / "manifest.json", "\"dim\": 3", "\"dim\": 5");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("row count") {
        const auto dir = fresh("rows");
        write_cbm(dir / "layers/final.cbm", MatrixF(MatrixF::Zero(35, 3)));
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("float64 payload") {
        const auto dir = fresh("dtype");
        write_cbm(dir / "layers/final.cbm", Matrix(Matrix::Zero(36, 3)));
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("path escapes") {
        const auto dir = fresh("path");
        replace_once(dir / "manifest.json", "layers/final.cbm", "../final.cbm");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("not a manifest") {
        const auto dir = fresh("json");
        spit(dir / "manifest.json", "{");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
}

TEST_CASE("non-finite values are data errors", "[bundle]") {
    const auto dir = fresh("nan");
    MatrixF f = MatrixF::Zero(36, 3);
    f(4, 1) = std::numeric_limits<float>::quiet_NaN();
    write_cbm(dir / "layers/final.cbm", f);
    CHECK_THROWS_AS(import_bundle(dir), DataError);
    auto b = sample_bundle();
    b.layers[0].data(0, 0) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(save_bundle(b, dir), DataError);
}

TEST_CASE("labels are validated", "[bundle]") {
    SECTION("concept columns must agree with the class") {
        const auto dir = fresh("concepts");
        replace_once(dir / "labels.csv", "horizontal-rectangle-clean,horizontal,rectangle,clean",
                     "horizontal-rectangle-clean,vertical,rectangle,clean");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("duplicate ids") {
        const auto dir = fresh("dup");
        replace_once(dir / "labels.csv", "\n101,", "\n100,");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("row count") {
        const auto dir = fresh("short");
        auto s = slurp(dir / "labels.csv");
        s.erase(s.rfind('\n', s.size() - 2) + 1);
        spit(dir / "labels.csv", s);
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
    SECTION("unknown split") {
        const auto dir = fresh("split");
        replace_once(dir / "labels.csv", ",train\n", ",holdout\n");
        CHECK_THROWS_AS(import_bundle(dir), FormatError);
    }
}

TEST_CASE("missing bundle directory is an IO error", "[bundle]") {
    CHECK_THROWS_AS(import_bundle(fs::temp_directory_path() / "uc_no_such_bundle"), IoError);
}
