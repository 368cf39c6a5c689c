#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>

#include "unitconcepts/datagen.hpp"
#include "unitconcepts/errors.hpp"

using namespace uc;
namespace fs = std::filesystem;

namespace {

DatasetConfig small(int per_class) {
    DatasetConfig c;
    c.n_train = per_class;
    c.n_val = 1;
    c.n_test = 2;
    c.seed = 11;
    return c;
}

struct Centroid {
    double x = 0, y = 0;
};

std::vector<Centroid> centroids(const CompositeClass& cls, const BackgroundParams& bg, int res) {
    std::vector<Centroid> out;
    for (const auto& m : render_masks(cls, bg, res)) {
        double s = 0, sx = 0, sy = 0;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                const double v = m[static_cast<std::size_t>(y * res + x)];
                s += v;
                sx += v * x;
                sy += v * y;
            }
        out.push_back({sx / s, sy / s});
    }
    return out;
}

double spread(const std::vector<Centroid>& c, bool along_x) {
    double lo = 1e9, hi = -1e9;
    for (const auto& p : c) {
        lo = std::min(lo, along_x ? p.x : p.y);
        hi = std::max(hi, along_x ? p.x : p.y);
    }
    return hi - lo;
}

} // namespace

TEST_CASE("default dataset has uniform labels and split counts", "[datagen]") {
    const auto ds = generate_default_dataset(small(3));
    REQUIRE(ds.items.size() == 18 * 6);
    CHECK(ds.count(Split::Train) == 54);
    CHECK(ds.count(Split::Val) == 18);
    CHECK(ds.count(Split::Test) == 36);
    std::map<int, int> hist;
    for (const auto& it : ds.items) {
        hist[gt_label(it).index()]++;
        CHECK(it.image.height() == 64);
        CHECK(it.color_used == kMonochromeInk);
    }
    for (int c = 0; c < 18; ++c) CHECK(hist[c] == 6);
}

TEST_CASE("generation is deterministic and thread-count independent", "[datagen]") {
    auto a = small(2);
    a.threads = 1;
    auto b = small(2);
    b.threads = 3;
    const auto da = generate_default_dataset(a), db = generate_default_dataset(b);
    REQUIRE(da.items.size() == db.items.size());
    for (std::size_t i = 0; i < da.items.size(); ++i) {
        CHECK(da.items[i].image == db.items[i].image);
        CHECK(da.items[i].item_id == db.items[i].item_id);
    }
    auto c = small(2);
    c.seed = 12;
    CHECK_FALSE(generate_default_dataset(c).items[0].image == da.items[0].image);
}

TEST_CASE("stroke changes leave shape centroids within a pixel", "[datagen]") {
    Rng rng = make_rng(8, {2});
    for (int trial = 0; trial < 20; ++trial) {
        const auto bg = sample_background(rng);
        for (const auto* shape : {"rectangle", "oval", "polygon"}) {
            const std::string base = std::string("ring-") + shape;
            const auto clean = centroids(CompositeClass::parse(base + "-clean"), bg, 64);
            const auto fuzzy = centroids(CompositeClass::parse(base + "-fuzzy"), bg, 64);
            REQUIRE(clean.size() == fuzzy.size());
            for (std::size_t i = 0; i < clean.size(); ++i)
                CHECK(std::hypot(clean[i].x - fuzzy[i].x, clean[i].y - fuzzy[i].y) <= 1.0);
        }
    }
}

TEST_CASE("layouts place shape centroids on a line or a ring", "[datagen]") {
    Rng rng = make_rng(5, {1});
    for (int trial = 0; trial < 20; ++trial) {
        const auto bg = sample_background(rng);
        REQUIRE(bg.n_shapes >= kMinShapes);
        REQUIRE(bg.n_shapes <= kMaxShapes);
        const auto h = centroids(CompositeClass::parse("horizontal-oval-clean"), bg, 64);
        const auto v = centroids(CompositeClass::parse("vertical-oval-clean"), bg, 64);
        const auto r = centroids(CompositeClass::parse("ring-oval-clean"), bg, 64);
        REQUIRE(static_cast<int>(h.size()) == bg.n_shapes);
        CHECK(spread(h, false) < 0.1 * 64);
        CHECK(spread(h, true) > 0.4 * 64);
        CHECK(spread(v, true) < 0.1 * 64);
        CHECK(spread(v, false) > 0.4 * 64);
        double cx = 0, cy = 0;
        for (const auto& p : r) {
            cx += p.x / r.size();
            cy += p.y / r.size();
        }
        for (const auto& p : r) {
            const double d = std::hypot(p.x - cx, p.y - cy) / 64;
            CHECK(d > kMinRingRadius - 0.08);
            CHECK(d < kMaxRingRadius + 0.08);
        }
    }
}

TEST_CASE("minimal pairs share a background across classes", "[datagen]") {
    const auto pairs = generate_minimal_pairs(3, 9, ColorSpec::monochrome());
    REQUIRE(pairs.rows() == 3);
    REQUIRE(pairs.dataset.items.size() == 54);
    for (std::size_t row = 0; row < 3; ++row) {
        const auto& a = pairs.at(row, CompositeClass::parse("horizontal-rectangle-clean"));
        const auto& b = pairs.at(row, CompositeClass::parse("horizontal-rectangle-fuzzy"));
        const auto& c = pairs.at(row, CompositeClass::parse("vertical-rectangle-clean"));
        CHECK(a.background == b.background);
        CHECK(a.background == c.background);
        CHECK(a.background == pairs.backgrounds[row]);
        CHECK(gt_label(b) == CompositeClass::parse("horizontal-rectangle-fuzzy"));
        // Stroke alone changes only the outline; layout moves the shapes.
        std::size_t diff_stroke = 0, diff_layout = 0;
        for (std::size_t i = 0; i < a.image.bytes().size(); ++i) {
            diff_stroke += a.image.bytes()[i] != b.image.bytes()[i];
            diff_layout += a.image.bytes()[i] != c.image.bytes()[i];
        }
        CHECK(diff_stroke > 0);
        CHECK(diff_stroke < diff_layout);
    }
    CHECK_FALSE(pairs.backgrounds[0] == pairs.backgrounds[1]);
}

TEST_CASE("correlated colors follow the pairing probability", "[datagen]") {
    auto cfg = small(50);
    const auto ds = generate_colors_dataset(0.9, cfg);
    const auto spec = ColorSpec::correlated(0.9);
    int paired = 0, n = 0;
    for (const auto& it : ds.items) {
        ++n;
        if (it.color_used == spec.color_for(gt_label(it))) ++paired;
    }
    const double frac = static_cast<double>(paired) / n;
    CHECK(std::abs(frac - 0.9) < 4 * std::sqrt(0.9 * 0.1 / n));

    // p = 1/18: colors are uniform over the palette. Chi-square with 17 dof,
    // critical value at 0.999 is 40.79.
    const auto rnd = generate_colors_dataset(1.0 / 18, cfg);
    std::map<std::string, int> counts;
    for (const auto& it : rnd.items) counts[to_hex(it.color_used)]++;
    CHECK(counts.size() == 18);
    const double expected = static_cast<double>(rnd.items.size()) / 18;
    double chi2 = 0;
    for (const auto& [k, v] : counts) chi2 += (v - expected) * (v - expected) / expected;
    CHECK(chi2 < 40.79);

    const auto one = generate_colors_dataset(1.0, small(2));
    for (const auto& it : one.items) CHECK(it.color_used == ColorSpec::correlated(1.0).color_for(gt_label(it)));

    CHECK_THROWS_AS(generate_colors_dataset(0.01, small(1)), ConfigError);
    CHECK_THROWS_AS(generate_colors_dataset(1.5, small(1)), ConfigError);
}

TEST_CASE("palette pairing is a bijection of distinct colors", "[datagen]") {
    const auto spec = ColorSpec::correlated(0.5);
    std::map<std::string, int> seen;
    for (const auto& c : all_classes()) seen[to_hex(spec.color_for(c))]++;
    CHECK(seen.size() == 18);
    CHECK(parse_hex(to_hex(Rgb{1, 128, 255})) == Rgb{1, 128, 255});
}

TEST_CASE("datasets and minimal pairs survive a save/load round trip", "[datagen]") {
    const auto dir = fs::temp_directory_path() / "uc_test_datagen";
    fs::remove_all(dir);
    const auto ds = generate_colors_dataset(0.9, small(1));
    save_dataset(ds, dir / "ds");
    const auto back = load_dataset(dir / "ds");
    REQUIRE(back.items.size() == ds.items.size());
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        CHECK(back.items[i].image == ds.items[i].image);
        CHECK(back.items[i].color_used == ds.items[i].color_used);
        CHECK(back.items[i].split == ds.items[i].split);
        CHECK(back.items[i].background == ds.items[i].background);
    }
    const auto pairs = generate_minimal_pairs(2, 3, ColorSpec::correlated(0.9));
    save_minimal_pairs(pairs, dir / "mp");
    const auto mp = load_minimal_pairs(dir / "mp");
    CHECK(mp.backgrounds == pairs.backgrounds);
    CHECK(mp.dataset.items.back().image == pairs.dataset.items.back().image);
}

TEST_CASE("renderer rejects tiny resolutions", "[datagen]") {
    Rng rng = make_rng(1, {});
    const auto bg = sample_background(rng);
    CHECK_THROWS_AS(render(all_classes()[0], bg, ColorSpec::monochrome(), 16), RenderError);
    const auto img = render(all_classes()[0], bg, Rgb{255, 0, 0}, 32);
    bool red = false;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) red |= img.at(y, x, 0) == 255 && img.at(y, x, 1) == 0;
    CHECK(red);
}
