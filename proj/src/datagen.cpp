#include "unitconcepts/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "parallel.hpp"
#include "unitconcepts/errors.hpp"

namespace uc {

namespace {

using json = nlohmann::json;

constexpr int kOutlinePoints = 60;
constexpr int kFuzzControlPoints = 60;
constexpr double kSizeToRadius = 1.0;
constexpr int kSupersample = 4;
constexpr double kRectangleAspect = 0.35;
constexpr double kOvalAspect = 0.6;
constexpr double kLineStart = 0.15;
constexpr double kLineEnd = 0.85;
constexpr int kDatasetFormatVersion = 1;

// Stream keys for derive_seed.
constexpr std::uint64_t kItemStream = 0x17e3;
constexpr std::uint64_t kPairRowStream = 0xa1a5;
constexpr std::uint64_t kFuzzStream = 0xf022;

struct Point {
    double x, y;
};

std::vector<Point> anchors(Layout layout, const BackgroundParams& bg) {
    std::vector<Point> out;
    out.reserve(bg.shapes.size());
    const int n = static_cast<int>(bg.shapes.size());
    for (int i = 0; i < n; ++i) {
        const auto& s = bg.shapes[i];
        Point p{};
        const double along = n > 1 ? kLineStart + (kLineEnd - kLineStart) * i / (n - 1) : 0.5;
        switch (layout) {
        case Layout::Horizontal: p = {along, 0.5 + bg.line_offset}; break;
        case Layout::Vertical: p = {0.5 + bg.line_offset, along}; break;
        case Layout::Ring: {
            const double a = bg.ring_phase + 2.0 * std::numbers::pi * i / n;
            p = {0.5 + bg.ring_radius * std::cos(a), 0.5 + bg.ring_radius * std::sin(a)};
            break;
        }
        }
        out.push_back({p.x + s.jitter_x, p.y + s.jitter_y});
    }
    return out;
}

// Outline in local coordinates (unit = half the shape size), before rotation.
std::vector<Point> base_outline(Shape shape) {
    std::vector<Point> pts;
    pts.reserve(kOutlinePoints);
    switch (shape) {
    case Shape::Oval:
        for (int k = 0; k < kOutlinePoints; ++k) {
            const double t = 2.0 * std::numbers::pi * k / kOutlinePoints;
            pts.push_back({std::cos(t), kOvalAspect * std::sin(t)});
        }
        break;
    case Shape::Rectangle:
    case Shape::Polygon: {
        std::vector<Point> corners;
        if (shape == Shape::Rectangle) {
            const double b = kRectangleAspect;
            corners = {{1, b}, {-1, b}, {-1, -b}, {1, -b}};
        } else {
            for (int v = 0; v < 5; ++v) {
                const double a = -std::numbers::pi / 2 + 2.0 * std::numbers::pi * v / 5;
                corners.push_back({std::cos(a), std::sin(a)});
            }
        }
        // Walk the perimeter at uniform arc length.
        std::vector<double> cum{0.0};
        for (std::size_t i = 0; i < corners.size(); ++i) {
            const auto& a = corners[i];
            const auto& b = corners[(i + 1) % corners.size()];
            cum.push_back(cum.back() + std::hypot(b.x - a.x, b.y - a.y));
        }
        const double perimeter = cum.back();
        std::size_t edge = 0;
        for (int k = 0; k < kOutlinePoints; ++k) {
            const double t = perimeter * k / kOutlinePoints;
            while (cum[edge + 1] < t) ++edge;
            const auto& a = corners[edge];
            const auto& b = corners[(edge + 1) % corners.size()];
            const double f = (t - cum[edge]) / (cum[edge + 1] - cum[edge]);
            pts.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)});
        }
        break;
    }
    }
    return pts;
}

// Canvas-fraction outline of shape i. Fuzzy strokes displace the outline
// radially by N(0, kFuzzSigma) at kFuzzControlPoints evenly spaced points,
// interpolated along the outline; the noise depends only on the background.
std::vector<Point> shape_outline(const CompositeClass& cls, const BackgroundParams& bg, std::size_t i, Point anchor) {
    const auto& s = bg.shapes[i];
    const double radius = s.size * kSizeToRadius;
    const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
    auto pts = base_outline(cls.shape());

    std::array<double, kFuzzControlPoints> bump{};
    if (cls.stroke() == Stroke::Fuzzy) {
        Rng fuzz = make_rng(bg.seed, {kFuzzStream, i});
        for (auto& b : bump) b = kFuzzSigma * std::abs(normal(fuzz));
    }
    for (std::size_t k = 0; k < pts.size(); ++k) {
        auto& p = pts[k];
        double x = p.x * radius, y = p.y * radius;
        if (cls.stroke() == Stroke::Fuzzy) {
            const double u = static_cast<double>(k) * kFuzzControlPoints / static_cast<double>(pts.size());
            const auto k0 = static_cast<std::size_t>(u);
            const double f = 0.5 - 0.5 * std::cos(std::numbers::pi * (u - static_cast<double>(k0)));
            const double d = (1.0 - f) * bump[k0] + f * bump[(k0 + 1) % kFuzzControlPoints];
            const double r = std::hypot(x, y);
            const double r_new = std::max(0.3 * r, r + d);
            x *= r_new / r;
            y *= r_new / r;
        }
        p = {anchor.x + c * x - sn * y, anchor.y + sn * x + c * y};
    }
    return pts;
}

bool inside(const std::vector<Point>& poly, double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
}

// Coverage of one polygon over the pixel grid; calls sink(index, alpha) for
// pixels with non-zero coverage.
template <typename Sink>
void rasterize(const std::vector<Point>& outline, int res, Sink&& sink) {
    std::vector<Point> poly(outline.size());
    double minx = 1e9, miny = 1e9, maxx = -1e9, maxy = -1e9;
    for (std::size_t k = 0; k < outline.size(); ++k) {
        poly[k] = {outline[k].x * res, outline[k].y * res};
        minx = std::min(minx, poly[k].x);
        maxx = std::max(maxx, poly[k].x);
        miny = std::min(miny, poly[k].y);
        maxy = std::max(maxy, poly[k].y);
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
    const int x1 = std::min(res - 1, static_cast<int>(std::ceil(maxx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
    const int y1 = std::min(res - 1, static_cast<int>(std::ceil(maxy)));
    constexpr double inv = 1.0 / kSupersample;
    for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy)
                for (int sx = 0; sx < kSupersample; ++sx)
                    hits += inside(poly, px + (sx + 0.5) * inv, py + (sy + 0.5) * inv);
            if (hits) sink(static_cast<std::size_t>(py) * res + px, static_cast<double>(hits) / (kSupersample * kSupersample));
        }
    }
}

void check_resolution(int resolution) {
    if (resolution < kMinResolution)
        throw RenderError("resolution " + std::to_string(resolution) + " below minimum " + std::to_string(kMinResolution));
}

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const double m = v - c;
    auto q = [](double t) { return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)); };
    return {q(r + m), q(g + m), q(b + m)};
}

} // namespace

BackgroundParams sample_background(Rng& rng) {
    BackgroundParams bg;
    bg.seed = rng();
    bg.n_shapes = static_cast<int>(uniform_int(rng, kMinShapes, kMaxShapes));
    bg.shapes.reserve(bg.n_shapes);
    for (int i = 0; i < bg.n_shapes; ++i) {
        ShapeParams s;
        s.jitter_x = uniform(rng, -kMaxJitter, kMaxJitter);
        s.jitter_y = uniform(rng, -kMaxJitter, kMaxJitter);
        s.size = uniform(rng, kMinShapeSize, kMaxShapeSize);
        s.rotation = uniform(rng, -kMaxRotation, kMaxRotation);
        bg.shapes.push_back(s);
    }
    bg.line_offset = uniform(rng, -kMaxLineOffset, kMaxLineOffset);
    bg.ring_radius = uniform(rng, kMinRingRadius, kMaxRingRadius);
    bg.ring_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return bg;
}

json to_json(const BackgroundParams& bg) {
    json shapes = json::array();
    for (const auto& s : bg.shapes)
        shapes.push_back({{"jitter_x", s.jitter_x}, {"jitter_y", s.jitter_y}, {"size", s.size}, {"rotation", s.rotation}});
    json j{{"seed", bg.seed},
           {"n_shapes", bg.n_shapes},
           {"shapes", std::move(shapes)},
           {"line_offset", bg.line_offset},
           {"ring_radius", bg.ring_radius},
           {"ring_phase", bg.ring_phase}};
    j["color_index"] = bg.color_index ? json(*bg.color_index) : json(nullptr);
    return j;
}

BackgroundParams background_from_json(const json& j) {
    try {
        BackgroundParams bg;
        bg.seed = j.at("seed").get<std::uint64_t>();
        bg.n_shapes = j.at("n_shapes").get<int>();
        for (const auto& s : j.at("shapes"))
            bg.shapes.push_back({s.at("jitter_x").get<double>(), s.at("jitter_y").get<double>(),
                                 s.at("size").get<double>(), s.at("rotation").get<double>()});
        bg.line_offset = j.at("line_offset").get<double>();
        bg.ring_radius = j.at("ring_radius").get<double>();
        bg.ring_phase = j.at("ring_phase").get<double>();
        if (!j.at("color_index").is_null()) bg.color_index = j.at("color_index").get<int>();
        if (static_cast<int>(bg.shapes.size()) != bg.n_shapes) throw FormatError("n_shapes does not match shapes");
        return bg;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad background record: ") + e.what());
    }
}

const std::array<Rgb, kNumClasses>& default_palette() {
    static const auto palette = [] {
        std::array<Rgb, kNumClasses> p{};
        for (int i = 0; i < kNumClasses; ++i) p[i] = hsv_to_rgb(20.0 * i, 0.85, i % 2 ? 0.6 : 0.95);
        return p;
    }();
    return palette;
}

ColorSpec ColorSpec::monochrome() {
    ColorSpec s;
    s.palette = default_palette();
    for (int i = 0; i < kNumClasses; ++i) s.pairing[i] = i;
    return s;
}

ColorSpec ColorSpec::correlated(double p) {
    constexpr double kRand = 1.0 / kNumClasses;
    if (!(p >= kRand - 1e-12 && p <= 1.0))
        throw ConfigError("color correlation p=" + std::to_string(p) + " outside [1/18, 1]");
    ColorSpec s = monochrome();
    s.mode = Mode::Correlated;
    s.p = p;
    return s;
}

Rgb ColorSpec::color_for(const CompositeClass& c) const noexcept {
    return mode == Mode::DefaultMonochrome ? kMonochromeInk : palette[pairing[c.index()]];
}

json to_json(const ColorSpec& spec) {
    json palette = json::array();
    for (const auto& c : spec.palette) palette.push_back(to_hex(c));
    return {{"mode", spec.mode == ColorSpec::Mode::DefaultMonochrome ? "monochrome" : "correlated"},
            {"p", spec.p},
            {"palette", std::move(palette)},
            {"pairing", spec.pairing}};
}

ColorSpec color_spec_from_json(const json& j) {
    try {
        const auto mode = j.at("mode").get<std::string>();
        ColorSpec s = mode == "monochrome" ? ColorSpec::monochrome() : ColorSpec::correlated(j.at("p").get<double>());
        if (mode != "monochrome" && mode != "correlated") throw FormatError("unknown color mode '" + mode + "'");
        const auto& pal = j.at("palette");
        if (pal.size() != kNumClasses) throw FormatError("palette must have 18 colors");
        for (int i = 0; i < kNumClasses; ++i) s.palette[i] = parse_hex(pal[i].get<std::string>());
        s.pairing = j.at("pairing").get<std::array<int, kNumClasses>>();
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad color spec: ") + e.what());
    }
}

std::vector<std::vector<float>> render_masks(const CompositeClass& cls, const BackgroundParams& bg, int resolution) {
    check_resolution(resolution);
    const auto pts = anchors(cls.layout(), bg);
    std::vector<std::vector<float>> masks;
    for (std::size_t i = 0; i < bg.shapes.size(); ++i) {
        std::vector<float> m(static_cast<std::size_t>(resolution) * resolution, 0.0f);
        rasterize(shape_outline(cls, bg, i, pts[i]), resolution,
                  [&](std::size_t idx, double a) { m[idx] = static_cast<float>(a); });
        masks.push_back(std::move(m));
    }
    return masks;
}

Image render(const CompositeClass& cls, const BackgroundParams& bg, Rgb color, int resolution) {
    check_resolution(resolution);
    const auto npix = static_cast<std::size_t>(resolution) * resolution;
    std::vector<double> canvas(npix * 3, 1.0);
    const double ink[3] = {color.r / 255.0, color.g / 255.0, color.b / 255.0};
    const auto pts = anchors(cls.layout(), bg);
    for (std::size_t i = 0; i < bg.shapes.size(); ++i) {
        rasterize(shape_outline(cls, bg, i, pts[i]), resolution, [&](std::size_t idx, double a) {
            for (int ch = 0; ch < 3; ++ch) canvas[idx * 3 + ch] = canvas[idx * 3 + ch] * (1.0 - a) + ink[ch] * a;
        });
    }
    Image img(resolution, resolution);
    for (std::size_t k = 0; k < canvas.size(); ++k)
        img.bytes()[k] = static_cast<std::uint8_t>(std::lround(std::clamp(canvas[k], 0.0, 1.0) * 255.0));
    return img;
}

Image render(const CompositeClass& cls, const BackgroundParams& bg, const ColorSpec& colors, int resolution) {
    const Rgb color = bg.color_index ? colors.palette.at(static_cast<std::size_t>(*bg.color_index)) : colors.color_for(cls);
    return render(cls, bg, color, resolution);
}

std::string_view to_string(Split s) noexcept {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return {};
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + std::string(s) + "'");
}

CompositeClass gt_label(const DatasetItem& item) {
    if (!item.cls) throw MetadataError("item " + std::to_string(item.item_id) + " carries no class metadata");
    return *item.cls;
}

std::string_view to_string(DatasetKind k) noexcept {
    switch (k) {
    case DatasetKind::Default: return "default";
    case DatasetKind::Colors: return "colors";
    case DatasetKind::MinimalPairs: return "minimal-pairs";
    }
    return {};
}

std::size_t Dataset::count(Split s) const noexcept {
    return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [s](const auto& it) { return it.split == s; }));
}

namespace {

Dataset generate_items(DatasetConfig config) {
    if (config.n_train < 1) throw ConfigError("n_train must be >= 1");
    if (config.n_val < 0 || config.n_test < 0) throw ConfigError("split counts must be non-negative");
    check_resolution(config.resolution);

    Dataset ds;
    const std::array<std::pair<Split, int>, 3> plan{
        {{Split::Train, config.n_train}, {Split::Val, config.n_val}, {Split::Test, config.n_test}}};
    for (const auto& [split, n] : plan)
        for (int rep = 0; rep < n; ++rep)
            for (const auto& c : all_classes()) {
                DatasetItem it;
                it.item_id = ds.items.size();
                it.cls = c;
                it.split = split;
                ds.items.push_back(std::move(it));
            }

    const bool correlated = config.colors.mode == ColorSpec::Mode::Correlated;
    detail::parallel_for(ds.items.size(), config.threads, [&](std::size_t i) {
        auto& it = ds.items[i];
        Rng rng = make_rng(config.seed, {kItemStream, it.item_id});
        it.background = sample_background(rng);
        if (correlated) {
            const int paired = config.colors.pairing[it.cls->index()];
            int color = paired;
            if (uniform(rng, 0.0, 1.0) >= config.colors.p) {
                const int other = static_cast<int>(uniform_int(rng, 0, kNumClasses - 2));
                color = other >= paired ? other + 1 : other;
            }
            it.background.color_index = color;
        }
        it.image = render(*it.cls, it.background, config.colors, config.resolution);
        it.color_used = it.background.color_index ? config.colors.palette[*it.background.color_index]
                                                  : config.colors.color_for(*it.cls);
    });
    ds.config = std::move(config);
    return ds;
}

std::string png_name(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/%06llu.png", static_cast<unsigned long long>(id));
    return buf;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

DatasetKind parse_kind(const std::string& s) {
    for (auto k : {DatasetKind::Default, DatasetKind::Colors, DatasetKind::MinimalPairs})
        if (to_string(k) == s) return k;
    throw FormatError("unknown dataset kind '" + s + "'");
}

} // namespace

Dataset generate_default_dataset(DatasetConfig config) {
    config.kind = DatasetKind::Default;
    config.colors = ColorSpec::monochrome();
    return generate_items(std::move(config));
}

Dataset generate_colors_dataset(double p, DatasetConfig config) {
    config.kind = DatasetKind::Colors;
    config.colors = ColorSpec::correlated(p);
    return generate_items(std::move(config));
}

MinimalPairSet generate_minimal_pairs(int n_backgrounds, std::uint64_t seed, const ColorSpec& colors, int resolution,
                                      int threads) {
    if (n_backgrounds < 1) throw ConfigError("n_backgrounds must be >= 1");
    check_resolution(resolution);
    MinimalPairSet set;
    set.dataset.config.kind = DatasetKind::MinimalPairs;
    set.dataset.config.seed = seed;
    set.dataset.config.resolution = resolution;
    set.dataset.config.n_train = 0;
    set.dataset.config.n_val = 0;
    set.dataset.config.n_test = 0;
    set.dataset.config.n_backgrounds = n_backgrounds;
    set.dataset.config.colors = colors;
    set.dataset.config.threads = threads;

    const bool correlated = colors.mode == ColorSpec::Mode::Correlated;
    for (int b = 0; b < n_backgrounds; ++b) {
        Rng rng = make_rng(seed, {kPairRowStream, static_cast<std::uint64_t>(b)});
        auto bg = sample_background(rng);
        if (correlated) bg.color_index = static_cast<int>(uniform_int(rng, 0, kNumClasses - 1));
        set.backgrounds.push_back(std::move(bg));
    }
    set.dataset.items.resize(static_cast<std::size_t>(n_backgrounds) * kNumClasses);
    detail::parallel_for(set.dataset.items.size(), threads, [&](std::size_t i) {
        auto& it = set.dataset.items[i];
        const auto row = i / kNumClasses;
        it.item_id = i;
        it.cls = CompositeClass::from_index(static_cast<int>(i % kNumClasses));
        it.split = Split::Test;
        it.background = set.backgrounds[row];
        it.image = render(*it.cls, it.background, colors, resolution);
        it.color_used = it.background.color_index ? colors.palette[*it.background.color_index] : colors.color_for(*it.cls);
    });
    return set;
}

namespace {

void save_items(const Dataset& ds, const std::filesystem::path& dir, bool per_row_backgrounds,
                const std::vector<BackgroundParams>* rows) {
    std::filesystem::create_directories(dir / "images");
    const auto& cfg = ds.config;
    json manifest{{"format", "unitconcepts-dataset"},
                  {"version", kDatasetFormatVersion},
                  {"kind", to_string(cfg.kind)},
                  {"seed", cfg.seed},
                  {"resolution", cfg.resolution},
                  {"ontology", ontology_json()},
                  {"color_spec", to_json(cfg.colors)},
                  {"splits", {{"train", cfg.n_train}, {"val", cfg.n_val}, {"test", cfg.n_test}}},
                  {"n_backgrounds", cfg.n_backgrounds},
                  {"n_items", ds.items.size()}};
    write_json_file(dir / "manifest.json", manifest);

    detail::CsvWriter csv(dir / "items.csv", {"item_id", "class", "layout", "shape", "stroke", "color", "split", "png_path"});
    json backgrounds{{"granularity", per_row_backgrounds ? "row" : "item"}, {"entries", json::array()}};
    for (const auto& it : ds.items) {
        const auto c = gt_label(it);
        csv.row({std::to_string(it.item_id), c.canonical_name(), std::string(to_string(c.layout())),
                 std::string(to_string(c.shape())), std::string(to_string(c.stroke())), to_hex(it.color_used),
                 std::string(to_string(it.split)), png_name(it.item_id)});
        if (!per_row_backgrounds) backgrounds["entries"].push_back(to_json(it.background));
    }
    if (per_row_backgrounds)
        for (const auto& bg : *rows) backgrounds["entries"].push_back(to_json(bg));
    write_json_file(dir / "backgrounds.json", backgrounds);

    detail::parallel_for(ds.items.size(), cfg.threads,
                         [&](std::size_t i) { write_png(dir / png_name(ds.items[i].item_id), ds.items[i].image); });
}

struct LoadedItems {
    Dataset dataset;
    std::vector<BackgroundParams> backgrounds;
    bool per_row = false;
};

LoadedItems load_items(const std::filesystem::path& dir) {
    const json manifest = read_json_file(dir / "manifest.json");
    LoadedItems out;
    auto& ds = out.dataset;
    try {
        if (manifest.at("format").get<std::string>() != "unitconcepts-dataset")
            throw FormatError("not a dataset manifest: " + dir.string());
        if (manifest.at("version").get<int>() != kDatasetFormatVersion)
            throw FormatError("unsupported dataset version in " + dir.string());
        ds.config.kind = parse_kind(manifest.at("kind").get<std::string>());
        ds.config.seed = manifest.at("seed").get<std::uint64_t>();
        ds.config.resolution = manifest.at("resolution").get<int>();
        ds.config.colors = color_spec_from_json(manifest.at("color_spec"));
        ds.config.n_train = manifest.at("splits").at("train").get<int>();
        ds.config.n_val = manifest.at("splits").at("val").get<int>();
        ds.config.n_test = manifest.at("splits").at("test").get<int>();
        ds.config.n_backgrounds = manifest.at("n_backgrounds").get<int>();
        const auto n_items = manifest.at("n_items").get<std::size_t>();

        const auto table = detail::read_csv(dir / "items.csv");
        if (table.rows.size() != n_items)
            throw FormatError("items.csv has " + std::to_string(table.rows.size()) + " rows, manifest says " +
                              std::to_string(n_items));
        const int c_id = table.column("item_id"), c_class = table.column("class"), c_color = table.column("color"),
                  c_split = table.column("split"), c_png = table.column("png_path");

        const json bgs = read_json_file(dir / "backgrounds.json");
        out.per_row = bgs.at("granularity").get<std::string>() == "row";
        for (const auto& e : bgs.at("entries")) out.backgrounds.push_back(background_from_json(e));
        if (!out.per_row && out.backgrounds.size() != n_items)
            throw FormatError("backgrounds.json entry count does not match items");

        ds.items.resize(n_items);
        for (std::size_t i = 0; i < n_items; ++i) {
            const auto& row = table.rows[i];
            auto& it = ds.items[i];
            it.item_id = detail::parse_u64(row[c_id], "item_id");
            try {
                it.cls = CompositeClass::parse(row[c_class]);
            } catch (const MetadataError& e) {
                throw FormatError(e.what());
            }
            it.color_used = parse_hex(row[c_color]);
            it.split = parse_split(row[c_split]);
            if (!out.per_row) it.background = out.backgrounds[i];
        }
        detail::parallel_for(n_items, 0, [&](std::size_t i) {
            auto& it = ds.items[i];
            it.image = read_png(dir / table.rows[i][c_png]);
            if (it.image.height() != ds.config.resolution || it.image.width() != ds.config.resolution)
                throw FormatError("image size mismatch for item " + std::to_string(it.item_id));
        });
    } catch (const json::exception& e) {
        throw FormatError("bad dataset manifest in " + dir.string() + ": " + e.what());
    }
    return out;
}

} // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) { save_items(dataset, dir, false, nullptr); }

Dataset load_dataset(const std::filesystem::path& dir) {
    auto loaded = load_items(dir);
    if (loaded.per_row) throw FormatError(dir.string() + " holds a minimal-pair set; use load_minimal_pairs");
    return std::move(loaded.dataset);
}

void save_minimal_pairs(const MinimalPairSet& pairs, const std::filesystem::path& dir) {
    save_items(pairs.dataset, dir, true, &pairs.backgrounds);
    detail::CsvWriter csv(dir / "pairs.csv", {"row_id", "class", "item_id"});
    for (const auto& it : pairs.dataset.items)
        csv.row({std::to_string(it.item_id / kNumClasses), gt_label(it).canonical_name(), std::to_string(it.item_id)});
}

MinimalPairSet load_minimal_pairs(const std::filesystem::path& dir) {
    auto loaded = load_items(dir);
    if (!loaded.per_row) throw FormatError(dir.string() + " is not a minimal-pair set");
    MinimalPairSet set;
    set.backgrounds = std::move(loaded.backgrounds);
    set.dataset = std::move(loaded.dataset);
    if (set.dataset.items.size() != set.backgrounds.size() * kNumClasses)
        throw FormatError("minimal-pair grid is not rows x 18");

    const auto table = detail::read_csv(dir / "pairs.csv");
    if (table.rows.size() != set.dataset.items.size()) throw FormatError("pairs.csv row count mismatch");
    const int c_row = table.column("row_id"), c_item = table.column("item_id"), c_class = table.column("class");
    for (const auto& r : table.rows) {
        const auto row = detail::parse_u64(r[c_row], "row_id");
        const auto id = detail::parse_u64(r[c_item], "item_id");
        if (row >= set.backgrounds.size() || id >= set.dataset.items.size()) throw FormatError("pairs.csv index out of range");
        auto& it = set.dataset.items[id];
        if (it.item_id != id || gt_label(it).canonical_name() != r[c_class])
            throw FormatError("pairs.csv disagrees with items.csv at item " + r[c_item]);
        it.background = set.backgrounds[row];
    }
    return set;
}

std::string to_hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

Rgb parse_hex(std::string_view s) {
    if (s.size() != 7 || s[0] != '#') throw FormatError("bad color '" + std::string(s) + "'");
    auto byte = [&](std::size_t pos) {
        unsigned v = 0;
        for (std::size_t k = pos; k < pos + 2; ++k) {
            const char ch = s[k];
            v <<= 4;
            if (ch >= '0' && ch <= '9') v |= ch - '0';
            else if (ch >= 'a' && ch <= 'f') v |= ch - 'a' + 10;
            else if (ch >= 'A' && ch <= 'F') v |= ch - 'A' + 10;
            else throw FormatError("bad color '" + std::string(s) + "'");
        }
        return static_cast<std::uint8_t>(v);
    };
    return {byte(1), byte(3), byte(5)};
}

} // namespace uc
