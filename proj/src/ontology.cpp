#include "unitconcepts/ontology.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "unitconcepts/errors.hpp"
#include "unitconcepts/rng.hpp"

namespace uc {

namespace {

constexpr std::array<std::string_view, 3> kDimensionNames{"layout", "shape", "stroke"};
constexpr std::array<std::string_view, 3> kLayoutNames{"horizontal", "vertical", "ring"};
constexpr std::array<std::string_view, 3> kShapeNames{"rectangle", "oval", "polygon"};
constexpr std::array<std::string_view, 2> kStrokeNames{"clean", "fuzzy"};

// Only the nonce words whose constituents are stated unambiguously. Other
// nonce words appear with mutually inconsistent constituents and are left out.
struct AliasEntry {
    std::string_view alias;
    CompositeClass cls;
};
constexpr std::array<AliasEntry, 1> kAliases{{
    {"dax", CompositeClass(Layout::Horizontal, Shape::Oval, Stroke::Clean)},
}};

} // namespace

std::string_view to_string(Dimension d) noexcept { return kDimensionNames[static_cast<int>(d)]; }
std::string_view to_string(Layout v) noexcept { return kLayoutNames[static_cast<int>(v)]; }
std::string_view to_string(Shape v) noexcept { return kShapeNames[static_cast<int>(v)]; }
std::string_view to_string(Stroke v) noexcept { return kStrokeNames[static_cast<int>(v)]; }

Dimension parse_dimension(std::string_view s) {
    for (Dimension d : kDimensions)
        if (to_string(d) == s) return d;
    throw ConfigError("unknown concept dimension '" + std::string(s) + "'");
}

AtomicConcept AtomicConcept::parse(std::string_view name) {
    if (name == "smooth") name = "clean";
    for (int i = 0; i < 3; ++i)
        if (kLayoutNames[i] == name) return {Dimension::Layout, static_cast<std::uint8_t>(i)};
    for (int i = 0; i < 3; ++i)
        if (kShapeNames[i] == name) return {Dimension::Shape, static_cast<std::uint8_t>(i)};
    for (int i = 0; i < 2; ++i)
        if (kStrokeNames[i] == name) return {Dimension::Stroke, static_cast<std::uint8_t>(i)};
    throw MetadataError("unknown atomic concept '" + std::string(name) + "'");
}

std::string_view AtomicConcept::name() const noexcept {
    switch (dimension) {
    case Dimension::Layout: return kLayoutNames[value];
    case Dimension::Shape: return kShapeNames[value];
    case Dimension::Stroke: return kStrokeNames[value];
    }
    return {};
}

const std::array<AtomicConcept, kNumAtomicConcepts>& all_atomic_concepts() {
    static const std::array<AtomicConcept, kNumAtomicConcepts> all{{
        AtomicConcept::of(Layout::Horizontal),
        AtomicConcept::of(Layout::Vertical),
        AtomicConcept::of(Layout::Ring),
        AtomicConcept::of(Shape::Rectangle),
        AtomicConcept::of(Shape::Oval),
        AtomicConcept::of(Shape::Polygon),
        AtomicConcept::of(Stroke::Clean),
        AtomicConcept::of(Stroke::Fuzzy),
    }};
    return all;
}

CompositeClass CompositeClass::from_index(int index) {
    if (index < 0 || index >= kNumClasses)
        throw MetadataError("class index out of range: " + std::to_string(index));
    return {static_cast<Layout>(index / 6), static_cast<Shape>((index / 2) % 3), static_cast<Stroke>(index % 2)};
}

CompositeClass CompositeClass::parse(std::string_view name) {
    for (const auto& a : kAliases)
        if (a.alias == name) return a.cls;
    for (const auto& c : all_classes())
        if (c.canonical_name() == name) return c;
    throw MetadataError("unknown class name '" + std::string(name) + "'");
}

int CompositeClass::value(Dimension d) const noexcept {
    switch (d) {
    case Dimension::Layout: return static_cast<int>(layout_);
    case Dimension::Shape: return static_cast<int>(shape_);
    case Dimension::Stroke: return static_cast<int>(stroke_);
    }
    return 0;
}

AtomicConcept CompositeClass::concept_of(Dimension d) const noexcept {
    return {d, static_cast<std::uint8_t>(value(d))};
}

CompositeClass CompositeClass::with(Dimension d, int v) const {
    if (v < 0 || v >= dimension_size(d)) throw MetadataError("concept value out of range");
    CompositeClass c = *this;
    switch (d) {
    case Dimension::Layout: c.layout_ = static_cast<Layout>(v); break;
    case Dimension::Shape: c.shape_ = static_cast<Shape>(v); break;
    case Dimension::Stroke: c.stroke_ = static_cast<Stroke>(v); break;
    }
    return c;
}

std::string CompositeClass::canonical_name() const {
    std::string s;
    s.append(to_string(layout_)).append("-").append(to_string(shape_)).append("-").append(to_string(stroke_));
    return s;
}

std::optional<std::string_view> CompositeClass::alias() const noexcept {
    for (const auto& a : kAliases)
        if (a.cls == *this) return a.alias;
    return std::nullopt;
}

const std::array<CompositeClass, kNumClasses>& all_classes() {
    static const auto all = [] {
        std::array<CompositeClass, kNumClasses> a{};
        for (int i = 0; i < kNumClasses; ++i) a[i] = CompositeClass::from_index(i);
        return a;
    }();
    return all;
}

std::array<AtomicConcept, 3> gt_describe(const CompositeClass& c) noexcept {
    return {c.concept_of(Dimension::Layout), c.concept_of(Dimension::Shape), c.concept_of(Dimension::Stroke)};
}

std::vector<Slice> slices(Dimension d) {
    std::vector<Slice> out;
    std::array<bool, kNumClasses> used{};
    for (const auto& c : all_classes()) {
        if (used[c.index()]) continue;
        Slice s{d, {}};
        for (int v = 0; v < dimension_size(d); ++v) {
            const CompositeClass member = c.with(d, v);
            used[member.index()] = true;
            s.classes.push_back(member);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string_view to_string(SplitMode m) noexcept {
    return m == SplitMode::OneSlice ? "one-slice" : "n-minus-1";
}

SplitMode parse_split_mode(std::string_view s) {
    if (s == "one-slice") return SplitMode::OneSlice;
    if (s == "n-minus-1") return SplitMode::NMinus1Slices;
    throw ConfigError("unknown split mode '" + std::string(s) + "' (expected one-slice or n-minus-1)");
}

bool SeenUnseenSplit::is_seen(const CompositeClass& c) const noexcept {
    return std::binary_search(seen.begin(), seen.end(), c);
}

SeenUnseenSplit make_split(Dimension d, SplitMode mode, std::uint64_t seed) {
    const auto all = slices(d);
    Rng rng = make_rng(seed, {0x5311cedULL, static_cast<std::uint64_t>(d)});
    const auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(all.size()) - 1));

    SeenUnseenSplit split{d, mode, seed, {}, {}};
    for (std::size_t i = 0; i < all.size(); ++i) {
        const bool seen = (mode == SplitMode::OneSlice) ? (i == pick) : (i != pick);
        auto& dst = seen ? split.seen : split.unseen;
        dst.insert(dst.end(), all[i].classes.begin(), all[i].classes.end());
    }
    std::sort(split.seen.begin(), split.seen.end());
    std::sort(split.unseen.begin(), split.unseen.end());
    return split;
}

nlohmann::json ontology_json() {
    nlohmann::json j;
    j["dimensions"] = nlohmann::json::object();
    j["dimensions"]["layout"] = std::vector<std::string>(kLayoutNames.begin(), kLayoutNames.end());
    j["dimensions"]["shape"] = std::vector<std::string>(kShapeNames.begin(), kShapeNames.end());
    j["dimensions"]["stroke"] = std::vector<std::string>(kStrokeNames.begin(), kStrokeNames.end());
    auto classes = nlohmann::json::array();
    for (const auto& c : all_classes()) {
        nlohmann::json e{{"index", c.index()},
                         {"name", c.canonical_name()},
                         {"layout", to_string(c.layout())},
                         {"shape", to_string(c.shape())},
                         {"stroke", to_string(c.stroke())}};
        if (auto a = c.alias()) e["alias"] = std::string(*a);
        classes.push_back(std::move(e));
    }
    j["classes"] = std::move(classes);
    return j;
}

} // namespace uc
