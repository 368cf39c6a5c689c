#pragma once

// Symbolic concept space: atomic concepts, the 18 composite classes, slices
// and seen/unseen splits.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace uc {

enum class Dimension : std::uint8_t { Layout = 0, Shape = 1, Stroke = 2 };
enum class Layout : std::uint8_t { Horizontal = 0, Vertical = 1, Ring = 2 };
enum class Shape : std::uint8_t { Rectangle = 0, Oval = 1, Polygon = 2 };
enum class Stroke : std::uint8_t { Clean = 0, Fuzzy = 1 };

inline constexpr std::array<Dimension, 3> kDimensions{Dimension::Layout, Dimension::Shape,
                                                      Dimension::Stroke};
inline constexpr int kNumClasses = 18;
inline constexpr int kNumAtomicConcepts = 8;

/// Number of values along a dimension (3, 3, 2).
constexpr int dimension_size(Dimension d) noexcept { return d == Dimension::Stroke ? 2 : 3; }

std::string_view to_string(Dimension d) noexcept;
std::string_view to_string(Layout v) noexcept;
std::string_view to_string(Shape v) noexcept;
std::string_view to_string(Stroke v) noexcept;

/// Parses "layout" / "shape" / "stroke" (case-sensitive).
Dimension parse_dimension(std::string_view s);

/// One atomic concept, e.g. {Layout, 2} == "ring".
struct AtomicConcept {
    Dimension dimension{};
    std::uint8_t value{};

    static AtomicConcept of(Layout v) noexcept { return {Dimension::Layout, static_cast<std::uint8_t>(v)}; }
    static AtomicConcept of(Shape v) noexcept { return {Dimension::Shape, static_cast<std::uint8_t>(v)}; }
    static AtomicConcept of(Stroke v) noexcept { return {Dimension::Stroke, static_cast<std::uint8_t>(v)}; }

    /// Accepts value names; "smooth" is a synonym of "clean".
    static AtomicConcept parse(std::string_view name);

    std::string_view name() const noexcept;

    friend bool operator==(const AtomicConcept&, const AtomicConcept&) = default;
    friend auto operator<=>(const AtomicConcept&, const AtomicConcept&) = default;
};

/// All 8 atomic concepts, grouped by dimension.
const std::array<AtomicConcept, kNumAtomicConcepts>& all_atomic_concepts();

/// A composite class: conjunction of one layout, one shape and one stroke.
class CompositeClass {
public:
    constexpr CompositeClass() = default;
    constexpr CompositeClass(Layout l, Shape s, Stroke k) noexcept : layout_(l), shape_(s), stroke_(k) {}

    /// Class index in [0, 18): layout * 6 + shape * 2 + stroke.
    static CompositeClass from_index(int index);
    /// Accepts canonical names ("horizontal-oval-clean") and known aliases ("dax").
    static CompositeClass parse(std::string_view name);

    constexpr Layout layout() const noexcept { return layout_; }
    constexpr Shape shape() const noexcept { return shape_; }
    constexpr Stroke stroke() const noexcept { return stroke_; }

    constexpr int index() const noexcept {
        return static_cast<int>(layout_) * 6 + static_cast<int>(shape_) * 2 + static_cast<int>(stroke_);
    }

    /// Value index along a dimension.
    int value(Dimension d) const noexcept;
    AtomicConcept concept_of(Dimension d) const noexcept;
    /// Copy with one dimension replaced.
    CompositeClass with(Dimension d, int value) const;

    std::string canonical_name() const;
    std::optional<std::string_view> alias() const noexcept;

    friend constexpr bool operator==(const CompositeClass& a, const CompositeClass& b) noexcept {
        return a.index() == b.index();
    }
    friend constexpr auto operator<=>(const CompositeClass& a, const CompositeClass& b) noexcept {
        return a.index() <=> b.index();
    }

private:
    Layout layout_{Layout::Horizontal};
    Shape shape_{Shape::Rectangle};
    Stroke stroke_{Stroke::Clean};
};

/// The 18 classes in index order.
const std::array<CompositeClass, kNumClasses>& all_classes();

/// Constituents of a composite class: exactly one concept per dimension.
std::array<AtomicConcept, 3> gt_describe(const CompositeClass& c) noexcept;

struct Slice {
    Dimension dimension{};
    std::vector<CompositeClass> classes;
};

/// Slices along `d`, ordered by the index of their first class.
std::vector<Slice> slices(Dimension d);

enum class SplitMode : std::uint8_t { OneSlice, NMinus1Slices };

std::string_view to_string(SplitMode m) noexcept;
SplitMode parse_split_mode(std::string_view s);

struct SeenUnseenSplit {
    Dimension dimension{};
    SplitMode mode{};
    std::uint64_t seed{};
    std::vector<CompositeClass> seen;    // sorted by index
    std::vector<CompositeClass> unseen;  // sorted by index

    bool is_seen(const CompositeClass& c) const noexcept;
};

/// OneSlice: the seed picks the single seen slice. NMinus1Slices: the seed
/// picks the single unseen slice.
SeenUnseenSplit make_split(Dimension d, SplitMode mode, std::uint64_t seed);

/// Ontology description embedded in manifests.
nlohmann::json ontology_json();

} // namespace uc
