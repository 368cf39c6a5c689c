#pragma once

// Procedural rendering of the compositional shapes datasets and their
// counterfactual minimal pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "unitconcepts/image.hpp"
#include "unitconcepts/ontology.hpp"
#include "unitconcepts/rng.hpp"

namespace uc {

// Geometry ranges, in canvas-fraction units.
inline constexpr int kMinShapes = 4;
inline constexpr int kMaxShapes = 7;
inline constexpr double kMinShapeSize = 0.08;
inline constexpr double kMaxShapeSize = 0.16;
inline constexpr double kMaxJitter = 0.03;
inline constexpr double kMaxRotation = 0.2617993877991494;  // 15 degrees
inline constexpr double kMaxLineOffset = 0.15;
inline constexpr double kMinRingRadius = 0.22;
inline constexpr double kMaxRingRadius = 0.32;
/// Outline displacement for fuzzy strokes: 1.5 px on a 64 px canvas.
inline constexpr double kFuzzSigma = 1.5 / 64.0;
inline constexpr int kMinResolution = 32;

struct ShapeParams {
    double jitter_x{};  // anchor offset
    double jitter_y{};
    double size{};      // half-extent along the major axis
    double rotation{};  // radians

    friend bool operator==(const ShapeParams&, const ShapeParams&) = default;
};

/// Everything about an image except its class: positions, sizes, rotations,
/// layout geometry, outline noise seed, and optionally a fixed color.
struct BackgroundParams {
    std::uint64_t seed{};  // seeds the fuzzy outline noise
    int n_shapes{};
    std::vector<ShapeParams> shapes;
    double line_offset{};  // perpendicular offset of the line layouts from centre
    double ring_radius{};
    double ring_phase{};
    std::optional<int> color_index;  // palette index; set when color is a background parameter

    friend bool operator==(const BackgroundParams&, const BackgroundParams&) = default;
};

BackgroundParams sample_background(Rng& rng);

nlohmann::json to_json(const BackgroundParams& bg);
BackgroundParams background_from_json(const nlohmann::json& j);

struct ColorSpec {
    enum class Mode : std::uint8_t { DefaultMonochrome, Correlated };

    Mode mode = Mode::DefaultMonochrome;
    double p = 1.0;                          // probability of the paired color (Correlated only)
    std::array<Rgb, kNumClasses> palette{};  // 18 distinct colors
    std::array<int, kNumClasses> pairing{};  // class index -> palette index (a bijection)

    static ColorSpec monochrome();
    /// Throws ConfigError unless p in [1/18, 1].
    static ColorSpec correlated(double p);

    /// Color for a class when no background color is fixed.
    Rgb color_for(const CompositeClass& c) const noexcept;
};

inline constexpr Rgb kMonochromeInk{0, 0, 0};
const std::array<Rgb, kNumClasses>& default_palette();

nlohmann::json to_json(const ColorSpec& spec);
ColorSpec color_spec_from_json(const nlohmann::json& j);

/// Rasterizes a class over a background. Shapes are filled and anti-aliased
/// on a white canvas. Throws RenderError if resolution < 32.
Image render(const CompositeClass& cls, const BackgroundParams& bg, const ColorSpec& colors, int resolution);

/// Same as above with an explicit fill color.
Image render(const CompositeClass& cls, const BackgroundParams& bg, Rgb color, int resolution);

/// Per-shape coverage masks in [0, 1], each resolution x resolution row-major.
/// Used to check counterfactual validity of the renderer.
std::vector<std::vector<float>> render_masks(const CompositeClass& cls, const BackgroundParams& bg, int resolution);

enum class Split : std::uint8_t { Train, Val, Test };
std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view s);

struct DatasetItem {
    std::uint64_t item_id{};
    std::optional<CompositeClass> cls;  // generation metadata
    BackgroundParams background;
    Rgb color_used{};
    Image image;
    Split split = Split::Train;
};

/// Class the item was rendered from. Throws MetadataError if absent.
CompositeClass gt_label(const DatasetItem& item);

enum class DatasetKind : std::uint8_t { Default, Colors, MinimalPairs };
std::string_view to_string(DatasetKind k) noexcept;

struct DatasetConfig {
    DatasetKind kind = DatasetKind::Default;
    std::uint64_t seed = 0;
    int resolution = 64;
    int n_train = 1000;  // per class
    int n_val = 100;
    int n_test = 100;
    int n_backgrounds = 1000;  // minimal pairs only
    ColorSpec colors = ColorSpec::monochrome();
    int threads = 0;  // 0 = hardware concurrency; output is identical for any value
};

struct Dataset {
    DatasetConfig config;
    std::vector<DatasetItem> items;

    std::size_t count(Split s) const noexcept;
};

/// Items ordered split-major, then repetition, then class index.
Dataset generate_default_dataset(DatasetConfig config);

/// Each item takes its class's paired color w.p. p, otherwise one of the other
/// 17 uniformly. Throws ConfigError for p outside [1/18, 1].
Dataset generate_colors_dataset(double p, DatasetConfig config);

/// B rows x 18 columns; row b holds every class rendered over background b.
struct MinimalPairSet {
    std::vector<BackgroundParams> backgrounds;
    Dataset dataset;  // items row-major: index = row * 18 + class index

    std::size_t rows() const noexcept { return backgrounds.size(); }
    const DatasetItem& at(std::size_t row, const CompositeClass& c) const {
        return dataset.items.at(row * kNumClasses + static_cast<std::size_t>(c.index()));
    }
};

/// With a Correlated color spec each row gets one uniformly drawn palette color.
MinimalPairSet generate_minimal_pairs(int n_backgrounds, std::uint64_t seed, const ColorSpec& colors,
                                      int resolution = 64, int threads = 0);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void save_minimal_pairs(const MinimalPairSet& pairs, const std::filesystem::path& dir);
MinimalPairSet load_minimal_pairs(const std::filesystem::path& dir);

std::string to_hex(Rgb c);
Rgb parse_hex(std::string_view s);

} // namespace uc
