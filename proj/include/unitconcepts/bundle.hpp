#pragma once

// Representation bundles: per-layer representation matrices plus item labels,
// stored as manifest.json, layers/<name>.cbm and labels.csv.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unitconcepts/datagen.hpp"
#include "unitconcepts/encoder.hpp"
#include "unitconcepts/numerics.hpp"

namespace uc {

inline constexpr int kBundleVersion = 1;
inline constexpr int kExportBatch = 128;

struct BundleLabel {
    std::uint64_t item_id = 0;
    CompositeClass cls;
    Rgb color{};
    Split split = Split::Train;
};

struct BundleLayer {
    std::string name;
    MatrixF data;  // n_items x dim
};

struct RepresentationBundle {
    std::string encoder;
    std::vector<BundleLayer> layers;
    std::vector<BundleLabel> labels;

    std::size_t n_items() const noexcept { return labels.size(); }
    const MatrixF& layer(const std::string& name) const;
    /// The last layer, i.e. the encode() output.
    const MatrixF& final_layer() const;
    std::vector<std::string> layer_names() const;
};

std::vector<BundleLabel> labels_of(const Dataset& dataset);

/// Encodes every dataset item in fixed-size batches.
RepresentationBundle build_bundle(const Encoder& encoder, const Dataset& dataset);

/// Writes the bundle directory. Throws DataError on non-finite entries.
void save_bundle(const RepresentationBundle& bundle, const std::filesystem::path& dir);

void export_bundle(const Encoder& encoder, const Dataset& dataset, const std::filesystem::path& dir);

/// Reads and validates a bundle directory: FormatError on schema, size or
/// label problems (naming the layer for matrix problems), DataError on
/// non-finite entries.
RepresentationBundle import_bundle(const std::filesystem::path& dir);

} // namespace uc
