#pragma once

// Layerwise analysis: composed concept probes, direct classification and the
// normalized mutual information between the two.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unitconcepts/bundle.hpp"
#include "unitconcepts/probes.hpp"

namespace uc {

/// The class whose layout, shape and stroke are the argmaxes of the three
/// dimension probes (given in Layout, Shape, Stroke order).
std::vector<CompositeClass> composed_prediction(std::span<const LinearProbe> dim_probes, const Matrix& reps);

struct DirectResult {
    double accuracy = 0.0;
    std::vector<int> predictions;  // class indices for the eval rows
};

DirectResult direct_classification(const Matrix& train_reps, std::span<const int> train_labels,
                                   const Matrix& eval_reps, std::span<const int> eval_labels,
                                   const ProbeHyper& hyper = {});

/// I(A;B) / ((H(A) + H(B)) / 2) with plug-in estimates. Both constant and
/// equal gives 1; exactly one constant gives 0. Throws InputError on length
/// mismatch or empty input.
double nmi(std::span<const int> a, std::span<const int> b);

struct LayerwiseRecord {
    std::string layer;
    double acc_layout = 0.0;
    double acc_shape = 0.0;
    double acc_stroke = 0.0;
    double acc_composed = 0.0;
    double acc_direct = 0.0;
    double nmi = 0.0;
    std::size_t n_items = 0;
};

/// Per layer: probes trained on the train split, evaluated on the test split.
std::vector<LayerwiseRecord> layerwise_report(const RepresentationBundle& bundle, const ProbeHyper& hyper = {});

void write_layerwise_csv(std::span<const LayerwiseRecord> records, const std::filesystem::path& path);

} // namespace uc
