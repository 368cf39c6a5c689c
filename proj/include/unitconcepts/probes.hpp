#pragma once

// Linear probes: multinomial logistic regression trained full-batch with Adam.
// Composite probes implement predict; per-dimension probes implement has_concept.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unitconcepts/numerics.hpp"
#include "unitconcepts/ontology.hpp"
#include "unitconcepts/rng.hpp"

namespace uc {

enum class ProbeTarget : std::uint8_t { Composite, Layout, Shape, Stroke };

std::string_view to_string(ProbeTarget t) noexcept;
ProbeTarget parse_probe_target(std::string_view s);
ProbeTarget target_for(Dimension d) noexcept;
std::optional<Dimension> dimension_of(ProbeTarget t) noexcept;
/// 18 for Composite, otherwise the dimension size.
int num_outputs(ProbeTarget t) noexcept;
/// Label of a class under a target: class index or dimension value.
int label_of(const CompositeClass& c, ProbeTarget t) noexcept;
std::vector<int> labels_of(std::span<const CompositeClass> classes, ProbeTarget t);

struct ProbeHyper {
    double lr = 1e-2;
    int max_epochs = 500;
    double tolerance = 1e-6;  // stop when |loss change| falls below this
    double l2 = 0.0;
    bool bias = true;
    bool standardize = true;
    std::uint64_t seed = 0;
};

struct LinearProbe {
    ProbeTarget target = ProbeTarget::Composite;
    Matrix w;      // k x d, acting on standardized inputs
    Vector b;      // k
    Vector mean;   // d
    Vector scale;  // d
    ProbeHyper hyper;
    int epochs_run = 0;
    double final_loss = 0.0;
    double train_accuracy = 0.0;

    int dim() const noexcept { return static_cast<int>(w.cols()); }
    int outputs() const noexcept { return static_cast<int>(w.rows()); }
    /// n x k logits for raw (unstandardized) inputs.
    Matrix logits(const Matrix& reps) const;
    /// Weights in raw input space, W diag(1 / scale); logits = X W_eff^T + const.
    Matrix effective_weights() const;
};

/// Throws TrainError if fewer than two distinct labels are present and
/// InputError on malformed input.
LinearProbe train_probe(const Matrix& reps, std::span<const int> labels, ProbeTarget target,
                        const ProbeHyper& hyper = {});

/// Argmax per row; ties (up to a 1e-9 relative tolerance) go to the lowest index.
std::vector<int> predict_labels(const LinearProbe& probe, const Matrix& reps);

CompositeClass predict(const LinearProbe& probe, const Vector& z);
bool has_concept(const LinearProbe& probe, const Vector& z, const AtomicConcept& c);

/// Mean 0/1 correctness over rows where mask is true (all rows if mask is
/// empty). Throws EvalError if no row is selected.
double eval_accuracy(const LinearProbe& probe, const Matrix& reps, std::span<const int> labels,
                     std::span<const bool> mask = {});

/// Writes <stem>.json and <stem>.cbm.
void save_probe(const LinearProbe& probe, const std::filesystem::path& stem);
LinearProbe load_probe(const std::filesystem::path& stem);

} // namespace uc
