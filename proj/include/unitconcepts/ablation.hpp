#pragma once

// Concept ablation by iterative nullspace projection (INLP).

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unitconcepts/numerics.hpp"
#include "unitconcepts/probes.hpp"

namespace uc {

struct InlpIteration {
    int rank_removed = 0;
    double probe_accuracy = 0.0;  // accuracy of this iteration's probe on the reps it was trained on
};

struct NullspaceProjection {
    ProbeTarget target = ProbeTarget::Composite;
    Matrix p;  // d x d
    std::vector<InlpIteration> iterations;
    bool exhausted = false;  // stopped early because nothing was left to remove
    std::string split;       // description of the training data

    int dim() const noexcept { return static_cast<int>(p.rows()); }
    int total_rank_removed() const noexcept;
    /// d minus the total rank removed.
    int rank() const noexcept { return dim() - total_rank_removed(); }
};

struct InlpOptions {
    int iterations = 1;
    ProbeHyper hyper;
};

/// Repeatedly trains a linear probe on the projected reps and removes the
/// rowspace of its weights, restricted to the span of the centered training
/// reps. The projection after iteration i is the orthogonal projection onto
/// the common nullspace of all removed directions so far.
NullspaceProjection inlp_fit(const Matrix& reps, std::span<const int> labels, ProbeTarget target,
                             const InlpOptions& options = {});

NullspaceProjection identity_projection(int dim);

/// Applies P to each row of reps (P is symmetric, so this is reps * P).
Matrix ablate(const Matrix& reps, const NullspaceProjection& projection);
Vector ablate(const Vector& z, const NullspaceProjection& projection);

/// Writes <stem>.json and <stem>.cbm.
void save_projection(const NullspaceProjection& projection, const std::filesystem::path& stem);
NullspaceProjection load_projection(const std::filesystem::path& stem);

} // namespace uc
