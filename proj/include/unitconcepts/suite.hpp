#pragma once

// The four concept unit tests and their verdict rules.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitconcepts/ablation.hpp"
#include "unitconcepts/bundle.hpp"
#include "unitconcepts/encoder.hpp"
#include "unitconcepts/probes.hpp"

namespace uc {

struct Thresholds {
    double high = 0.75;           // "high" means strictly above this
    double low_margin = 0.15;     // "low" means at most chance + low_margin
    double grounded_pass = 0.95;  // is_grounded passes at or above this

    static double chance(Dimension d) noexcept { return 1.0 / dimension_size(d); }
    static constexpr double composite_chance() noexcept { return 1.0 / kNumClasses; }
    bool is_high(double acc) const noexcept { return acc > high; }
    bool is_low(double acc, Dimension d) const noexcept { return acc <= chance(d) + low_margin; }
};

enum class Verdict : std::uint8_t { Pass, Fail, ExpectedFail };
std::string_view to_string(Verdict v) noexcept;

enum class Requirement : std::uint8_t { Info, High, Low, Grounded };

struct Condition {
    std::string name;
    double accuracy = 0.0;
    Requirement requirement = Requirement::Info;
    std::optional<Dimension> dimension;  // for Low: whose chance level applies
    std::size_t n_items = 0;
};

/// Whether one condition meets its requirement (Info always holds).
bool satisfied(const Condition& c, const Thresholds& t) noexcept;

struct TestResult {
    std::string test;
    std::optional<Dimension> dimension;
    std::vector<Condition> conditions;
    Verdict verdict = Verdict::Fail;
    bool expected_to_fail = false;
    std::string rule;
    std::vector<std::vector<std::size_t>> confusion;  // truth x predicted, when recorded
    nlohmann::json snapshot;  // seed, split, dataset and encoder the result came from
    nlohmann::json to_json(const Thresholds& t) const;

    const Condition& condition(const std::string& name) const;
};

/// Pass iff every non-Info condition is satisfied. Pure in the accuracies
/// and thresholds.
Verdict verdict(const TestResult& result, const Thresholds& thresholds) noexcept;

/// Sets result.verdict from verdict(), mapping Fail to ExpectedFail when the
/// test is marked as expected to fail.
void finalize(TestResult& result, const Thresholds& thresholds);

/// Per-dimension splits: each dimension's probes use the split along that
/// dimension, all with the same mode and seed.
struct SplitPlan {
    SplitMode mode = SplitMode::NMinus1Slices;
    std::uint64_t seed = 0;
    SeenUnseenSplit split(Dimension d) const { return make_split(d, mode, seed); }
};

/// Labeled representations for the suite: one layer of a bundle.
struct Reps {
    Matrix z;                          // n x d
    std::vector<CompositeClass> classes;
    std::vector<Split> splits;

    static Reps from_bundle(const RepresentationBundle& bundle, const std::string& layer = {});
    std::size_t size() const noexcept { return classes.size(); }
    /// Rows whose split matches and whose class passes the filter.
    std::vector<std::size_t> select(std::optional<Split> split, const std::function<bool(const CompositeClass&)>& keep) const;
    Matrix rows(std::span<const std::size_t> idx) const;
    std::vector<int> labels(std::span<const std::size_t> idx, ProbeTarget t) const;
};

struct SuiteOptions {
    Thresholds thresholds;
    ProbeHyper hyper;
    InlpOptions inlp;
};

/// Trains the composite probe on train-split items (all classes).
LinearProbe train_composite_probe(const Reps& reps, const ProbeHyper& hyper);

/// Accuracy of predict(encode(x)) over every minimal-pair item.
TestResult run_is_grounded(const Encoder& encoder, const LinearProbe& composite_probe, const MinimalPairSet& pairs,
                           const Thresholds& thresholds = {});
/// Same, from precomputed minimal-pair representations.
TestResult run_is_grounded(const LinearProbe& composite_probe, const Matrix& pair_reps,
                           std::span<const CompositeClass> truth, const Thresholds& thresholds = {});

/// Concept probe for `dimension` trained on seen classes (train split),
/// evaluated on seen and unseen classes (test split).
TestResult run_is_token_of_type(const Reps& reps, const SeenUnseenSplit& split, const SuiteOptions& options = {});

/// Projection fitted on seen classes of the ablated dimension's split; every
/// dimension's probe is retrained on ablated reps of its own seen classes and
/// evaluated on its own unseen classes.
TestResult run_is_modular(const Reps& reps, const SplitPlan& plan, Dimension ablated, const SuiteOptions& options = {});
TestResult run_is_modular(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                          const NullspaceProjection& projection, const SuiteOptions& options = {});

/// The un-ablated composite probe applied to ablated reps of the ablated
/// dimension's unseen classes; reports per-dimension match rates.
TestResult run_is_causal(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                         const LinearProbe& composite_probe, const NullspaceProjection& projection,
                         const SuiteOptions& options = {});

/// Fits the ablation projection for `ablated` as the modularity and causality
/// tests expect.
NullspaceProjection fit_projection(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                                   const InlpOptions& options = {});

} // namespace uc
