#pragma once

// Synthetic representations with known structure, shared by the unit and
// acceptance tests.

#include <vector>

#include "unitconcepts/bundle.hpp"
#include "unitconcepts/suite.hpp"

namespace uc::testing {

/// One-hot code per atomic concept: 3 + 3 + 2 coordinates.
inline Eigen::RowVectorXd one_hot_code(const CompositeClass& c) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(kNumAtomicConcepts);
    v(c.value(Dimension::Layout)) = 1;
    v(3 + c.value(Dimension::Shape)) = 1;
    v(6 + c.value(Dimension::Stroke)) = 1;
    return v;
}

/// One-hot code of the class index: concepts are entangled.
inline Eigen::RowVectorXd class_code(const CompositeClass& c) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(kNumClasses);
    v(c.index()) = 1;
    return v;
}

template <typename Code>
Reps make_reps(int per_class, Code code) {
    Reps r;
    for (auto sp : {Split::Train, Split::Test})
        for (int k = 0; k < per_class; ++k)
            for (const auto& c : all_classes()) {
                r.classes.push_back(c);
                r.splits.push_back(sp);
            }
    const auto d = code(all_classes()[0]).size();
    r.z.resize(static_cast<Eigen::Index>(r.classes.size()), d);
    for (std::size_t i = 0; i < r.classes.size(); ++i) r.z.row(static_cast<Eigen::Index>(i)) = code(r.classes[i]);
    return r;
}

inline Reps oracle_reps(int per_class = 10) { return make_reps(per_class, one_hot_code); }

/// A bundle whose final layer is the one-hot concept code and whose first
/// layer is the code mixed with seeded noise.
inline RepresentationBundle oracle_bundle(int per_class = 10, std::uint64_t seed = 0) {
    const Reps r = oracle_reps(per_class);
    RepresentationBundle b;
    b.encoder = "one-hot-oracle";
    for (std::size_t i = 0; i < r.size(); ++i)
        b.labels.push_back({static_cast<std::uint64_t>(i), r.classes[i], Rgb{}, r.splits[i]});
    Rng rng = make_rng(seed, {0x0a});
    MatrixF noisy(r.z.rows(), 8);
    for (Eigen::Index i = 0; i < noisy.rows(); ++i)
        for (Eigen::Index j = 0; j < 8; ++j) noisy(i, j) = static_cast<float>(0.3 * r.z(i, j) + normal(rng));
    b.layers.push_back({"noisy", noisy});
    b.layers.push_back({"final", r.z.cast<float>()});
    return b;
}

} // namespace uc::testing
