#pragma once

// Small synthetic inputs shared by the unit and acceptance tests.

#include <cstdint>
#include <vector>

#include "unitconcepts/encoder.hpp"
#include "unitconcepts/numerics.hpp"
#include "unitconcepts/rng.hpp"

namespace uc::testing {

// Two classes separated along x, with y pure noise.
inline void toy(int n, std::uint64_t seed, Matrix& x, std::vector<int>& y) {
    Rng rng = make_rng(seed, {1});
    x.resize(n, 2);
    y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = i % 2;
        y[static_cast<std::size_t>(i)] = c;
        x(i, 0) = (c ? 1.0 : -1.0) + 0.1 * normal(rng);
        x(i, 1) = normal(rng);
    }
}

// k Gaussian blobs in d dimensions.
inline void gaussian_classes(int n, int d, int k, std::uint64_t seed, Matrix& x, std::vector<int>& y) {
    Rng rng = make_rng(seed, {2});
    Matrix centers(k, d);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = normal(rng);
    x.resize(n, d);
    y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        y[static_cast<std::size_t>(i)] = i % k;
        for (int j = 0; j < d; ++j) x(i, j) = centers(i % k, j) + 0.5 * normal(rng);
    }
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    return m;
}

inline FeatureMap<double> random_map(int n, int c, int h, int w, Rng& rng) {
    FeatureMap<double> x(n, c, h, w);
    x.data = random_matrix(c, static_cast<Eigen::Index>(n) * h * w, rng);
    return x;
}

inline Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

} // namespace uc::testing
