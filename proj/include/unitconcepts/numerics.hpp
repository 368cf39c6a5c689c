#pragma once

// Dense linear algebra helpers, the Adam optimizer, rowspace projections and
// the CBM1 matrix file format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "unitconcepts/errors.hpp"

namespace uc {

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = MatrixT<double>;
using MatrixF = MatrixT<float>;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff for all rank decisions.
inline constexpr double kRankTolerance = 1e-10;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
    if (!m.allFinite()) throw NumericsError(std::string(what) + " contains non-finite values");
}

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamHyper hyper;
    std::int64_t t = 0;
    MatrixT<T> m;
    MatrixT<T> v;

    AdamState() = default;
    AdamState(Eigen::Index rows, Eigen::Index cols, AdamHyper h = {})
        : hyper(h), m(MatrixT<T>::Zero(rows, cols)), v(MatrixT<T>::Zero(rows, cols)) {}
};

/// One bias-corrected Adam update, in place. Throws NumericsError on
/// non-finite gradients or mismatched shapes.
template <typename T>
void adam_step(MatrixT<T>& params, const MatrixT<T>& grads, AdamState<T>& state) {
    if (grads.rows() != params.rows() || grads.cols() != params.cols() || state.m.rows() != params.rows() ||
        state.m.cols() != params.cols())
        throw NumericsError("adam_step: shape mismatch");
    require_finite(grads, "adam_step gradient");
    const auto& h = state.hyper;
    state.t += 1;
    state.m = static_cast<T>(h.beta1) * state.m + static_cast<T>(1.0 - h.beta1) * grads;
    state.v = static_cast<T>(h.beta2) * state.v + static_cast<T>(1.0 - h.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    const T step = static_cast<T>(h.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    params.array() -= step * state.m.array() / ((state.v.array() * inv_c2).sqrt() + static_cast<T>(h.eps));
}

/// Orthonormal basis of rowspace(W) as the columns of a d x r matrix.
/// The rank r counts singular values above kRankTolerance * sigma_max.
Matrix orthonormal_basis(const Matrix& w);

/// Numerical rank with the same cutoff as orthonormal_basis.
int numerical_rank(const Matrix& w);

struct RowspaceProjection {
    Matrix p;                // d x d, projects onto the nullspace of W
    int rank_removed = 0;    // rank(W)
    bool degenerate = false; // W was all-zero; p is the identity
};

/// P = I - B B^T with B = orthonormal_basis(W). P is symmetric and idempotent
/// and W P = 0.
RowspaceProjection rowspace_projection(const Matrix& w);

/// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
/// with central differences of step h. If max_coords > 0 and smaller than the
/// parameter count, a deterministic subsample of coordinates is checked.
double finite_diff_check(const std::function<double(const Vector&)>& f, const Vector& params, const Vector& analytic,
                         double h = 1e-4, double abs_floor = 1e-6, int max_coords = 0, std::uint64_t seed = 0);

// CBM1: "CBM1" | rows u64 | cols u64 | dtype u32 | row-major data, all little-endian.
enum class CbmDtype : std::uint32_t { Float32 = 1, Float64 = 2 };
inline constexpr std::size_t kCbmHeaderBytes = 24;

void write_cbm(const std::filesystem::path& path, const MatrixF& m);
void write_cbm(const std::filesystem::path& path, const Matrix& m);

struct CbmHeader {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    CbmDtype dtype = CbmDtype::Float32;
};

CbmHeader read_cbm_header(const std::filesystem::path& path);
/// Exact read of a float32 file.
MatrixF read_cbm_f32(const std::filesystem::path& path);
/// Reads either dtype, widening float32.
Matrix read_cbm(const std::filesystem::path& path);

} // namespace uc
