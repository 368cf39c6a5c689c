#include "unitconcepts/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <vector>

#include "unitconcepts/rng.hpp"

namespace uc {

static_assert(std::endian::native == std::endian::little, "CBM I/O assumes a little-endian host");

namespace {

struct Svd {
    Matrix v;
    Vector s;
};

Svd right_singular(const Matrix& w) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinV);
    return {svd.matrixV(), svd.singularValues()};
}

int rank_from(const Vector& s) {
    if (s.size() == 0 || s(0) <= 0.0) return 0;
    const double cutoff = kRankTolerance * s(0);
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) ++r;
    return r;
}

} // namespace

Matrix orthonormal_basis(const Matrix& w) {
    require_finite(w, "orthonormal_basis input");
    if (w.rows() == 0 || w.cols() == 0) return Matrix(w.cols(), 0);
    const auto svd = right_singular(w);
    const int r = rank_from(svd.s);
    return svd.v.leftCols(r);
}

int numerical_rank(const Matrix& w) {
    require_finite(w, "numerical_rank input");
    if (w.rows() == 0 || w.cols() == 0) return 0;
    return rank_from(right_singular(w).s);
}

RowspaceProjection rowspace_projection(const Matrix& w) {
    if (w.rows() < 1) throw NumericsError("rowspace_projection needs at least one row");
    const Matrix b = orthonormal_basis(w);
    const auto d = w.cols();
    RowspaceProjection out;
    out.rank_removed = static_cast<int>(b.cols());
    out.degenerate = out.rank_removed == 0;
    Matrix p = Matrix::Identity(d, d) - b * b.transpose();
    out.p = 0.5 * (p + p.transpose());
    return out;
}

double finite_diff_check(const std::function<double(const Vector&)>& f, const Vector& params, const Vector& analytic,
                         double h, double abs_floor, int max_coords, std::uint64_t seed) {
    if (params.size() != analytic.size()) throw NumericsError("finite_diff_check: size mismatch");
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(params.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (max_coords > 0 && static_cast<std::size_t>(max_coords) < coords.size()) {
        Rng rng = make_rng(seed, {0xfdc});
        for (std::size_t i = 0; i < static_cast<std::size_t>(max_coords); ++i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(coords.size()) - 1));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(static_cast<std::size_t>(max_coords));
    }
    double worst = 0.0;
    Vector x = params;
    for (const auto i : coords) {
        const double orig = x(i);
        x(i) = orig + h;
        const double fp = f(x);
        x(i) = orig - h;
        const double fm = f(x);
        x(i) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic(i);
        const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

namespace {

template <typename T>
void write_cbm_impl(const std::filesystem::path& path, const MatrixT<T>& m, CbmDtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const std::uint64_t rows = static_cast<std::uint64_t>(m.rows()), cols = static_cast<std::uint64_t>(m.cols());
    const auto code = static_cast<std::uint32_t>(dtype);
    out.write("CBM1", 4);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(&code), 4);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
    if (!out) throw IoError("write failed: " + path.string());
}

std::size_t dtype_size(CbmDtype d) { return d == CbmDtype::Float32 ? 4 : 8; }

} // namespace

void write_cbm(const std::filesystem::path& path, const MatrixF& m) { write_cbm_impl(path, m, CbmDtype::Float32); }
void write_cbm(const std::filesystem::path& path, const Matrix& m) { write_cbm_impl(path, m, CbmDtype::Float64); }

CbmHeader read_cbm_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    CbmHeader h;
    std::uint32_t code = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&h.rows), 8);
    in.read(reinterpret_cast<char*>(&h.cols), 8);
    in.read(reinterpret_cast<char*>(&code), 4);
    if (!in) throw FormatError("truncated CBM header: " + path.string());
    if (std::memcmp(magic, "CBM1", 4) != 0) throw FormatError("bad CBM magic: " + path.string());
    if (code != 1 && code != 2) throw FormatError("unknown CBM dtype " + std::to_string(code) + ": " + path.string());
    h.dtype = static_cast<CbmDtype>(code);
    const auto expected = kCbmHeaderBytes + h.rows * h.cols * dtype_size(h.dtype);
    const auto actual = std::filesystem::file_size(path);
    if (actual != expected)
        throw FormatError("CBM size mismatch (" + std::to_string(actual) + " bytes, expected " +
                          std::to_string(expected) + "): " + path.string());
    return h;
}

namespace {

template <typename T>
MatrixT<T> read_payload(const std::filesystem::path& path, const CbmHeader& h) {
    MatrixT<T> m(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
    std::ifstream in(path, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(kCbmHeaderBytes));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(T)));
    if (!in) throw FormatError("truncated CBM payload: " + path.string());
    return m;
}

} // namespace

MatrixF read_cbm_f32(const std::filesystem::path& path) {
    const auto h = read_cbm_header(path);
    if (h.dtype != CbmDtype::Float32) throw FormatError("expected float32 CBM: " + path.string());
    return read_payload<float>(path, h);
}

Matrix read_cbm(const std::filesystem::path& path) {
    const auto h = read_cbm_header(path);
    if (h.dtype == CbmDtype::Float64) return read_payload<double>(path, h);
    return read_payload<float>(path, h).cast<double>();
}

} // namespace uc
