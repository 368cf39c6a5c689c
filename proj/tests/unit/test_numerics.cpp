#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "unitconcepts/errors.hpp"
#include "unitconcepts/numerics.hpp"
#include "unitconcepts/rng.hpp"

using namespace uc;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(int r, int c, std::uint64_t seed) {
    Rng rng = make_rng(seed, {42});
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

// Classical Gram-Schmidt over the rows, dropping near-dependent ones.
Matrix gram_schmidt_rows(const Matrix& w) {
    std::vector<Vector> basis;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        Vector v = w.row(i).transpose();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) v -= b.dot(v) * b;
        if (v.norm() > 1e-9 * std::max(1.0, w.row(i).norm())) basis.push_back(v.normalized());
    }
    Matrix out(w.cols(), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t k = 0; k < basis.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = basis[k];
    return out;
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("uc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("orthonormal basis spans the same space as Gram-Schmidt", "[numerics]") {
    Matrix w = random_matrix(4, 9, 1);
    w.row(3) = 2.0 * w.row(0) - w.row(1);  // rank 3
    const Matrix b = orthonormal_basis(w);
    const Matrix g = gram_schmidt_rows(w);
    REQUIRE(b.cols() == 3);
    REQUIRE(g.cols() == 3);
    CHECK(numerical_rank(w) == 3);
    CHECK((b.transpose() * b - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
    // Same projector.
    CHECK((b * b.transpose() - g * g.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("rowspace projection properties", "[numerics]") {
    const Matrix w = random_matrix(3, 12, 2);
    const auto rp = rowspace_projection(w);
    const Matrix& p = rp.p;
    CHECK(rp.rank_removed == 3);
    CHECK_FALSE(rp.degenerate);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((w * p).cwiseAbs().maxCoeff() < 1e-12 * w.cwiseAbs().maxCoeff());
    CHECK(std::abs(p.trace() - 9.0) < 1e-10);

    const auto zero = rowspace_projection(Matrix::Zero(2, 5));
    CHECK(zero.degenerate);
    CHECK(zero.rank_removed == 0);
    CHECK(zero.p.isApprox(Matrix::Identity(5, 5)));
}

TEST_CASE("adam step matches a hand computation", "[numerics]") {
    Matrix params(1, 2);
    params << 1.0, -2.0;
    Matrix g(1, 2);
    g << 0.5, -4.0;
    AdamState<double> st(1, 2, AdamHyper{0.1, 0.9, 0.999, 1e-8});
    adam_step(params, g, st);
    // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(params(0, 0) == Catch::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(params(0, 1) == Catch::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));

    Matrix g2(1, 2);
    g2 << -1.0, 0.0;
    adam_step(params, g2, st);
    const double m = 0.9 * 0.05 + 0.1 * -1.0;
    const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    CHECK(params(0, 0) == Catch::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));

    Matrix bad(1, 2);
    bad << std::nan(""), 0.0;
    CHECK_THROWS_AS(adam_step(params, bad, st), NumericsError);
    Matrix wrong(2, 2);
    CHECK_THROWS_AS(adam_step(params, wrong, st), NumericsError);
}

TEST_CASE("adam minimizes a quadratic", "[numerics]") {
    Matrix x = Matrix::Constant(1, 3, 5.0);
    AdamState<double> st(1, 3, AdamHyper{0.05});
    for (int i = 0; i < 2000; ++i) {
        Matrix g = 2.0 * (x.array() - 1.0).matrix();
        adam_step(x, g, st);
    }
    CHECK((x.array() - 1.0).abs().maxCoeff() < 1e-3);
}

TEST_CASE("finite difference checker", "[numerics]") {
    const auto f = [](const Vector& v) { return std::sin(v(0)) * v(1) + v(1) * v(1) * v(2); };
    Vector x(3);
    x << 0.3, -1.2, 0.7;
    Vector g(3);
    g << std::cos(0.3) * -1.2, std::sin(0.3) + 2 * -1.2 * 0.7, 1.44;
    CHECK(finite_diff_check(f, x, g) < 1e-7);
    g(2) += 0.1;
    CHECK(finite_diff_check(f, x, g) > 1e-2);
}

TEST_CASE("CBM files round-trip exactly", "[numerics]") {
    const auto dir = temp_dir("cbm");
    const Matrix m = random_matrix(5, 7, 3);
    write_cbm(dir / "d.cbm", m);
    CHECK(read_cbm(dir / "d.cbm") == m);
    const MatrixF f = m.cast<float>();
    write_cbm(dir / "f.cbm", f);
    CHECK(read_cbm_f32(dir / "f.cbm") == f);
    const auto h = read_cbm_header(dir / "f.cbm");
    CHECK(h.rows == 5);
    CHECK(h.cols == 7);
    CHECK(h.dtype == CbmDtype::Float32);
    CHECK(fs::file_size(dir / "f.cbm") == kCbmHeaderBytes + 5 * 7 * 4);
    CHECK(read_cbm(dir / "f.cbm") == f.cast<double>());
    CHECK_THROWS_AS(read_cbm_f32(dir / "d.cbm"), FormatError);

    // Byte layout: magic, little-endian dims and dtype, row-major payload.
    std::ifstream in(dir / "f.cbm", std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "CBM1");
    std::uint64_t rows = 0;
    in.read(reinterpret_cast<char*>(&rows), 8);
    CHECK(rows == 5);
    in.seekg(static_cast<std::streamoff>(kCbmHeaderBytes + 4));
    float second = 0;
    in.read(reinterpret_cast<char*>(&second), 4);
    CHECK(second == f(0, 1));
}

TEST_CASE("truncated or corrupt CBM files are rejected", "[numerics]") {
    const auto dir = temp_dir("cbm_bad");
    write_cbm(dir / "t.cbm", MatrixF(MatrixF::Ones(4, 4)));
    fs::resize_file(dir / "t.cbm", kCbmHeaderBytes + 10);
    CHECK_THROWS_AS(read_cbm_f32(dir / "t.cbm"), FormatError);
    {
        std::ofstream out(dir / "m.cbm", std::ios::binary);
        out << "XXXX0000000000000000000000000000";
    }
    CHECK_THROWS_AS(read_cbm_header(dir / "m.cbm"), FormatError);
    CHECK_THROWS_AS(read_cbm(dir / "missing.cbm"), IoError);
}
