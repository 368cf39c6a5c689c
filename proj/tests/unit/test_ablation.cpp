#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "unitconcepts/errors.hpp"
#include "unitconcepts/ablation.hpp"
#include "unitconcepts/rng.hpp"
#include "../support/synthetic.hpp"

using namespace uc;

using uc::testing::gaussian_classes;
using uc::testing::toy;

TEST_CASE("INLP projection is an orthogonal projection killing the probe", "[ablation]") {
    Matrix x;
    std::vector<int> y;
    gaussian_classes(300, 10, 3, 1, x, y);
    const auto proj = inlp_fit(x, y, ProbeTarget::Layout);
    const Matrix& p = proj.p;
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-9);

    // Zero-init training is deterministic, so this is the first iteration's probe.
    const auto probe = train_probe(x, y, ProbeTarget::Layout);
    const Matrix w = probe.effective_weights();
    CHECK((w * p).cwiseAbs().maxCoeff() < 1e-8 * w.cwiseAbs().maxCoeff());

    REQUIRE(proj.iterations.size() == 1);
    CHECK(proj.iterations[0].rank_removed == numerical_rank(w));
    CHECK(proj.total_rank_removed() == numerical_rank(w));
    CHECK(proj.rank() == 10 - numerical_rank(w));
    CHECK(numerical_rank(p) == proj.rank());
    CHECK(proj.iterations[0].probe_accuracy > 0.9);
}

TEST_CASE("INLP rank bookkeeping over iterations", "[ablation]") {
    Matrix x;
    std::vector<int> y;
    gaussian_classes(400, 12, 3, 2, x, y);
    InlpOptions opt;
    opt.iterations = 3;
    const auto proj = inlp_fit(x, y, ProbeTarget::Layout, opt);
    int sum = 0;
    for (const auto& it : proj.iterations) {
        CHECK(it.rank_removed >= 1);
        sum += it.rank_removed;
    }
    CHECK(sum == proj.total_rank_removed());
    CHECK(proj.total_rank_removed() == 12 - numerical_rank(proj.p));
    CHECK(proj.rank() == numerical_rank(proj.p));
    CHECK((proj.p * proj.p - proj.p).cwiseAbs().maxCoeff() < 1e-9);

    // Removing every direction leaves the zero map.
    gaussian_classes(400, 4, 3, 3, x, y);
    const auto all = inlp_fit(x, y, ProbeTarget::Layout, opt);
    if (all.total_rank_removed() == 4) {
        CHECK(all.rank() == 0);
        CHECK(all.p.cwiseAbs().maxCoeff() < 1e-9);
    } else {
        CHECK(all.rank() == numerical_rank(all.p));
    }

    // A two-class probe has rank one.
    Matrix xt;
    std::vector<int> yt;
    toy(200, 3, xt, yt);
    const auto two = inlp_fit(xt, yt, ProbeTarget::Stroke);
    CHECK(two.total_rank_removed() == 1);
    CHECK(two.rank() == 1);
}

TEST_CASE("INLP on the separable 2-D toy leaves chance accuracy", "[ablation]") {
    Matrix x, xt;
    std::vector<int> y, yt;
    toy(2000, 7, x, y);
    toy(20000, 8, xt, yt);
    CHECK(train_probe(x, y, ProbeTarget::Stroke).train_accuracy > 0.99);
    const auto proj = inlp_fit(x, y, ProbeTarget::Stroke);
    const auto after = train_probe(ablate(x, proj), y, ProbeTarget::Stroke);
    CHECK(std::abs(eval_accuracy(after, ablate(xt, proj), yt) - 0.5) <= 0.02);
}

TEST_CASE("INLP stops when nothing is left to remove", "[ablation]") {
    Matrix x;
    std::vector<int> y;
    toy(100, 4, x, y);
    InlpOptions opt;
    opt.iterations = 5;
    const auto proj = inlp_fit(x, y, ProbeTarget::Stroke, opt);
    CHECK(proj.exhausted);
    CHECK(proj.iterations.size() < 5);
    CHECK(proj.total_rank_removed() <= 2);
}

TEST_CASE("ablate and persistence", "[ablation]") {
    const auto id = identity_projection(3);
    const Matrix m = Matrix::Random(4, 3);
    CHECK(ablate(m, id) == m);
    CHECK(id.rank() == 3);
    CHECK_THROWS_AS(ablate(Matrix(Matrix::Random(2, 4)), id), InputError);
    CHECK_THROWS_AS(ablate(Vector(Vector::Ones(2)), id), InputError);

    Matrix x;
    std::vector<int> y;
    gaussian_classes(90, 5, 3, 5, x, y);
    const auto proj = inlp_fit(x, y, ProbeTarget::Shape);
    const Vector z = x.row(0).transpose();
    CHECK((ablate(z, proj) - ablate(x, proj).row(0).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const auto stem = std::filesystem::temp_directory_path() / "uc_test_projection";
    save_projection(proj, stem);
    const auto back = load_projection(stem);
    CHECK(back.p == proj.p);
    CHECK(back.total_rank_removed() == proj.total_rank_removed());
    CHECK(back.target == proj.target);
}
