#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "../support/oracle.hpp"
#include "unitconcepts/errors.hpp"
#include "unitconcepts/analysis.hpp"

using namespace uc;

namespace {

// NMI from the identity I = H(A) + H(B) - H(A,B).
double nmi_reference(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    std::map<int, double> pa, pb;
    std::map<std::pair<int, int>, double> pab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[a[i]] += 1 / n;
        pb[b[i]] += 1 / n;
        pab[{a[i], b[i]}] += 1 / n;
    }
    auto h = [](const auto& m) {
        double s = 0;
        for (const auto& [k, p] : m) s -= p * std::log(p);
        return s;
    };
    const double ha = h(pa), hb = h(pb);
    return (ha + hb - h(pab)) / ((ha + hb) / 2);
}

} // namespace

TEST_CASE("NMI agrees with the entropy identity", "[analysis]") {
    Rng rng = make_rng(3, {});
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> a, b;
        for (int i = 0; i < 200; ++i) {
            a.push_back(static_cast<int>(uniform_int(rng, 0, 5)));
            b.push_back(uniform(rng, 0, 1) < 0.6 ? a.back() : static_cast<int>(uniform_int(rng, 0, 3)));
        }
        CHECK(nmi(a, b) == Catch::Approx(nmi_reference(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("NMI edge cases", "[analysis]") {
    const std::vector<int> a{0, 0, 1, 1, 2, 2};
    const std::vector<int> relabeled{5, 5, 3, 3, 9, 9};
    CHECK(nmi(a, a) == Catch::Approx(1.0));
    CHECK(nmi(a, relabeled) == Catch::Approx(1.0));
    // Independent by construction.
    CHECK(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}) == Catch::Approx(0.0).margin(1e-15));
    CHECK(nmi(std::vector<int>{4, 4, 4}, std::vector<int>{1, 1, 1}) == 1.0);
    CHECK(nmi(std::vector<int>{4, 4, 4}, std::vector<int>{1, 2, 1}) == 0.0);
    CHECK_THROWS_AS(nmi(std::vector<int>{1}, std::vector<int>{1, 2}), InputError);
    CHECK_THROWS_AS(nmi(std::vector<int>{}, std::vector<int>{}), InputError);
}

TEST_CASE("composed prediction combines the dimension probes", "[analysis]") {
    const Reps r = uc::testing::oracle_reps(5);
    std::vector<LinearProbe> probes;
    std::vector<std::size_t> all(r.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (auto d : kDimensions) {
        const auto t = target_for(d);
        probes.push_back(train_probe(r.z, r.labels(all, t), t));
    }
    const auto pred = composed_prediction(probes, r.z);
    REQUIRE(pred.size() == r.size());
    for (std::size_t i = 0; i < pred.size(); ++i) CHECK(pred[i] == r.classes[i]);
    CHECK_THROWS_AS(composed_prediction(std::span<const LinearProbe>(probes.data(), 2), r.z), InputError);
}

TEST_CASE("layerwise report on the oracle bundle", "[analysis]") {
    const auto b = uc::testing::oracle_bundle(20, 1);
    const auto recs = layerwise_report(b);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].layer == "noisy");
    const auto& last = recs[1];
    CHECK(last.acc_composed == 1.0);
    CHECK(last.acc_direct == 1.0);
    CHECK(last.nmi == Catch::Approx(1.0));
    CHECK(last.n_items == 360);
    for (const auto& r : recs) {
        CHECK(r.acc_composed <= std::min({r.acc_layout, r.acc_shape, r.acc_stroke}));
        CHECK(r.nmi >= 0.0);
        CHECK(r.nmi <= 1.0);
    }
    CHECK(recs[0].nmi < last.nmi);

    const auto path = std::filesystem::temp_directory_path() / "uc_test_layerwise.csv";
    write_layerwise_csv(recs, path);
    std::ifstream in(path);
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "layer,acc_layout,acc_shape,acc_stroke,acc_composed,acc_direct,nmi");
    CHECK(first.rfind("noisy,", 0) == 0);
}

TEST_CASE("direct classification", "[analysis]") {
    const Reps r = uc::testing::oracle_reps(4);
    const auto train = r.select(Split::Train, [](const CompositeClass&) { return true; });
    const auto test = r.select(Split::Test, [](const CompositeClass&) { return true; });
    const auto res = direct_classification(r.rows(train), r.labels(train, ProbeTarget::Composite), r.rows(test),
                                           r.labels(test, ProbeTarget::Composite));
    CHECK(res.accuracy == 1.0);
    CHECK(res.predictions.size() == test.size());
}
