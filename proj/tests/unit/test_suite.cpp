#include <catch2/catch_amalgamated.hpp>

#include "../support/oracle.hpp"
#include "unitconcepts/errors.hpp"
#include "unitconcepts/suite.hpp"

using namespace uc;
using uc::testing::oracle_reps;

namespace {

TestResult with(std::vector<Condition> conds, bool expected_to_fail = false) {
    TestResult r;
    r.conditions = std::move(conds);
    r.expected_to_fail = expected_to_fail;
    finalize(r, Thresholds{});
    return r;
}

Condition cond(std::string name, double acc, Requirement r, std::optional<Dimension> d = std::nullopt) {
    return {std::move(name), acc, r, d, 0};
}

} // namespace

TEST_CASE("verdict thresholds are applied exactly", "[suite]") {
    const Thresholds t;
    CHECK_FALSE(satisfied(cond("a", 0.75, Requirement::High), t));
    CHECK(satisfied(cond("a", 0.7501, Requirement::High), t));
    CHECK(satisfied(cond("a", 1.0 / 3 + 0.15, Requirement::Low, Dimension::Shape), t));
    CHECK_FALSE(satisfied(cond("a", 1.0 / 3 + 0.1501, Requirement::Low, Dimension::Shape), t));
    CHECK(satisfied(cond("a", 0.65, Requirement::Low, Dimension::Stroke), t));
    CHECK_FALSE(satisfied(cond("a", 0.66, Requirement::Low, Dimension::Stroke), t));
    CHECK(satisfied(cond("a", 0.95, Requirement::Grounded), t));
    CHECK_FALSE(satisfied(cond("a", 0.9499, Requirement::Grounded), t));
    CHECK(satisfied(cond("a", 0.0, Requirement::Info), t));

    CHECK(with({cond("a", 0.9, Requirement::High), cond("b", 0.1, Requirement::Info)}).verdict == Verdict::Pass);
    CHECK(with({cond("a", 0.9, Requirement::High), cond("b", 0.9, Requirement::Low, Dimension::Layout)}).verdict == Verdict::Fail);
    CHECK(with({cond("a", 0.9, Requirement::High), cond("b", 0.9, Requirement::Low, Dimension::Layout)}, true).verdict ==
          Verdict::ExpectedFail);
    CHECK(with({cond("a", 0.9, Requirement::High)}, true).verdict == Verdict::Pass);
    CHECK(to_string(Verdict::ExpectedFail) == "EXPECTED-FAIL");
}

TEST_CASE("split plans give each dimension its own split", "[suite]") {
    const SplitPlan plan{SplitMode::OneSlice, 4};
    for (auto d : kDimensions) {
        const auto s = plan.split(d);
        CHECK(s.dimension == d);
        CHECK(s.seen == make_split(d, SplitMode::OneSlice, 4).seen);
    }
}

TEST_CASE("the one-hot oracle passes all four tests", "[suite][oracle]") {
    const Reps r = oracle_reps(10);
    SuiteOptions opt;
    const auto composite = train_composite_probe(r, opt.hyper);

    std::vector<CompositeClass> truth;
    Matrix pair_reps(18 * 3, 8);
    for (int row = 0; row < 3; ++row)
        for (const auto& c : all_classes()) {
            pair_reps.row(static_cast<Eigen::Index>(truth.size())) = uc::testing::one_hot_code(c);
            truth.push_back(c);
        }
    const auto g = run_is_grounded(composite, pair_reps, truth, opt.thresholds);
    CHECK(g.verdict == Verdict::Pass);
    CHECK(g.conditions.at(0).accuracy == 1.0);

    for (auto mode : {SplitMode::OneSlice, SplitMode::NMinus1Slices})
        for (std::uint64_t seed : {0ULL, 3ULL}) {
            const SplitPlan plan{mode, seed};
            for (auto d : kDimensions) {
                INFO(to_string(mode) << " seed " << seed << " " << to_string(d));
                const auto t = run_is_token_of_type(r, plan.split(d), opt);
                CHECK(t.verdict == Verdict::Pass);
                CHECK(t.condition("unseen").accuracy == 1.0);
                const auto p = fit_projection(r, plan, d, opt.inlp);
                const auto m = run_is_modular(r, plan, d, p, opt);
                CHECK(m.verdict == Verdict::Pass);
                CHECK(m.condition(std::string(to_string(d))).accuracy <= Thresholds::chance(d) + 0.15);
                const auto c = run_is_causal(r, plan, d, composite, p, opt);
                CHECK(c.verdict == Verdict::Pass);
                CHECK(c.expected_to_fail);
                CHECK(c.confusion.size() == 18);
            }
        }
}

TEST_CASE("entangled class codes fail token-of-type on unseen classes", "[suite]") {
    const Reps r = uc::testing::make_reps(10, uc::testing::class_code);
    SuiteOptions opt;
    const auto t = run_is_token_of_type(r, make_split(Dimension::Shape, SplitMode::OneSlice, 0), opt);
    CHECK(t.condition("seen").accuracy == 1.0);
    CHECK(t.condition("unseen").accuracy < 0.5);
    CHECK(t.verdict == Verdict::Fail);
}

TEST_CASE("without ablation the concept survives and modularity fails", "[suite]") {
    const Reps r = oracle_reps(10);
    SuiteOptions opt;
    const SplitPlan plan{SplitMode::NMinus1Slices, 0};
    const auto m = run_is_modular(r, plan, Dimension::Shape, identity_projection(8), opt);
    CHECK(m.condition("shape").accuracy == 1.0);
    CHECK(m.verdict == Verdict::Fail);
    const auto composite = train_composite_probe(r, opt.hyper);
    const auto c = run_is_causal(r, plan, Dimension::Shape, composite, identity_projection(8), opt);
    CHECK(c.condition("shape").accuracy == 1.0);
    CHECK(c.verdict == Verdict::ExpectedFail);
}

TEST_CASE("results serialize with rules and snapshots", "[suite]") {
    const Reps r = oracle_reps(4);
    const auto t = run_is_token_of_type(r, make_split(Dimension::Layout, SplitMode::NMinus1Slices, 1));
    const auto j = t.to_json(Thresholds{});
    CHECK(j.at("test") == "is_token_of_type");
    CHECK(j.at("verdict") == "PASS");
    CHECK(j.at("conditions").size() == 2);
    CHECK(j.at("conditions").at(1).at("satisfied") == true);
    CHECK(j.contains("rule"));
    CHECK(j.contains("config"));
    CHECK_THROWS_AS(t.condition("nope"), Error);
}

TEST_CASE("reps from bundles", "[suite]") {
    const auto b = uc::testing::oracle_bundle(3);
    const auto r = Reps::from_bundle(b);
    CHECK(r.size() == b.n_items());
    CHECK(r.z.cols() == 8);
    CHECK(Reps::from_bundle(b, "noisy").z.cols() == 8);
    const auto test = r.select(Split::Test, [](const CompositeClass& c) { return c.value(Dimension::Stroke) == 1; });
    CHECK(test.size() == 27);
    CHECK(r.labels(test, ProbeTarget::Stroke) == std::vector<int>(27, 1));
}
