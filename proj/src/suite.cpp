#include "unitconcepts/suite.hpp"

#include <algorithm>

namespace uc {

namespace {

using json = nlohmann::json;

std::string dim_name(Dimension d) { return std::string(to_string(d)); }

std::size_t count_correct(std::span<const int> pred, std::span<const int> truth) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == truth[i];
    return c;
}

double ratio(std::size_t a, std::size_t b) {
    if (b == 0) throw EvalError("no items to evaluate");
    return static_cast<double>(a) / static_cast<double>(b);
}

json split_json(const SeenUnseenSplit& s) {
    json seen = json::array(), unseen = json::array();
    for (const auto& c : s.seen) seen.push_back(c.canonical_name());
    for (const auto& c : s.unseen) unseen.push_back(c.canonical_name());
    return {{"dimension", to_string(s.dimension)},
            {"mode", to_string(s.mode)},
            {"seed", s.seed},
            {"seen", seen},
            {"unseen", unseen}};
}

std::string requirement_text(const Condition& c, const Thresholds& t) {
    char buf[96];
    switch (c.requirement) {
    case Requirement::Info: return "reported";
    case Requirement::High: std::snprintf(buf, sizeof buf, "> %.2f", t.high); return buf;
    case Requirement::Low:
        std::snprintf(buf, sizeof buf, "<= %.4f (chance %.4f + %.2f)", Thresholds::chance(*c.dimension) + t.low_margin,
                      Thresholds::chance(*c.dimension), t.low_margin);
        return buf;
    case Requirement::Grounded: std::snprintf(buf, sizeof buf, ">= %.2f", t.grounded_pass); return buf;
    }
    return "";
}

Matrix to_double(const MatrixF& m) { return m.cast<double>(); }

} // namespace

std::string_view to_string(Verdict v) noexcept {
    switch (v) {
    case Verdict::Pass: return "PASS";
    case Verdict::Fail: return "FAIL";
    case Verdict::ExpectedFail: return "EXPECTED-FAIL";
    }
    return "?";
}

bool satisfied(const Condition& c, const Thresholds& t) noexcept {
    switch (c.requirement) {
    case Requirement::Info: return true;
    case Requirement::High: return t.is_high(c.accuracy);
    case Requirement::Low: return c.dimension && t.is_low(c.accuracy, *c.dimension);
    case Requirement::Grounded: return c.accuracy >= t.grounded_pass;
    }
    return false;
}

Verdict verdict(const TestResult& result, const Thresholds& thresholds) noexcept {
    for (const auto& c : result.conditions)
        if (!satisfied(c, thresholds)) return Verdict::Fail;
    return Verdict::Pass;
}

void finalize(TestResult& result, const Thresholds& thresholds) {
    result.verdict = verdict(result, thresholds);
    if (result.verdict == Verdict::Fail && result.expected_to_fail) result.verdict = Verdict::ExpectedFail;
}

const Condition& TestResult::condition(const std::string& name) const {
    for (const auto& c : conditions)
        if (c.name == name) return c;
    throw InputError("test result has no condition '" + name + "'");
}

json TestResult::to_json(const Thresholds& t) const {
    json conds = json::array();
    for (const auto& c : conditions)
        conds.push_back({{"name", c.name},
                         {"accuracy", c.accuracy},
                         {"n_items", c.n_items},
                         {"requirement", requirement_text(c, t)},
                         {"satisfied", satisfied(c, t)}});
    json j{{"test", test},
           {"dimension", dimension ? json(to_string(*dimension)) : json(nullptr)},
           {"conditions", conds},
           {"verdict", to_string(verdict)},
           {"expected_to_fail", expected_to_fail},
           {"rule", rule},
           {"thresholds", {{"high", t.high}, {"low_margin", t.low_margin}, {"grounded_pass", t.grounded_pass}}},
           {"config", snapshot}};
    if (!confusion.empty()) j["confusion"] = confusion;
    return j;
}

Reps Reps::from_bundle(const RepresentationBundle& bundle, const std::string& layer) {
    Reps r;
    r.z = to_double(layer.empty() ? bundle.final_layer() : bundle.layer(layer));
    for (const auto& l : bundle.labels) {
        r.classes.push_back(l.cls);
        r.splits.push_back(l.split);
    }
    return r;
}

std::vector<std::size_t> Reps::select(std::optional<Split> split,
                                      const std::function<bool(const CompositeClass&)>& keep) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if ((!split || splits[i] == *split) && (!keep || keep(classes[i]))) out.push_back(i);
    return out;
}

Matrix Reps::rows(std::span<const std::size_t> idx) const {
    Matrix out(static_cast<Eigen::Index>(idx.size()), z.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

std::vector<int> Reps::labels(std::span<const std::size_t> idx, ProbeTarget t) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(label_of(classes[i], t));
    return out;
}

LinearProbe train_composite_probe(const Reps& reps, const ProbeHyper& hyper) {
    const auto idx = reps.select(Split::Train, nullptr);
    return train_probe(reps.rows(idx), reps.labels(idx, ProbeTarget::Composite), ProbeTarget::Composite, hyper);
}

TestResult run_is_grounded(const LinearProbe& composite_probe, const Matrix& pair_reps,
                           std::span<const CompositeClass> truth, const Thresholds& thresholds) {
    if (static_cast<std::size_t>(pair_reps.rows()) != truth.size())
        throw InputError("run_is_grounded: reps/labels length mismatch");
    const auto pred = predict_labels(composite_probe, pair_reps);
    const auto labels = labels_of(truth, ProbeTarget::Composite);
    TestResult r;
    r.test = "is_grounded";
    r.rule = "accuracy of predict(encode(x)) == gt_label(x) over all minimal-pair items must be >= grounded_pass";
    r.confusion.assign(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
    for (std::size_t i = 0; i < pred.size(); ++i)
        ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])];
    r.conditions.push_back({"accuracy", ratio(count_correct(pred, labels), labels.size()), Requirement::Grounded,
                            std::nullopt, labels.size()});
    finalize(r, thresholds);
    return r;
}

TestResult run_is_grounded(const Encoder& encoder, const LinearProbe& composite_probe, const MinimalPairSet& pairs,
                           const Thresholds& thresholds) {
    const auto n = pairs.dataset.items.size();
    Matrix z(static_cast<Eigen::Index>(n), encoder.feature_dim());
    std::vector<CompositeClass> truth;
    truth.reserve(n);
    std::vector<const Image*> imgs;
    for (std::size_t start = 0; start < n; start += kExportBatch) {
        const std::size_t end = std::min(n, start + kExportBatch);
        imgs.clear();
        for (std::size_t i = start; i < end; ++i) {
            imgs.push_back(&pairs.dataset.items[i].image);
            truth.push_back(gt_label(pairs.dataset.items[i]));
        }
        z.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            encoder.encode(imgs).cast<double>();
    }
    auto r = run_is_grounded(composite_probe, z, truth, thresholds);
    r.snapshot = {{"encoder", encoder.name()}, {"minimal_pair_rows", pairs.rows()}};
    return r;
}

TestResult run_is_token_of_type(const Reps& reps, const SeenUnseenSplit& split, const SuiteOptions& options) {
    const auto target = target_for(split.dimension);
    const auto seen = [&](const CompositeClass& c) { return split.is_seen(c); };
    const auto unseen = [&](const CompositeClass& c) { return !split.is_seen(c); };
    const auto train = reps.select(Split::Train, seen);
    const auto test_seen = reps.select(Split::Test, seen);
    const auto test_unseen = reps.select(Split::Test, unseen);
    if (test_unseen.empty()) throw EvalError("is_token_of_type: no unseen test items");
    if (test_seen.empty()) throw EvalError("is_token_of_type: no seen test items");

    const auto probe = train_probe(reps.rows(train), reps.labels(train, target), target, options.hyper);
    TestResult r;
    r.test = "is_token_of_type";
    r.dimension = split.dimension;
    r.rule = "the " + dim_name(split.dimension) +
             " probe trained on seen classes must have high accuracy on unseen classes";
    r.conditions.push_back({"seen", eval_accuracy(probe, reps.rows(test_seen), reps.labels(test_seen, target)),
                            Requirement::Info, split.dimension, test_seen.size()});
    r.conditions.push_back({"unseen", eval_accuracy(probe, reps.rows(test_unseen), reps.labels(test_unseen, target)),
                            Requirement::High, split.dimension, test_unseen.size()});
    r.snapshot = {{"split", split_json(split)}, {"probe_seed", options.hyper.seed}};
    finalize(r, options.thresholds);
    return r;
}

NullspaceProjection fit_projection(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                                   const InlpOptions& options) {
    const auto split = plan.split(ablated);
    const auto train = reps.select(Split::Train, [&](const CompositeClass& c) { return split.is_seen(c); });
    const auto target = target_for(ablated);
    auto proj = inlp_fit(reps.rows(train), reps.labels(train, target), target, options);
    proj.split = "train items of seen classes, " + std::string(to_string(split.mode)) + " split along " +
                 dim_name(ablated) + " (seed " + std::to_string(split.seed) + ")";
    return proj;
}

TestResult run_is_modular(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                          const NullspaceProjection& projection, const SuiteOptions& options) {
    Reps ablated_reps{ablate(reps.z, projection), reps.classes, reps.splits};
    TestResult r;
    r.test = "is_modular";
    r.dimension = ablated;
    r.rule = "after ablating " + dim_name(ablated) + ", its retrained probe must be low on unseen classes and " +
             "every other dimension's retrained probe must be high";
    json splits = json::array();
    for (int di = 0; di < static_cast<int>(kDimensions.size()); ++di) {
        const auto d = static_cast<Dimension>(di);
        const auto split = plan.split(d);
        const auto target = target_for(d);
        const auto train = ablated_reps.select(Split::Train, [&](const CompositeClass& c) { return split.is_seen(c); });
        const auto test = ablated_reps.select(Split::Test, [&](const CompositeClass& c) { return !split.is_seen(c); });
        if (test.empty()) throw EvalError("is_modular: no unseen test items for " + dim_name(d));
        const auto probe = train_probe(ablated_reps.rows(train), ablated_reps.labels(train, target), target, options.hyper);
        const double acc = eval_accuracy(probe, ablated_reps.rows(test), ablated_reps.labels(test, target));
        r.conditions.push_back({dim_name(d), acc, d == ablated ? Requirement::Low : Requirement::High, d, test.size()});
        splits.push_back(split_json(split));
    }
    r.snapshot = {{"splits", splits},
                  {"projection_rank", projection.rank()},
                  {"projection_data", projection.split},
                  {"probe_seed", options.hyper.seed}};
    finalize(r, options.thresholds);
    return r;
}

TestResult run_is_modular(const Reps& reps, const SplitPlan& plan, Dimension ablated, const SuiteOptions& options) {
    return run_is_modular(reps, plan, ablated, fit_projection(reps, plan, ablated, options.inlp), options);
}

TestResult run_is_causal(const Reps& reps, const SplitPlan& plan, Dimension ablated,
                         const LinearProbe& composite_probe, const NullspaceProjection& projection,
                         const SuiteOptions& options) {
    const auto split = plan.split(ablated);
    const auto test = reps.select(Split::Test, [&](const CompositeClass& c) { return !split.is_seen(c); });
    if (test.empty()) throw EvalError("is_causal: no unseen test items");
    const Matrix z = ablate(reps.rows(test), projection);
    const auto pred = predict_labels(composite_probe, z);

    TestResult r;
    r.test = "is_causal";
    r.dimension = ablated;
    r.expected_to_fail = true;
    r.rule = "predictions of the un-ablated composite probe on ablated reps must match the true " + dim_name(ablated) +
             " at most at chance level and match every other dimension highly";
    r.confusion.assign(kNumClasses, std::vector<std::size_t>(kNumClasses, 0));
    std::array<std::size_t, kDimensions.size()> match{};
    std::size_t exact = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto truth = reps.classes[test[i]];
        const auto p = CompositeClass::from_index(pred[i]);
        ++r.confusion[static_cast<std::size_t>(truth.index())][static_cast<std::size_t>(p.index())];
        exact += p == truth;
        for (int di = 0; di < static_cast<int>(kDimensions.size()); ++di)
            match[static_cast<std::size_t>(di)] += p.value(static_cast<Dimension>(di)) == truth.value(static_cast<Dimension>(di));
    }
    for (int di = 0; di < static_cast<int>(kDimensions.size()); ++di) {
        const auto d = static_cast<Dimension>(di);
        r.conditions.push_back({dim_name(d), ratio(match[static_cast<std::size_t>(di)], test.size()),
                                d == ablated ? Requirement::Low : Requirement::High, d, test.size()});
    }
    r.conditions.push_back({"composite", ratio(exact, test.size()), Requirement::Info, std::nullopt, test.size()});
    r.snapshot = {{"split", split_json(split)},
                  {"projection_rank", projection.rank()},
                  {"projection_data", projection.split},
                  {"probe_seed", composite_probe.hyper.seed}};
    finalize(r, options.thresholds);
    return r;
}

} // namespace uc
