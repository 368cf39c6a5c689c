#include "unitconcepts/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "csv.hpp"

namespace uc {

namespace {

double entropy(const std::map<int, std::size_t>& counts, double n) {
    double h = 0.0;
    for (const auto& [k, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

std::vector<CompositeClass> composed_prediction(std::span<const LinearProbe> dim_probes, const Matrix& reps) {
    if (dim_probes.size() != kDimensions.size()) throw InputError("composed_prediction needs one probe per dimension");
    std::array<std::vector<int>, 3> preds;
    for (std::size_t k = 0; k < kDimensions.size(); ++k) {
        if (dimension_of(dim_probes[k].target) != kDimensions[k])
            throw InputError("composed_prediction: probes must be ordered layout, shape, stroke");
        preds[k] = predict_labels(dim_probes[k], reps);
    }
    std::vector<CompositeClass> out;
    out.reserve(static_cast<std::size_t>(reps.rows()));
    for (std::size_t i = 0; i < static_cast<std::size_t>(reps.rows()); ++i)
        out.emplace_back(static_cast<Layout>(preds[0][i]), static_cast<Shape>(preds[1][i]),
                         static_cast<Stroke>(preds[2][i]));
    return out;
}

DirectResult direct_classification(const Matrix& train_reps, std::span<const int> train_labels,
                                   const Matrix& eval_reps, std::span<const int> eval_labels,
                                   const ProbeHyper& hyper) {
    const auto probe = train_probe(train_reps, train_labels, ProbeTarget::Composite, hyper);
    DirectResult r;
    r.predictions = predict_labels(probe, eval_reps);
    r.accuracy = eval_accuracy(probe, eval_reps, eval_labels);
    return r;
}

double nmi(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw InputError("nmi: sequences differ in length");
    if (a.empty()) throw InputError("nmi: empty sequences");
    std::map<int, std::size_t> ca, cb;
    std::map<std::pair<int, int>, std::size_t> cab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ca[a[i]];
        ++cb[b[i]];
        ++cab[{a[i], b[i]}];
    }
    const bool const_a = ca.size() == 1, const_b = cb.size() == 1;
    if (const_a && const_b) return 1.0;
    if (const_a || const_b) return 0.0;
    const double n = static_cast<double>(a.size());
    const double ha = entropy(ca, n), hb = entropy(cb, n);
    double mi = 0.0;
    for (const auto& [k, c] : cab) {
        const double pab = static_cast<double>(c) / n;
        const double pa = static_cast<double>(ca[k.first]) / n, pb = static_cast<double>(cb[k.second]) / n;
        mi += pab * std::log(pab / (pa * pb));
    }
    return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

std::vector<LayerwiseRecord> layerwise_report(const RepresentationBundle& bundle, const ProbeHyper& hyper) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
        if (bundle.labels[i].split == Split::Train) train.push_back(i);
        if (bundle.labels[i].split == Split::Test) test.push_back(i);
    }
    if (train.empty() || test.empty()) throw EvalError("layerwise_report needs train and test items");
    auto labels = [&](const std::vector<std::size_t>& idx, ProbeTarget t) {
        std::vector<int> out;
        for (auto i : idx) out.push_back(label_of(bundle.labels[i].cls, t));
        return out;
    };
    auto rows = [](const MatrixF& m, const std::vector<std::size_t>& idx) {
        Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i])).cast<double>();
        return out;
    };

    std::vector<LayerwiseRecord> out;
    for (const auto& layer : bundle.layers) {
        const Matrix xtr = rows(layer.data, train), xte = rows(layer.data, test);
        LayerwiseRecord rec;
        rec.layer = layer.name;
        rec.n_items = test.size();
        std::vector<LinearProbe> probes;
        std::array<double*, 3> accs{&rec.acc_layout, &rec.acc_shape, &rec.acc_stroke};
        for (std::size_t k = 0; k < kDimensions.size(); ++k) {
            const auto t = target_for(kDimensions[k]);
            probes.push_back(train_probe(xtr, labels(train, t), t, hyper));
            *accs[k] = eval_accuracy(probes.back(), xte, labels(test, t));
        }
        const auto truth = labels(test, ProbeTarget::Composite);
        const auto composed = composed_prediction(probes, xte);
        std::vector<int> composed_idx;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < composed.size(); ++i) {
            composed_idx.push_back(composed[i].index());
            correct += composed_idx.back() == truth[i];
        }
        rec.acc_composed = static_cast<double>(correct) / static_cast<double>(truth.size());
        const auto direct = direct_classification(xtr, labels(train, ProbeTarget::Composite), xte, truth, hyper);
        rec.acc_direct = direct.accuracy;
        rec.nmi = nmi(composed_idx, direct.predictions);
        out.push_back(rec);
    }
    return out;
}

void write_layerwise_csv(std::span<const LayerwiseRecord> records, const std::filesystem::path& path) {
    detail::CsvWriter csv(path, {"layer", "acc_layout", "acc_shape", "acc_stroke", "acc_composed", "acc_direct", "nmi"});
    for (const auto& r : records)
        csv.row({r.layer, fmt(r.acc_layout), fmt(r.acc_shape), fmt(r.acc_stroke), fmt(r.acc_composed),
                 fmt(r.acc_direct), fmt(r.nmi)});
}

} // namespace uc
