#include "unitconcepts/probes.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace uc {

namespace {

using json = nlohmann::json;

// Features whose std is below this fraction of the largest feature RMS are treated as constant.
constexpr double kRelativeMinScale = 1e-6;

// Row-wise softmax in place; returns mean cross-entropy.
double softmax_ce(Matrix& logits, std::span<const int> labels) {
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        const double mx = row.maxCoeff();
        row.array() -= mx;
        const double lse = std::log(row.array().exp().sum());
        loss -= row(labels[static_cast<std::size_t>(r)]) - lse;
        row = (row.array() - lse).exp().matrix();
    }
    return loss / static_cast<double>(logits.rows());
}

// Logits within kTieTolerance * max(1, |max logit|) of the maximum count as tied.
constexpr double kTieTolerance = 1e-9;

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double mx = row.maxCoeff();
    const double tol = kTieTolerance * std::max(1.0, std::abs(mx));
    for (Eigen::Index j = 0; j < row.size(); ++j)
        if (row(j) >= mx - tol) return static_cast<int>(j);
    return 0;
}

} // namespace

std::string_view to_string(ProbeTarget t) noexcept {
    switch (t) {
    case ProbeTarget::Composite: return "composite";
    case ProbeTarget::Layout: return "layout";
    case ProbeTarget::Shape: return "shape";
    case ProbeTarget::Stroke: return "stroke";
    }
    return "?";
}

ProbeTarget parse_probe_target(std::string_view s) {
    for (auto t : {ProbeTarget::Composite, ProbeTarget::Layout, ProbeTarget::Shape, ProbeTarget::Stroke})
        if (to_string(t) == s) return t;
    throw FormatError("unknown probe target '" + std::string(s) + "'");
}

ProbeTarget target_for(Dimension d) noexcept {
    switch (d) {
    case Dimension::Layout: return ProbeTarget::Layout;
    case Dimension::Shape: return ProbeTarget::Shape;
    case Dimension::Stroke: return ProbeTarget::Stroke;
    }
    return ProbeTarget::Composite;
}

std::optional<Dimension> dimension_of(ProbeTarget t) noexcept {
    switch (t) {
    case ProbeTarget::Layout: return Dimension::Layout;
    case ProbeTarget::Shape: return Dimension::Shape;
    case ProbeTarget::Stroke: return Dimension::Stroke;
    case ProbeTarget::Composite: break;
    }
    return std::nullopt;
}

int num_outputs(ProbeTarget t) noexcept {
    const auto d = dimension_of(t);
    return d ? dimension_size(*d) : kNumClasses;
}

int label_of(const CompositeClass& c, ProbeTarget t) noexcept {
    const auto d = dimension_of(t);
    return d ? c.value(*d) : c.index();
}

std::vector<int> labels_of(std::span<const CompositeClass> classes, ProbeTarget t) {
    std::vector<int> out;
    out.reserve(classes.size());
    for (const auto& c : classes) out.push_back(label_of(c, t));
    return out;
}

Matrix LinearProbe::logits(const Matrix& reps) const {
    if (reps.cols() != w.cols())
        throw InputError("probe expects dim " + std::to_string(w.cols()) + ", got " + std::to_string(reps.cols()));
    Matrix x = (reps.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    Matrix z = x * w.transpose();
    z.rowwise() += b.transpose();
    return z;
}

Matrix LinearProbe::effective_weights() const { return w * scale.cwiseInverse().asDiagonal(); }

LinearProbe train_probe(const Matrix& reps, std::span<const int> labels, ProbeTarget target, const ProbeHyper& hyper) {
    const auto n = reps.rows(), d = reps.cols();
    const int k = num_outputs(target);
    if (static_cast<std::size_t>(n) != labels.size()) throw InputError("train_probe: reps/labels length mismatch");
    if (n < k) throw InputError("train_probe: need at least " + std::to_string(k) + " rows, got " + std::to_string(n));
    if (d < 1) throw InputError("train_probe: zero-dimensional input");
    require_finite(reps, "probe input");
    std::set<int> distinct;
    for (int y : labels) {
        if (y < 0 || y >= k) throw InputError("train_probe: label " + std::to_string(y) + " out of range");
        distinct.insert(y);
    }
    if (distinct.size() < 2) throw TrainError("train_probe: only one class present in the training labels");

    LinearProbe p;
    p.target = target;
    p.hyper = hyper;
    p.mean = Vector::Zero(d);
    p.scale = Vector::Ones(d);
    if (hyper.standardize) {
        p.mean = reps.colwise().mean().transpose();
        Vector sd(d);
        for (Eigen::Index j = 0; j < d; ++j) sd(j) = std::sqrt((reps.col(j).array() - p.mean(j)).square().mean());
        const double floor = kRelativeMinScale * std::sqrt(reps.array().square().colwise().mean().maxCoeff());
        for (Eigen::Index j = 0; j < d; ++j) p.scale(j) = sd(j) > floor && sd(j) > 0.0 ? sd(j) : 1.0;
    }
    const Matrix x = (reps.rowwise() - p.mean.transpose()).array().rowwise() / p.scale.transpose().array();

    Matrix w = Matrix::Zero(k, d);
    Matrix bias = Matrix::Zero(1, k);
    AdamState<double> sw(k, d, AdamHyper{hyper.lr}), sb(1, k, AdamHyper{hyper.lr});
    Matrix onehot = Matrix::Zero(n, k);
    for (Eigen::Index r = 0; r < n; ++r) onehot(r, labels[static_cast<std::size_t>(r)]) = 1.0;

    double prev = std::numeric_limits<double>::infinity();
    double loss = prev;
    int epoch = 0;
    for (; epoch < hyper.max_epochs; ++epoch) {
        Matrix z = x * w.transpose();
        if (hyper.bias) z.rowwise() += bias.row(0);
        loss = softmax_ce(z, labels);
        if (hyper.l2 > 0) loss += 0.5 * hyper.l2 * w.squaredNorm();
        if (!std::isfinite(loss)) throw TrainError("probe loss diverged at epoch " + std::to_string(epoch + 1));
        if (std::abs(prev - loss) < hyper.tolerance) break;
        prev = loss;
        z -= onehot;
        z /= static_cast<double>(n);
        Matrix gw = z.transpose() * x;
        if (hyper.l2 > 0) gw += hyper.l2 * w;
        adam_step(w, gw, sw);
        if (hyper.bias) {
            Matrix gb = z.colwise().sum();
            adam_step(bias, gb, sb);
        }
    }
    // Softmax ignores a vector shared by all rows; drop it so W has rank <= k - 1.
    w.rowwise() -= w.colwise().mean();
    bias.array() -= bias.mean();
    p.w = std::move(w);
    p.b = bias.row(0).transpose();
    p.epochs_run = epoch;
    p.final_loss = loss;
    p.train_accuracy = eval_accuracy(p, reps, labels);
    return p;
}

std::vector<int> predict_labels(const LinearProbe& probe, const Matrix& reps) {
    const Matrix z = probe.logits(reps);
    std::vector<int> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) out[static_cast<std::size_t>(r)] = argmax_row(z.row(r));
    return out;
}

CompositeClass predict(const LinearProbe& probe, const Vector& z) {
    if (probe.target != ProbeTarget::Composite) throw InputError("predict needs a composite probe");
    return CompositeClass::from_index(predict_labels(probe, z.transpose())[0]);
}

bool has_concept(const LinearProbe& probe, const Vector& z, const AtomicConcept& c) {
    const auto d = dimension_of(probe.target);
    if (!d || *d != c.dimension)
        throw InputError("has_concept: probe target " + std::string(to_string(probe.target)) +
                         " does not match concept " + std::string(c.name()));
    return predict_labels(probe, z.transpose())[0] == c.value;
}

double eval_accuracy(const LinearProbe& probe, const Matrix& reps, std::span<const int> labels,
                     std::span<const bool> mask) {
    if (static_cast<std::size_t>(reps.rows()) != labels.size()) throw InputError("eval_accuracy: length mismatch");
    if (!mask.empty() && mask.size() != labels.size()) throw InputError("eval_accuracy: mask length mismatch");
    const auto pred = predict_labels(probe, reps);
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        ++total;
        correct += pred[i] == labels[i];
    }
    if (total == 0) throw EvalError("eval_accuracy: no items selected");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void save_probe(const LinearProbe& probe, const std::filesystem::path& stem) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    const auto& h = probe.hyper;
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json j{{"format", "unitconcepts-probe"},
           {"version", 1},
           {"target", to_string(probe.target)},
           {"outputs", probe.outputs()},
           {"dim", probe.dim()},
           {"bias", vec(probe.b)},
           {"normalization", {{"mean", vec(probe.mean)}, {"scale", vec(probe.scale)}}},
           {"hyper",
            {{"lr", h.lr},
             {"max_epochs", h.max_epochs},
             {"tolerance", h.tolerance},
             {"l2", h.l2},
             {"bias", h.bias},
             {"standardize", h.standardize},
             {"seed", h.seed}}},
           {"epochs_run", probe.epochs_run},
           {"final_loss", probe.final_loss},
           {"train_accuracy", probe.train_accuracy},
           {"weights", stem.filename().string() + ".cbm"}};
    std::ofstream out(stem.string() + ".json");
    if (!out) throw IoError("cannot write " + stem.string() + ".json");
    out << j.dump(2) << '\n';
    write_cbm(stem.string() + ".cbm", probe.w);
}

LinearProbe load_probe(const std::filesystem::path& stem) {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw IoError("cannot open " + stem.string() + ".json");
    try {
        const json j = json::parse(in);
        if (j.at("format").get<std::string>() != "unitconcepts-probe") throw FormatError("not a probe file");
        LinearProbe p;
        p.target = parse_probe_target(j.at("target").get<std::string>());
        const int k = j.at("outputs").get<int>(), d = j.at("dim").get<int>();
        auto vec = [](const json& a) {
            const auto v = a.get<std::vector<double>>();
            return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        p.b = vec(j.at("bias"));
        p.mean = vec(j.at("normalization").at("mean"));
        p.scale = vec(j.at("normalization").at("scale"));
        const auto& h = j.at("hyper");
        p.hyper = {h.at("lr").get<double>(),          h.at("max_epochs").get<int>(), h.at("tolerance").get<double>(),
                   h.at("l2").get<double>(),          h.at("bias").get<bool>(),      h.at("standardize").get<bool>(),
                   h.at("seed").get<std::uint64_t>()};
        p.epochs_run = j.at("epochs_run").get<int>();
        p.final_loss = j.at("final_loss").get<double>();
        p.train_accuracy = j.at("train_accuracy").get<double>();
        p.w = read_cbm(stem.parent_path() / j.at("weights").get<std::string>());
        if (p.w.rows() != k || p.w.cols() != d || p.b.size() != k || p.mean.size() != d || p.scale.size() != d)
            throw FormatError("probe file shapes are inconsistent: " + stem.string());
        if (k != num_outputs(p.target)) throw FormatError("probe output count does not match its target");
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad probe file: ") + e.what());
    }
}

} // namespace uc
