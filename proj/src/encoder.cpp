#include "unitconcepts/encoder.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

namespace uc {

namespace {

using json = nlohmann::json;

constexpr int kInferenceBatch = 128;

std::vector<const Image*> images_of(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<const Image*> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(&ds.items[i].image);
    return out;
}

std::vector<std::size_t> indices_of(const Dataset& ds, Split split) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        if (ds.items[i].split == split) out.push_back(i);
    return out;
}

double accuracy_on(const Encoder& enc, const Dataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += kInferenceBatch) {
        const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                             idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), start + kInferenceBatch)));
        const auto imgs = images_of(ds, chunk);
        const MatrixF logits = enc.logits(imgs);
        for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            Eigen::Index arg = 0;
            logits.row(r).maxCoeff(&arg);
            if (static_cast<int>(arg) == gt_label(ds.items[chunk[static_cast<std::size_t>(r)]]).index()) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

void calibrate(Network<float>& net, const Dataset& ds, const std::vector<std::size_t>& train_idx, int batch_size) {
    if (net.arch() != EncoderArch::PaperCnn) return;
    const auto b = static_cast<std::size_t>(std::max(batch_size, 2));
    net.begin_calibration();
    for (std::size_t k = 0; k < static_cast<std::size_t>(kCalibrationBatches); ++k) {
        const std::size_t start = k * b;
        if (start + 2 > train_idx.size()) break;
        const std::vector<std::size_t> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(start),
                                             train_idx.begin() + static_cast<std::ptrdiff_t>(std::min(train_idx.size(), start + b)));
        net.forward(images_to_input<float>(images_of(ds, batch)));
    }
    net.end_calibration();
}

} // namespace

std::string_view to_string(EncoderArch a) noexcept { return a == EncoderArch::PaperCnn ? "cnn" : "mlp"; }

EncoderArch parse_encoder_arch(std::string_view s) {
    if (s == "cnn") return EncoderArch::PaperCnn;
    if (s == "mlp") return EncoderArch::Mlp;
    throw ConfigError("unknown encoder arch '" + std::string(s) + "' (expected cnn or mlp)");
}

std::vector<LayerInfo> layer_layout(EncoderArch arch, int resolution) {
    std::vector<LayerInfo> out;
    if (arch == EncoderArch::PaperCnn) {
        int side = resolution;
        for (std::size_t b = 0; b < kCnnFilters.size(); ++b) {
            side = Conv2d<float>::out_size(side);
            out.push_back({"block" + std::to_string(b + 1), side * side});
        }
        out.push_back({"final", kCnnFilters.back() * side * side});
    } else {
        out.push_back({"hidden", kMlpHidden});
        out.push_back({"final", kMlpFeatures});
    }
    return out;
}

Encoder::Encoder(EncoderSpec spec) : spec_(spec), net_(spec.arch, spec.resolution, spec.seed) {
    if (spec.resolution < kMinResolution) throw ConfigError("encoder resolution below minimum");
}

std::string Encoder::name() const {
    return std::string(to_string(spec_.arch)) + "-r" + std::to_string(spec_.resolution) + "-s" + std::to_string(spec_.seed);
}

void Encoder::check_input(std::span<const Image* const> images) const {
    for (const Image* img : images)
        if (img->height() != spec_.resolution || img->width() != spec_.resolution)
            throw InputError("image is " + std::to_string(img->height()) + "x" + std::to_string(img->width()) +
                             ", encoder expects " + std::to_string(spec_.resolution));
}

MatrixF Encoder::encode(std::span<const Image* const> images) const {
    check_input(images);
    return net_.infer(images_to_input<float>(images), false).features;
}

Eigen::VectorXf Encoder::encode(const DatasetItem& item) const {
    const Image* img = &item.image;
    return encode(std::span<const Image* const>(&img, 1)).row(0).transpose();
}

std::vector<MatrixF> Encoder::encode_layers(std::span<const Image* const> images) const {
    check_input(images);
    return net_.infer(images_to_input<float>(images), true).layer_vectors;
}

std::vector<Eigen::VectorXf> Encoder::encode_layers(const DatasetItem& item) const {
    const Image* img = &item.image;
    std::vector<Eigen::VectorXf> out;
    for (const auto& m : encode_layers(std::span<const Image* const>(&img, 1))) out.push_back(m.row(0).transpose());
    return out;
}

MatrixF Encoder::logits(std::span<const Image* const> images) const {
    check_input(images);
    return net_.infer(images_to_input<float>(images), false).logits;
}

double head_accuracy(const Encoder& encoder, const Dataset& dataset, Split split) {
    return accuracy_on(encoder, dataset, indices_of(dataset, split));
}

Encoder train_encoder(const Dataset& dataset, const EncoderSpec& spec, std::ostream* log) {
    if (spec.batch_size < 1 || spec.epochs < 1) throw ConfigError("epochs and batch_size must be >= 1");
    const auto train_idx = indices_of(dataset, Split::Train);
    const auto val_idx = indices_of(dataset, Split::Val);
    if (train_idx.empty()) throw TrainError("dataset has no train split");

    Encoder enc(spec);
    auto& net = enc.network();
    auto params = net.params();
    std::vector<AdamState<float>> adam;
    for (const auto& p : params) adam.emplace_back(p.value->rows(), p.value->cols(), AdamHyper{spec.lr});

    TrainReport report;
    Encoder best = enc;
    double best_val = -1.0;
    int since_best = 0;
    std::vector<std::size_t> order = train_idx;

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        Rng rng = make_rng(spec.seed, {0xe90c, static_cast<std::uint64_t>(epoch)});
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(spec.batch_size));
            if (end - start < 2) continue;  // batch norm needs at least two samples
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> labels;
            labels.reserve(batch.size());
            for (auto i : batch) labels.push_back(gt_label(dataset.items[i]).index());

            const auto imgs = images_of(dataset, batch);
            auto out = net.forward(images_to_input<float>(imgs));
            MatrixF dlogits;
            const double loss = softmax_cross_entropy(out.logits, labels, &dlogits);
            if (!std::isfinite(loss) || !dlogits.allFinite())
                throw TrainError("loss diverged at epoch " + std::to_string(epoch + 1) + ", batch starting " +
                                 std::to_string(start) + " (loss=" + std::to_string(loss) +
                                 ", last epoch mean=" + (report.epoch_loss.empty() ? std::string("n/a")
                                                                                  : std::to_string(report.epoch_loss.back())) +
                                 ")");
            net.backward(dlogits);
            for (std::size_t k = 0; k < params.size(); ++k) adam_step(*params[k].value, *params[k].grad, adam[k]);
            loss_sum += loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        calibrate(net, dataset, train_idx, spec.batch_size);
        report.epoch_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
        const double val = val_idx.empty() ? 0.0 : accuracy_on(enc, dataset, val_idx);
        report.epoch_val_accuracy.push_back(val);
        report.epochs_run = epoch + 1;
        if (log)
            *log << "  epoch " << epoch + 1 << "/" << spec.epochs << " loss " << report.epoch_loss.back() << " val_acc "
                 << val << std::endl;

        if (val > best_val + 1e-12) {
            best_val = val;
            best = enc;
            report.best_epoch = epoch + 1;
            since_best = 0;
        } else if (++since_best >= spec.patience) {
            break;
        }
        if (val_idx.empty()) best = enc;
    }

    best.mutable_report() = report;
    best.mutable_report().final_train_accuracy = accuracy_on(best, dataset, train_idx);
    best.mutable_report().final_val_accuracy = val_idx.empty() ? 0.0 : accuracy_on(best, dataset, val_idx);
    if (log)
        *log << "  final train_acc " << best.report().final_train_accuracy << " val_acc "
             << best.report().final_val_accuracy << std::endl;
    return best;
}

void save_encoder(const Encoder& encoder, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "weights");
    Encoder copy = encoder;
    const auto& s = encoder.spec();
    const auto& r = encoder.report();
    json tensors = json::array();
    auto write = [&](const std::string& name, const MatrixF& m) {
        write_cbm(dir / "weights" / (name + ".cbm"), m);
        tensors.push_back(name);
    };
    for (const auto& p : copy.network().params()) write(p.name, *p.value);
    for (const auto& [name, m] : copy.network().buffers()) write(name, *m);

    json j{{"format", "unitconcepts-encoder"},
           {"version", 1},
           {"name", encoder.name()},
           {"spec",
            {{"arch", to_string(s.arch)},
             {"resolution", s.resolution},
             {"seed", s.seed},
             {"epochs", s.epochs},
             {"batch_size", s.batch_size},
             {"lr", s.lr},
             {"patience", s.patience}}},
           {"report",
            {{"epochs_run", r.epochs_run},
             {"best_epoch", r.best_epoch},
             {"epoch_loss", r.epoch_loss},
             {"epoch_val_accuracy", r.epoch_val_accuracy},
             {"final_train_accuracy", r.final_train_accuracy},
             {"final_val_accuracy", r.final_val_accuracy}}},
           {"tensors", tensors}};
    std::ofstream out(dir / "encoder.json");
    if (!out) throw IoError("cannot write " + (dir / "encoder.json").string());
    out << j.dump(2) << '\n';
}

Encoder load_encoder(const std::filesystem::path& dir) {
    std::ifstream in(dir / "encoder.json");
    if (!in) throw IoError("cannot open " + (dir / "encoder.json").string());
    try {
        const json j = json::parse(in);
        if (j.at("format").get<std::string>() != "unitconcepts-encoder") throw FormatError("not an encoder directory");
        const auto& js = j.at("spec");
        EncoderSpec spec;
        spec.arch = parse_encoder_arch(js.at("arch").get<std::string>());
        spec.resolution = js.at("resolution").get<int>();
        spec.seed = js.at("seed").get<std::uint64_t>();
        spec.epochs = js.at("epochs").get<int>();
        spec.batch_size = js.at("batch_size").get<int>();
        spec.lr = js.at("lr").get<double>();
        spec.patience = js.at("patience").get<int>();
        Encoder enc(spec);
        auto read_into = [&](const std::string& name, MatrixF& m) {
            MatrixF loaded = read_cbm_f32(dir / "weights" / (name + ".cbm"));
            if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
                throw FormatError("tensor " + name + " has wrong shape");
            m = std::move(loaded);
        };
        for (auto& p : enc.network().params()) read_into(p.name, *p.value);
        for (auto& [name, m] : enc.network().buffers()) read_into(name, *m);

        const auto& jr = j.at("report");
        auto& r = enc.mutable_report();
        r.epochs_run = jr.at("epochs_run").get<int>();
        r.best_epoch = jr.at("best_epoch").get<int>();
        r.epoch_loss = jr.at("epoch_loss").get<std::vector<double>>();
        r.epoch_val_accuracy = jr.at("epoch_val_accuracy").get<std::vector<double>>();
        r.final_train_accuracy = jr.at("final_train_accuracy").get<double>();
        r.final_val_accuracy = jr.at("final_val_accuracy").get<double>();
        return enc;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad encoder.json: ") + e.what());
    }
}

} // namespace uc
