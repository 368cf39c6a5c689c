#pragma once

// The from-scratch image encoders: the four-block CNN and a small MLP
// baseline, with training, inference and serialization.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "unitconcepts/datagen.hpp"
#include "unitconcepts/layers.hpp"

namespace uc {

enum class EncoderArch : std::uint8_t { PaperCnn, Mlp };

std::string_view to_string(EncoderArch a) noexcept;
EncoderArch parse_encoder_arch(std::string_view s);

/// Conv filter counts of the four CNN blocks.
inline constexpr std::array<int, 4> kCnnFilters{64, 32, 16, 8};
inline constexpr int kMlpHidden = 256;
inline constexpr int kMlpFeatures = 64;
/// Training batches used to recompute batch-norm statistics after each epoch.
inline constexpr int kCalibrationBatches = 16;

struct EncoderSpec {
    EncoderArch arch = EncoderArch::PaperCnn;
    int resolution = 64;
    std::uint64_t seed = 0;
    int epochs = 20;
    int batch_size = 64;
    double lr = 1e-3;
    int patience = 3;  // epochs without val-accuracy improvement before stopping
};

struct LayerInfo {
    std::string name;
    int dim = 0;
};

/// Representation layers in order; the last entry is the encode() output.
std::vector<LayerInfo> layer_layout(EncoderArch arch, int resolution);

/// The network proper. Templated on the scalar so the whole model can be
/// gradient-checked in double.
template <typename T>
class Network {
public:
    Network() = default;
    Network(EncoderArch arch, int resolution, std::uint64_t seed) : arch_(arch), resolution_(resolution) {
        Rng rng = make_rng(seed, {0x1a7e5});
        if (arch == EncoderArch::PaperCnn) {
            int in = 3, side = resolution;
            for (int f : kCnnFilters) {
                convs_.emplace_back(in, f, rng);
                norms_.emplace_back(f);
                relus_.emplace_back();
                in = f;
                side = Conv2d<T>::out_size(side);
            }
            final_side_ = side;
            head_ = Dense<T>(in * side * side, kNumClasses, rng);
        } else {
            dense_.emplace_back(3 * resolution * resolution, kMlpHidden, rng);
            dense_.emplace_back(kMlpHidden, kMlpFeatures, rng);
            relus_.emplace_back();
            head_ = Dense<T>(kMlpFeatures, kNumClasses, rng);
        }
    }

    struct Output {
        MatrixT<T> features;                  // n x feature_dim
        MatrixT<T> logits;                    // n x 18
        std::vector<MatrixT<T>> layer_vectors;  // per layer_layout entry, when requested
    };

    /// Training-mode forward pass; caches what backward() needs.
    Output forward(const FeatureMap<T>& x) {
        Output out;
        if (arch_ == EncoderArch::PaperCnn) {
            FeatureMap<T> h = x;
            for (std::size_t b = 0; b < convs_.size(); ++b) {
                h = convs_[b].forward(h);
                h = norms_[b].forward(h, true);
                h = relus_[b].forward(h);
            }
            last_c_ = h.c;
            out.features = flatten(h);
        } else {
            MatrixT<T> h = dense_[0].forward(flatten(x));
            h = relus_[0].forward(h);
            out.features = dense_[1].forward(h);
        }
        out.logits = head_.forward(out.features);
        return out;
    }

    /// Backpropagates d(loss)/d(logits); returns d(loss)/d(input) if requested.
    FeatureMap<T> backward(const MatrixT<T>& dlogits, bool need_input_grad = false) {
        MatrixT<T> dfeat = head_.backward(dlogits);
        if (arch_ == EncoderArch::PaperCnn) {
            FeatureMap<T> g = unflatten(dfeat, last_c_, final_side_, final_side_);
            for (std::size_t b = convs_.size(); b-- > 0;) {
                g = relus_[b].backward(g);
                g = norms_[b].backward(g);
                g = convs_[b].backward(g, b > 0 || need_input_grad);
            }
            return g;
        }
        MatrixT<T> g = dense_[1].backward(dfeat);
        g = relus_[0].backward(g);
        g = dense_[0].backward(g, need_input_grad);
        if (!need_input_grad) return {};
        return unflatten(g, 3, resolution_, resolution_);
    }

    /// Evaluation-mode pass with running batch-norm statistics; per-sample
    /// results do not depend on the rest of the batch.
    Output infer(const FeatureMap<T>& x, bool want_layers) const {
        Output out;
        if (arch_ == EncoderArch::PaperCnn) {
            FeatureMap<T> h = x;
            for (std::size_t b = 0; b < convs_.size(); ++b) {
                h = convs_[b].apply(h);
                h = norms_[b].apply(h);
                h.data = h.data.cwiseMax(T(0));
                if (want_layers) out.layer_vectors.push_back(channel_mean(h));
            }
            out.features = flatten(h);
        } else {
            MatrixT<T> h = dense_[0].apply(flatten(x)).cwiseMax(T(0));
            if (want_layers) out.layer_vectors.push_back(h);
            out.features = dense_[1].apply(h);
        }
        if (want_layers) out.layer_vectors.push_back(out.features);
        out.logits = head_.apply(out.features);
        return out;
    }

    void begin_calibration() {
        for (auto& n : norms_) n.begin_calibration();
    }
    void end_calibration() {
        for (auto& n : norms_) n.end_calibration();
    }

    std::vector<Param<T>> params() {
        std::vector<Param<T>> out;
        for (std::size_t b = 0; b < convs_.size(); ++b) {
            const auto prefix = "block" + std::to_string(b + 1);
            convs_[b].collect(prefix + ".conv", out);
            norms_[b].collect(prefix + ".bn", out);
        }
        for (std::size_t i = 0; i < dense_.size(); ++i) dense_[i].collect("dense" + std::to_string(i + 1), out);
        head_.collect("head", out);
        return out;
    }

    std::vector<std::pair<std::string, MatrixT<T>*>> buffers() {
        std::vector<std::pair<std::string, MatrixT<T>*>> out;
        for (std::size_t b = 0; b < norms_.size(); ++b)
            for (auto& e : norms_[b].buffers("block" + std::to_string(b + 1) + ".bn")) out.push_back(e);
        return out;
    }

    EncoderArch arch() const noexcept { return arch_; }
    int resolution() const noexcept { return resolution_; }

private:
    EncoderArch arch_ = EncoderArch::PaperCnn;
    int resolution_ = 0;
    int final_side_ = 0;
    int last_c_ = 0;
    std::vector<Conv2d<T>> convs_;
    std::vector<BatchNorm<T>> norms_;
    std::vector<Relu<T>> relus_;
    std::vector<Dense<T>> dense_;
    Dense<T> head_;
};

/// Packs images into a 3-channel feature map with values v / 255.
template <typename T>
FeatureMap<T> images_to_input(std::span<const Image* const> images) {
    if (images.empty()) throw InputError("empty image batch");
    const int h = images.front()->height(), w = images.front()->width();
    FeatureMap<T> x(static_cast<int>(images.size()), 3, h, w);
    const auto plane = x.plane();
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.height() != h || img.width() != w) throw InputError("mixed image sizes in batch");
        for (int c = 0; c < 3; ++c) {
            T* dst = x.data.row(c).data() + static_cast<Eigen::Index>(n) * plane;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) dst[y * w + xx] = static_cast<T>(img.at(y, xx, c)) / T(255);
        }
    }
    return x;
}

struct TrainReport {
    int epochs_run = 0;
    int best_epoch = 0;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_val_accuracy;
    double final_train_accuracy = 0.0;
    double final_val_accuracy = 0.0;
};

class Encoder {
public:
    Encoder() = default;
    explicit Encoder(EncoderSpec spec);

    const EncoderSpec& spec() const noexcept { return spec_; }
    const TrainReport& report() const noexcept { return report_; }
    std::string name() const;
    std::vector<LayerInfo> layers() const { return layer_layout(spec_.arch, spec_.resolution); }
    int feature_dim() const { return layers().back().dim; }

    /// Final representation (pre-head), n x feature_dim.
    MatrixF encode(std::span<const Image* const> images) const;
    Eigen::VectorXf encode(const DatasetItem& item) const;

    /// One n x dim matrix per layers() entry; the last equals encode().
    std::vector<MatrixF> encode_layers(std::span<const Image* const> images) const;
    std::vector<Eigen::VectorXf> encode_layers(const DatasetItem& item) const;

    /// Head logits, n x 18.
    MatrixF logits(std::span<const Image* const> images) const;

    Network<float>& network() noexcept { return net_; }
    TrainReport& mutable_report() noexcept { return report_; }

private:
    void check_input(std::span<const Image* const> images) const;

    EncoderSpec spec_;
    Network<float> net_;
    TrainReport report_;
};

/// Trains on the train split with softmax cross-entropy and Adam, stopping
/// early when validation accuracy plateaus; keeps the best-validation weights.
/// After every epoch the batch-norm running statistics are recomputed from a
/// fixed set of training batches.
/// Throws TrainError if the loss diverges.
Encoder train_encoder(const Dataset& dataset, const EncoderSpec& spec, std::ostream* log = nullptr);

/// Classification accuracy of the head on one split.
double head_accuracy(const Encoder& encoder, const Dataset& dataset, Split split);

void save_encoder(const Encoder& encoder, const std::filesystem::path& dir);
Encoder load_encoder(const std::filesystem::path& dir);

} // namespace uc
