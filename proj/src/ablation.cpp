#include "unitconcepts/ablation.hpp"

#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace uc {

namespace {

using json = nlohmann::json;

} // namespace

int NullspaceProjection::total_rank_removed() const noexcept {
    int total = 0;
    for (const auto& it : iterations) total += it.rank_removed;
    return total;
}

NullspaceProjection inlp_fit(const Matrix& reps, std::span<const int> labels, ProbeTarget target,
                             const InlpOptions& options) {
    if (options.iterations < 1) throw ConfigError("inlp_fit: iterations must be >= 1");
    const auto d = reps.cols();
    NullspaceProjection out;
    out.target = target;
    out.p = Matrix::Identity(d, d);
    Matrix removed(0, d);  // stacked directions removed so far
    int rank_so_far = 0;
    for (int i = 0; i < options.iterations; ++i) {
        const Matrix x = reps * out.p;
        ProbeHyper h = options.hyper;
        h.seed = derive_seed(options.hyper.seed, {0x1a1b, static_cast<std::uint64_t>(i)});
        const LinearProbe probe = train_probe(x, labels, target, h);

        // Weight components orthogonal to the centered data only shift logits by a constant,
        // so the directions the probe uses are the rows of W_eff restricted to the data span.
        const Matrix centered = x.rowwise() - x.colwise().mean();
        const Matrix span = orthonormal_basis(centered);
        const Matrix used = probe.effective_weights() * span * span.transpose();
        Matrix stacked(removed.rows() + used.rows(), d);
        stacked << removed, used;
        const auto proj = rowspace_projection(stacked);
        const int gained = proj.rank_removed - rank_so_far;
        out.iterations.push_back({gained, probe.train_accuracy});
        if (gained <= 0) {
            out.exhausted = true;
            break;
        }
        removed = std::move(stacked);
        rank_so_far = proj.rank_removed;
        out.p = proj.p;
        if (rank_so_far >= d) {
            out.exhausted = true;
            break;
        }
    }
    return out;
}

NullspaceProjection identity_projection(int dim) {
    NullspaceProjection out;
    out.p = Matrix::Identity(dim, dim);
    out.split = "identity";
    return out;
}

Matrix ablate(const Matrix& reps, const NullspaceProjection& projection) {
    if (reps.cols() != projection.p.rows())
        throw InputError("ablate: reps have dim " + std::to_string(reps.cols()) + ", projection has " +
                         std::to_string(projection.p.rows()));
    return reps * projection.p;
}

Vector ablate(const Vector& z, const NullspaceProjection& projection) {
    if (z.size() != projection.p.rows()) throw InputError("ablate: dimension mismatch");
    return projection.p * z;
}

void save_projection(const NullspaceProjection& projection, const std::filesystem::path& stem) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    json iters = json::array();
    for (const auto& it : projection.iterations)
        iters.push_back({{"rank_removed", it.rank_removed}, {"probe_accuracy", it.probe_accuracy}});
    json j{{"format", "unitconcepts-projection"},
           {"version", 1},
           {"target", to_string(projection.target)},
           {"dim", projection.dim()},
           {"rank", projection.rank()},
           {"exhausted", projection.exhausted},
           {"split", projection.split},
           {"iterations", iters},
           {"matrix", stem.filename().string() + ".cbm"}};
    std::ofstream out(stem.string() + ".json");
    if (!out) throw IoError("cannot write " + stem.string() + ".json");
    out << j.dump(2) << '\n';
    write_cbm(stem.string() + ".cbm", projection.p);
}

NullspaceProjection load_projection(const std::filesystem::path& stem) {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw IoError("cannot open " + stem.string() + ".json");
    try {
        const json j = json::parse(in);
        if (j.at("format").get<std::string>() != "unitconcepts-projection") throw FormatError("not a projection file");
        NullspaceProjection p;
        p.target = parse_probe_target(j.at("target").get<std::string>());
        p.exhausted = j.at("exhausted").get<bool>();
        p.split = j.at("split").get<std::string>();
        for (const auto& it : j.at("iterations"))
            p.iterations.push_back({it.at("rank_removed").get<int>(), it.at("probe_accuracy").get<double>()});
        p.p = read_cbm(stem.parent_path() / j.at("matrix").get<std::string>());
        if (p.p.rows() != j.at("dim").get<int>() || p.p.cols() != p.p.rows())
            throw FormatError("projection matrix shape is inconsistent: " + stem.string());
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad projection file: ") + e.what());
    }
}

} // namespace uc
