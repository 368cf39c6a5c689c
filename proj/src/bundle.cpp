#include "unitconcepts/bundle.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "csv.hpp"

namespace uc {

namespace {

using json = nlohmann::json;

bool valid_layer_name(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    }) && s != "." && s != "..";
}

} // namespace

const MatrixF& RepresentationBundle::layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return l.data;
    throw InputError("bundle has no layer '" + name + "'");
}

const MatrixF& RepresentationBundle::final_layer() const {
    if (layers.empty()) throw InputError("bundle has no layers");
    return layers.back().data;
}

std::vector<std::string> RepresentationBundle::layer_names() const {
    std::vector<std::string> out;
    for (const auto& l : layers) out.push_back(l.name);
    return out;
}

std::vector<BundleLabel> labels_of(const Dataset& dataset) {
    std::vector<BundleLabel> out;
    out.reserve(dataset.items.size());
    for (const auto& it : dataset.items) out.push_back({it.item_id, gt_label(it), it.color_used, it.split});
    return out;
}

RepresentationBundle build_bundle(const Encoder& encoder, const Dataset& dataset) {
    RepresentationBundle b;
    b.encoder = encoder.name();
    b.labels = labels_of(dataset);
    const auto info = encoder.layers();
    const auto n = static_cast<Eigen::Index>(dataset.items.size());
    for (const auto& l : info) b.layers.push_back({l.name, MatrixF(n, l.dim)});
    std::vector<const Image*> imgs;
    for (Eigen::Index start = 0; start < n; start += kExportBatch) {
        const Eigen::Index end = std::min(n, start + kExportBatch);
        imgs.clear();
        for (Eigen::Index i = start; i < end; ++i) imgs.push_back(&dataset.items[static_cast<std::size_t>(i)].image);
        const auto out = encoder.encode_layers(imgs);
        for (std::size_t k = 0; k < out.size(); ++k) b.layers[k].data.middleRows(start, end - start) = out[k];
    }
    return b;
}

void save_bundle(const RepresentationBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "layers");
    json layers = json::array();
    for (const auto& l : bundle.layers) {
        if (!valid_layer_name(l.name)) throw FormatError("invalid layer name '" + l.name + "'");
        if (static_cast<std::size_t>(l.data.rows()) != bundle.n_items())
            throw FormatError("layer " + l.name + " has " + std::to_string(l.data.rows()) + " rows, expected " +
                              std::to_string(bundle.n_items()));
        if (!l.data.allFinite()) throw DataError("layer " + l.name + " contains non-finite values");
        const std::string file = "layers/" + l.name + ".cbm";
        write_cbm(dir / file, l.data);
        layers.push_back({{"name", l.name}, {"dim", l.data.cols()}, {"file", file}});
    }
    json manifest{{"format", "unitconcepts-bundle"},
                  {"version", kBundleVersion},
                  {"n_items", bundle.n_items()},
                  {"encoder", bundle.encoder},
                  {"dtype", "float32"},
                  {"layers", layers}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';

    detail::CsvWriter csv(dir / "labels.csv", {"item_id", "class", "layout", "shape", "stroke", "color", "split"});
    for (const auto& l : bundle.labels)
        csv.row({std::to_string(l.item_id), l.cls.canonical_name(), std::string(to_string(l.cls.layout())),
                 std::string(to_string(l.cls.shape())), std::string(to_string(l.cls.stroke())), to_hex(l.color),
                 std::string(to_string(l.split))});
}

void export_bundle(const Encoder& encoder, const Dataset& dataset, const std::filesystem::path& dir) {
    save_bundle(build_bundle(encoder, dataset), dir);
}

RepresentationBundle import_bundle(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bundle manifest is not valid JSON: ") + e.what());
    }

    RepresentationBundle b;
    std::size_t n_items = 0;
    struct Entry {
        std::string name, file;
        std::uint64_t dim;
    };
    std::vector<Entry> entries;
    try {
        if (m.at("format").get<std::string>() != "unitconcepts-bundle") throw FormatError("not a bundle manifest");
        if (m.at("version").get<int>() != kBundleVersion)
            throw FormatError("unsupported bundle version " + std::to_string(m.at("version").get<int>()));
        if (m.at("dtype").get<std::string>() != "float32") throw FormatError("bundle dtype must be float32");
        n_items = m.at("n_items").get<std::size_t>();
        b.encoder = m.at("encoder").get<std::string>();
        std::set<std::string> seen;
        for (const auto& l : m.at("layers")) {
            Entry e{l.at("name").get<std::string>(), l.at("file").get<std::string>(), l.at("dim").get<std::uint64_t>()};
            if (!valid_layer_name(e.name)) throw FormatError("invalid layer name '" + e.name + "'");
            if (!seen.insert(e.name).second) throw FormatError("duplicate layer '" + e.name + "'");
            if (e.file != "layers/" + e.name + ".cbm")
                throw FormatError("layer " + e.name + ": file must be layers/" + e.name + ".cbm");
            entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad bundle manifest: ") + e.what());
    }
    if (entries.empty()) throw FormatError("bundle manifest lists no layers");

    for (const auto& e : entries) {
        const auto path = dir / e.file;
        CbmHeader h;
        try {
            h = read_cbm_header(path);
        } catch (const FormatError& err) {
            throw FormatError("layer " + e.name + ": " + err.what());
        } catch (const IoError& err) {
            throw FormatError("layer " + e.name + ": " + err.what());
        }
        if (h.dtype != CbmDtype::Float32) throw FormatError("layer " + e.name + ": matrix is not float32");
        if (h.rows != n_items)
            throw FormatError("layer " + e.name + ": " + std::to_string(h.rows) + " rows, manifest says " +
                              std::to_string(n_items));
        if (h.cols != e.dim)
            throw FormatError("layer " + e.name + ": " + std::to_string(h.cols) + " columns, manifest says " +
                              std::to_string(e.dim));
        MatrixF data = read_cbm_f32(path);
        if (!data.allFinite()) throw DataError("layer " + e.name + " contains non-finite values");
        b.layers.push_back({e.name, std::move(data)});
    }

    const auto t = detail::read_csv(dir / "labels.csv");
    const int c_id = t.column("item_id"), c_class = t.column("class"), c_layout = t.column("layout"),
              c_shape = t.column("shape"), c_stroke = t.column("stroke"), c_color = t.column("color"),
              c_split = t.column("split");
    if (t.rows.size() != n_items)
        throw FormatError("labels.csv has " + std::to_string(t.rows.size()) + " rows, manifest says " +
                          std::to_string(n_items));
    std::set<std::uint64_t> ids;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const auto where = "labels.csv row " + std::to_string(r + 1) + ": ";
        try {
            BundleLabel l;
            l.item_id = detail::parse_u64(row[c_id], "item_id");
            l.cls = CompositeClass::parse(row[c_class]);
            if (to_string(l.cls.layout()) != row[c_layout] || to_string(l.cls.shape()) != row[c_shape] ||
                to_string(l.cls.stroke()) != row[c_stroke])
                throw FormatError("concept columns disagree with class " + row[c_class]);
            l.color = parse_hex(row[c_color]);
            l.split = parse_split(row[c_split]);
            if (!ids.insert(l.item_id).second) throw FormatError("duplicate item_id " + row[c_id]);
            b.labels.push_back(l);
        } catch (const FormatError& e) {
            throw FormatError(where + e.what());
        } catch (const Error& e) {
            throw FormatError(where + e.what());
        }
    }
    return b;
}

} // namespace uc
