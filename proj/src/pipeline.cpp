#include "unitconcepts/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <openssl/evp.h>

#include "csv.hpp"
#include "unitconcepts/analysis.hpp"

namespace uc {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- conditions

DataCondition DataCondition::parse(std::string_view s) {
    if (s == "default") return {};
    constexpr std::string_view prefix = "colors:";
    if (s.substr(0, prefix.size()) != prefix)
        throw ConfigError("unknown dataset condition '" + std::string(s) + "' (expected default or colors:<p>)");
    const auto rest = std::string(s.substr(prefix.size()));
    DataCondition c;
    c.colors = true;
    if (rest == "rand") {
        c.p = 1.0 / kNumClasses;
    } else {
        try {
            std::size_t used = 0;
            c.p = std::stod(rest, &used);
            if (used != rest.size()) throw std::invalid_argument(rest);
        } catch (const std::exception&) {
            throw ConfigError("bad colors probability '" + rest + "'");
        }
    }
    (void)c.color_spec();  // validates p
    return c;
}

std::string DataCondition::name() const {
    if (!colors) return "default";
    if (std::abs(p - 1.0 / kNumClasses) < 1e-12) return "colors:rand";
    std::ostringstream ss;
    ss << "colors:" << p;
    return ss.str();
}

ColorSpec DataCondition::color_spec() const { return colors ? ColorSpec::correlated(p) : ColorSpec::monochrome(); }

// -------------------------------------------------------------------- config

namespace {

json probe_json(const ProbeHyper& h) {
    return {{"lr", h.lr},     {"max_epochs", h.max_epochs},   {"tolerance", h.tolerance}, {"l2", h.l2},
            {"bias", h.bias}, {"standardize", h.standardize}, {"seed", h.seed}};
}

json encoder_json(const EncoderSpec& s) {
    return {{"arch", to_string(s.arch)},     {"seed", s.seed}, {"epochs", s.epochs},
            {"batch_size", s.batch_size}, {"lr", s.lr},     {"patience", s.patience}};
}

void check_keys(const json& given, const json& known, const std::string& where) {
    if (!given.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (const auto& [k, v] : given.items()) {
        if (!known.contains(k)) throw ConfigError("unknown config key '" + where + k + "'");
        if (known.at(k).is_object()) check_keys(v, known.at(k), where + k + ".");
    }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

json ExperimentConfig::inlp_json() const {
    return {{"iterations", inlp_iterations},
            {"l2", inlp_l2 ? json(*inlp_l2) : json(nullptr)},
            {"standardize", inlp_standardize ? json(*inlp_standardize) : json(nullptr)}};
}

json ExperimentConfig::to_json() const {
    std::vector<std::string> modes;
    for (auto m : split_modes) modes.emplace_back(to_string(m));
    return {{"output_dir", output_dir.string()},
            {"threads", threads},
            {"dataset",
             {{"seed", data_seed},
              {"resolution", resolution},
              {"n_train", n_train},
              {"n_val", n_val},
              {"n_test", n_test},
              {"conditions", conditions}}},
            {"minimal_pairs", {{"rows", pair_rows}, {"seed", pair_seed}}},
            {"encoder", encoder_json(encoder)},
            {"bundle", {{"path", bundle_path.string()}, {"pairs_path", pair_bundle_path.string()}}},
            {"splits", {{"modes", modes}, {"seeds", split_seeds}}},
            {"probe", probe_json(probe)},
            {"inlp", inlp_json()},
            {"thresholds",
             {{"high", thresholds.high}, {"low_margin", thresholds.low_margin}, {"grounded_pass", thresholds.grounded_pass}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    check_keys(j, c.to_json(), "");
    try {
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        take(j, "threads", c.threads);
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            take(d, "seed", c.data_seed);
            take(d, "resolution", c.resolution);
            take(d, "n_train", c.n_train);
            take(d, "n_val", c.n_val);
            take(d, "n_test", c.n_test);
            take(d, "conditions", c.conditions);
        }
        if (j.contains("minimal_pairs")) {
            take(j.at("minimal_pairs"), "rows", c.pair_rows);
            take(j.at("minimal_pairs"), "seed", c.pair_seed);
        }
        if (j.contains("encoder")) {
            const auto& e = j.at("encoder");
            if (e.contains("arch")) c.encoder.arch = parse_encoder_arch(e.at("arch").get<std::string>());
            take(e, "seed", c.encoder.seed);
            take(e, "epochs", c.encoder.epochs);
            take(e, "batch_size", c.encoder.batch_size);
            take(e, "lr", c.encoder.lr);
            take(e, "patience", c.encoder.patience);
        }
        if (j.contains("bundle")) {
            const auto& b = j.at("bundle");
            if (b.contains("path")) c.bundle_path = b.at("path").get<std::string>();
            if (b.contains("pairs_path")) c.pair_bundle_path = b.at("pairs_path").get<std::string>();
        }
        if (j.contains("splits")) {
            const auto& s = j.at("splits");
            if (s.contains("modes")) {
                c.split_modes.clear();
                for (const auto& m : s.at("modes")) c.split_modes.push_back(parse_split_mode(m.get<std::string>()));
            }
            take(s, "seeds", c.split_seeds);
        }
        if (j.contains("probe")) {
            const auto& p = j.at("probe");
            take(p, "lr", c.probe.lr);
            take(p, "max_epochs", c.probe.max_epochs);
            take(p, "tolerance", c.probe.tolerance);
            take(p, "l2", c.probe.l2);
            take(p, "bias", c.probe.bias);
            take(p, "standardize", c.probe.standardize);
            take(p, "seed", c.probe.seed);
        }
        if (j.contains("inlp")) {
            const auto& n = j.at("inlp");
            take(n, "iterations", c.inlp_iterations);
            if (n.contains("l2") && !n.at("l2").is_null()) c.inlp_l2 = n.at("l2").get<double>();
            if (n.contains("standardize") && !n.at("standardize").is_null())
                c.inlp_standardize = n.at("standardize").get<bool>();
        }
        if (j.contains("thresholds")) {
            const auto& t = j.at("thresholds");
            take(t, "high", c.thresholds.high);
            take(t, "low_margin", c.thresholds.low_margin);
            take(t, "grounded_pass", c.thresholds.grounded_pass);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.encoder.resolution = c.resolution;
    return c;
}

void ExperimentConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json j = to_json();
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
    if (node->is_array() && !value.is_array()) value = json::array({value});
    *node = value;
    *this = from_json(j);
}

void ExperimentConfig::validate() const {
    if (resolution < kMinResolution) throw ConfigError("dataset.resolution must be >= " + std::to_string(kMinResolution));
    if (n_train < 1 || n_val < 0 || n_test < 1) throw ConfigError("dataset counts must be positive");
    if (conditions.empty()) throw ConfigError("dataset.conditions must not be empty");
    for (const auto& c : conditions) (void)DataCondition::parse(c);
    if (pair_rows < 1) throw ConfigError("minimal_pairs.rows must be >= 1");
    if (split_modes.empty()) throw ConfigError("splits.modes must not be empty");
    if (split_seeds.empty()) throw ConfigError("splits.seeds must not be empty");
    if (inlp_iterations < 1) throw ConfigError("inlp.iterations must be >= 1");
    if (inlp_l2 && !(*inlp_l2 >= 0.0)) throw ConfigError("inlp.l2 must be >= 0");
    if (probe.max_epochs < 1 || probe.lr <= 0) throw ConfigError("probe.max_epochs and probe.lr must be positive");
    if (encoder.epochs < 1 || encoder.batch_size < 2 || encoder.lr <= 0)
        throw ConfigError("encoder epochs, batch_size (>= 2) and lr must be positive");
    if (!(thresholds.high > 0 && thresholds.high <= 1)) throw ConfigError("thresholds.high must be in (0, 1]");
    if (thresholds.low_margin < 0) throw ConfigError("thresholds.low_margin must be >= 0");
    if (!bundle_path.empty()) {
        if (conditions.size() != 1) throw ConfigError("an imported bundle takes exactly one dataset condition");
        if (!fs::exists(bundle_path / "manifest.json"))
            throw ConfigError("bundle.path has no manifest.json: " + bundle_path.string());
        if (!pair_bundle_path.empty() && !fs::exists(pair_bundle_path / "manifest.json"))
            throw ConfigError("bundle.pairs_path has no manifest.json: " + pair_bundle_path.string());
    }
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("output_dir");
    j.erase("threads");
    return sha256_hex(j.dump());
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return ExperimentConfig::from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string_view to_string(Stage s) noexcept {
    switch (s) {
    case Stage::GenData: return "gen-data";
    case Stage::TrainEncoder: return "train-encoder";
    case Stage::Extract: return "extract";
    case Stage::TrainProbes: return "train-probes";
    case Stage::FitAblation: return "fit-ablation";
    case Stage::RunTests: return "run-tests";
    case Stage::AnalyzeLayers: return "analyze-layers";
    case Stage::Report: return "report";
    }
    return "?";
}

ExperimentLock::ExperimentLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw IoError("experiment directory is locked by another process (remove " + path_.string() +
                          " if that process is gone)");
        throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd, pid.data(), pid.size());
    ::close(fd);
}

ExperimentLock::~ExperimentLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ------------------------------------------------------------------ pipeline

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string hash_of(const json& j) { return sha256_hex(j.dump()).substr(0, 16); }

bool stamped(const fs::path& dir, const std::string& hash) {
    std::ifstream in(dir / "stamp.json");
    if (!in) return false;
    try {
        return json::parse(in).at("hash").get<std::string>() == hash;
    } catch (const json::exception&) {
        return false;
    }
}

void stamp(const fs::path& dir, Stage stage, const std::string& hash, const std::string& config_hash) {
    std::ofstream out(dir / "stamp.json");
    out << json{{"stage", to_string(stage)}, {"hash", hash}, {"config_hash", config_hash}}.dump(2) << '\n';
    if (!out) throw IoError("cannot write stamp in " + dir.string());
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return json::parse(in);
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string bundle_digest(const fs::path& dir) {
    json parts = json::array();
    parts.push_back(file_digest(dir / "manifest.json"));
    parts.push_back(file_digest(dir / "labels.csv"));
    const auto m = read_json(dir / "manifest.json");
    for (const auto& l : m.at("layers")) parts.push_back(file_digest(dir / l.at("file").get<std::string>()));
    return hash_of(parts);
}

struct ConditionState {
    DataCondition condition;
    std::string data_hash, pairs_hash, encoder_hash, bundle_hash, probe_hash;
    fs::path data_dir, pairs_dir, encoder_dir, bundle_dir, pair_bundle_dir, probe_dir;
    bool has_pairs = true;
    json encoder_summary;
};

class Pipeline {
public:
    Pipeline(const ExperimentConfig& cfg, std::ostream* log)
        : cfg_(cfg), log_(log), root_(cfg.output_dir), config_hash_(cfg.hash()) {}

    json run(Stage last) {
        for (const auto& name : cfg_.conditions) states_.push_back(plan(DataCondition::parse(name)));
        if (!cfg_.bundle_path.empty()) {
            step(Stage::Extract, [&] { import_bundles(states_.front()); });
        } else {
            for (auto& s : states_) {
                step(Stage::GenData, [&] { gen_data(s); });
                if (last < Stage::TrainEncoder) continue;
                step(Stage::TrainEncoder, [&] { train(s); });
                if (last < Stage::Extract) continue;
                step(Stage::Extract, [&] { extract(s); });
            }
        }
        if (last < Stage::TrainProbes) return nullptr;
        for (auto& s : states_) step(Stage::TrainProbes, [&] { train_probes(s); });
        if (last < Stage::FitAblation) return nullptr;
        step(Stage::FitAblation, [&] { fit_ablation(states_.front()); });
        if (last < Stage::RunTests) return nullptr;
        step(Stage::RunTests, [&] { run_tests(); });
        if (last < Stage::AnalyzeLayers) return nullptr;
        step(Stage::AnalyzeLayers, [&] { analyze_layers(states_.front()); });
        if (last < Stage::Report) return nullptr;
        json report;
        step(Stage::Report, [&] { report = write_report(); });
        return report;
    }

private:
    template <typename F>
    void step(Stage stage, F&& f) {
        try {
            f();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(std::string(to_string(stage)), e.what());
        }
    }

    void say(Stage stage, const std::string& msg) {
        if (log_) *log_ << "[" << to_string(stage) << "] " << msg << std::endl;
    }

    ConditionState plan(const DataCondition& c) {
        ConditionState s;
        s.condition = c;
        const json data{{"seed", cfg_.data_seed}, {"resolution", cfg_.resolution}, {"n_train", cfg_.n_train},
                        {"n_val", cfg_.n_val},    {"n_test", cfg_.n_test},         {"condition", c.name()}};
        s.data_hash = hash_of(data);
        s.pairs_hash = hash_of({{"rows", cfg_.pair_rows},
                                {"seed", cfg_.pair_seed},
                                {"resolution", cfg_.resolution},
                                {"condition", c.name()}});
        s.encoder_hash = hash_of({{"data", s.data_hash}, {"encoder", encoder_json(cfg_.encoder)}});
        s.data_dir = root_ / "data" / s.data_hash;
        s.pairs_dir = root_ / "pairs" / s.pairs_hash;
        s.encoder_dir = root_ / "encoder" / s.encoder_hash;
        return s;
    }

    void finish_bundle_paths(ConditionState& s) {
        s.bundle_dir = root_ / "bundles" / s.bundle_hash;
        s.pair_bundle_dir = s.bundle_dir / "pairs";
        s.probe_hash = hash_of({{"bundle", s.bundle_hash}, {"probe", probe_json(cfg_.probe)}});
        s.probe_dir = root_ / "probes" / s.probe_hash;
    }

    void gen_data(ConditionState& s) {
        if (!stamped(s.data_dir, s.data_hash)) {
            say(Stage::GenData, "rendering " + s.condition.name() + " dataset");
            DatasetConfig dc;
            dc.seed = cfg_.data_seed;
            dc.resolution = cfg_.resolution;
            dc.n_train = cfg_.n_train;
            dc.n_val = cfg_.n_val;
            dc.n_test = cfg_.n_test;
            dc.threads = cfg_.threads;
            const Dataset ds =
                s.condition.colors ? generate_colors_dataset(s.condition.p, dc) : generate_default_dataset(dc);
            save_dataset(ds, s.data_dir);
            stamp(s.data_dir, Stage::GenData, s.data_hash, config_hash_);
        }
        if (!stamped(s.pairs_dir, s.pairs_hash)) {
            say(Stage::GenData, "rendering " + s.condition.name() + " minimal pairs");
            const auto pairs = generate_minimal_pairs(cfg_.pair_rows, cfg_.pair_seed, s.condition.color_spec(),
                                                      cfg_.resolution, cfg_.threads);
            save_minimal_pairs(pairs, s.pairs_dir);
            stamp(s.pairs_dir, Stage::GenData, s.pairs_hash, config_hash_);
        }
    }

    const Dataset& dataset(ConditionState& s) {
        auto it = datasets_.find(s.data_hash);
        if (it == datasets_.end()) it = datasets_.emplace(s.data_hash, load_dataset(s.data_dir)).first;
        return it->second;
    }

    void train(ConditionState& s) {
        if (!stamped(s.encoder_dir, s.encoder_hash)) {
            say(Stage::TrainEncoder, "training " + std::string(to_string(cfg_.encoder.arch)) + " encoder on " +
                                         s.condition.name());
            EncoderSpec spec = cfg_.encoder;
            spec.resolution = cfg_.resolution;
            const auto enc = train_encoder(dataset(s), spec, log_);
            save_encoder(enc, s.encoder_dir);
            stamp(s.encoder_dir, Stage::TrainEncoder, s.encoder_hash, config_hash_);
        }
        const auto j = read_json(s.encoder_dir / "encoder.json");
        s.encoder_summary = {{"condition", s.condition.name()},
                             {"name", j.at("name")},
                             {"epochs_run", j.at("report").at("epochs_run")},
                             {"best_epoch", j.at("report").at("best_epoch")},
                             {"train_accuracy", j.at("report").at("final_train_accuracy")},
                             {"val_accuracy", j.at("report").at("final_val_accuracy")}};
    }

    void extract(ConditionState& s) {
        s.bundle_hash = s.encoder_hash;
        finish_bundle_paths(s);
        if (stamped(s.bundle_dir, s.bundle_hash)) return;
        say(Stage::Extract, "encoding " + s.condition.name() + " dataset and minimal pairs");
        const auto enc = load_encoder(s.encoder_dir);
        export_bundle(enc, dataset(s), s.bundle_dir);
        const auto pairs = load_minimal_pairs(s.pairs_dir);
        export_bundle(enc, pairs.dataset, s.pair_bundle_dir);
        datasets_.erase(s.data_hash);
        stamp(s.bundle_dir, Stage::Extract, s.bundle_hash, config_hash_);
    }

    void import_bundles(ConditionState& s) {
        say(Stage::Extract, "importing bundle " + cfg_.bundle_path.string());
        json parts{{"data", bundle_digest(cfg_.bundle_path)}};
        s.has_pairs = !cfg_.pair_bundle_path.empty();
        if (s.has_pairs) parts["pairs"] = bundle_digest(cfg_.pair_bundle_path);
        s.bundle_hash = hash_of(parts);
        finish_bundle_paths(s);
        if (stamped(s.bundle_dir, s.bundle_hash)) return;
        save_bundle(import_bundle(cfg_.bundle_path), s.bundle_dir);
        if (s.has_pairs) save_bundle(import_bundle(cfg_.pair_bundle_path), s.pair_bundle_dir);
        stamp(s.bundle_dir, Stage::Extract, s.bundle_hash, config_hash_);
    }

    const RepresentationBundle& bundle(const ConditionState& s) {
        auto it = bundles_.find(s.bundle_hash);
        if (it == bundles_.end()) it = bundles_.emplace(s.bundle_hash, import_bundle(s.bundle_dir)).first;
        return it->second;
    }

    const Reps& reps(const ConditionState& s) {
        auto it = reps_.find(s.bundle_hash);
        if (it == reps_.end()) it = reps_.emplace(s.bundle_hash, Reps::from_bundle(bundle(s))).first;
        return it->second;
    }

    void train_probes(ConditionState& s) {
        if (stamped(s.probe_dir, s.probe_hash)) return;
        say(Stage::TrainProbes, "composite probe for " + s.condition.name());
        save_probe(train_composite_probe(reps(s), cfg_.probe), s.probe_dir / "composite");
        stamp(s.probe_dir, Stage::TrainProbes, s.probe_hash, config_hash_);
    }

    std::string projection_hash(const ConditionState& s, SplitMode mode, std::uint64_t seed, Dimension d) const {
        return hash_of({{"bundle", s.bundle_hash},
                        {"probe", probe_json(cfg_.probe)},
                        {"inlp", cfg_.inlp_json()},
                        {"mode", to_string(mode)},
                        {"seed", seed},
                        {"dimension", to_string(d)}});
    }

    SuiteOptions options() const {
        SuiteOptions o;
        o.thresholds = cfg_.thresholds;
        o.hyper = cfg_.probe;
        o.inlp.iterations = cfg_.inlp_iterations;
        o.inlp.hyper = cfg_.probe;
        o.inlp.hyper.seed = derive_seed(cfg_.probe.seed, {0x171b});
        if (cfg_.inlp_l2) o.inlp.hyper.l2 = *cfg_.inlp_l2;
        if (cfg_.inlp_standardize) o.inlp.hyper.standardize = *cfg_.inlp_standardize;
        return o;
    }

    void fit_ablation(const ConditionState& s) {
        for (auto mode : cfg_.split_modes)
            for (auto seed : cfg_.split_seeds)
                for (auto d : kDimensions) {
                    const auto h = projection_hash(s, mode, seed, d);
                    const auto dir = root_ / "projections" / h;
                    if (stamped(dir, h)) continue;
                    say(Stage::FitAblation, std::string(to_string(mode)) + " seed " + std::to_string(seed) +
                                                " ablating " + std::string(to_string(d)));
                    const auto p = fit_projection(reps(s), SplitPlan{mode, seed}, d, options().inlp);
                    fs::create_directories(dir);
                    save_projection(p, dir / "projection");
                    stamp(dir, Stage::FitAblation, h, config_hash_);
                }
    }

    // Loads a cached result or computes and stores it.
    template <typename F>
    json result(const std::string& test, const json& key, F&& compute) {
        const auto h = hash_of({{"test", test}, {"key", key}, {"thresholds", cfg_.to_json().at("thresholds")}});
        const auto path = root_ / "results" / test / (h + ".json");
        if (fs::exists(path)) {
            const auto j = read_json(path);
            if (j.value("hash", "") == h) return j;
        }
        TestResult r = compute();
        json j = r.to_json(cfg_.thresholds);
        j["hash"] = h;
        j["key"] = key;
        j["config_hash"] = config_hash_;
        write_json(path, j);
        return j;
    }

    void run_tests() {
        const auto opt = options();
        for (auto& s : states_) {
            if (!s.has_pairs) {
                say(Stage::RunTests, "no minimal-pair bundle for " + s.condition.name() + "; skipping is_grounded");
                continue;
            }
            const json key{{"condition", s.condition.name()}, {"bundle", s.bundle_hash}, {"probe", s.probe_hash}};
            auto j = result("is_grounded", key, [&] {
                const auto probe = load_probe(s.probe_dir / "composite");
                const auto pb = import_bundle(s.pair_bundle_dir);
                std::vector<CompositeClass> truth;
                for (const auto& l : pb.labels) truth.push_back(l.cls);
                auto r = run_is_grounded(probe, pb.final_layer().cast<double>(), truth, opt.thresholds);
                r.snapshot = {{"condition", s.condition.name()},
                              {"encoder", pb.encoder},
                              {"minimal_pair_items", pb.n_items()}};
                return r;
            });
            grounding_.push_back({{"condition", s.condition.name()},
                                  {"p", s.condition.colors ? json(s.condition.p) : json(nullptr)},
                                  {"result", j}});
        }

        auto& s = states_.front();
        const auto composite = load_probe(s.probe_dir / "composite");
        for (auto mode : cfg_.split_modes)
            for (auto seed : cfg_.split_seeds) {
                const SplitPlan plan{mode, seed};
                for (auto d : kDimensions) {
                    say(Stage::RunTests, std::string(to_string(mode)) + " seed " + std::to_string(seed) + " " +
                                             std::string(to_string(d)));
                    const json base{{"condition", s.condition.name()},
                                    {"bundle", s.bundle_hash},
                                    {"mode", to_string(mode)},
                                    {"seed", seed},
                                    {"dimension", to_string(d)},
                                    {"probe", probe_json(cfg_.probe)}};
                    auto tag = [&](json j) {
                        j["mode"] = to_string(mode);
                        j["seed"] = seed;
                        j["condition"] = s.condition.name();
                        return j;
                    };
                    tests_.push_back(tag(result("is_token_of_type", base, [&] {
                        return run_is_token_of_type(reps(s), plan.split(d), opt);
                    })));
                    const auto ph = projection_hash(s, mode, seed, d);
                    const auto pdir = root_ / "projections" / ph;
                    json pkey = base;
                    pkey["projection"] = ph;
                    tests_.push_back(tag(result("is_modular", pkey, [&] {
                        return run_is_modular(reps(s), plan, d, load_projection(pdir / "projection"), opt);
                    })));
                    pkey["composite_probe"] = s.probe_hash;
                    tests_.push_back(tag(result("is_causal", pkey, [&] {
                        return run_is_causal(reps(s), plan, d, composite, load_projection(pdir / "projection"), opt);
                    })));
                }
            }
    }

    void analyze_layers(const ConditionState& s) {
        const json key{{"bundle", s.bundle_hash}, {"probe", probe_json(cfg_.probe)}};
        const auto h = hash_of(key);
        const auto path = root_ / "results" / "layerwise" / (h + ".json");
        if (fs::exists(path)) {
            layerwise_ = read_json(path).at("records");
            return;
        }
        say(Stage::AnalyzeLayers, "layerwise probes for " + s.condition.name());
        layerwise_ = json::array();
        for (const auto& r : layerwise_report(bundle(s), cfg_.probe))
            layerwise_.push_back({{"layer", r.layer},
                                  {"acc_layout", r.acc_layout},
                                  {"acc_shape", r.acc_shape},
                                  {"acc_stroke", r.acc_stroke},
                                  {"acc_composed", r.acc_composed},
                                  {"acc_direct", r.acc_direct},
                                  {"nmi", r.nmi},
                                  {"n_items", r.n_items}});
        write_json(path, {{"hash", h}, {"key", key}, {"config_hash", config_hash_}, {"records", layerwise_}});
    }

    json write_report() {
        json cfg = cfg_.to_json();
        cfg.erase("output_dir");
        cfg.erase("threads");

        // Seed means per (test, mode, dimension, condition name).
        std::map<std::tuple<std::string, std::string, std::string, std::string>, std::pair<double, int>> sums;
        for (const auto& t : tests_)
            for (const auto& c : t.at("conditions")) {
                auto& e = sums[{t.at("test").get<std::string>(), t.at("mode").get<std::string>(),
                                t.at("dimension").get<std::string>(), c.at("name").get<std::string>()}];
                e.first += c.at("accuracy").get<double>();
                e.second += 1;
            }
        json means = json::array();
        for (const auto& [k, v] : sums)
            means.push_back({{"test", std::get<0>(k)},
                             {"mode", std::get<1>(k)},
                             {"dimension", std::get<2>(k)},
                             {"measured", std::get<3>(k)},
                             {"mean", v.first / v.second},
                             {"n_seeds", v.second}});

        json encoders = json::array();
        for (const auto& s : states_)
            if (!s.encoder_summary.is_null()) encoders.push_back(s.encoder_summary);

        json report{{"format", "unitconcepts-report"},
                    {"version", 1},
                    {"config_hash", cfg_.hash()},
                    {"config", cfg},
                    {"rules",
                     {{"high", "accuracy > " + fmt(cfg_.thresholds.high)},
                      {"low", "accuracy <= chance + " + fmt(cfg_.thresholds.low_margin)},
                      {"grounded", "accuracy >= " + fmt(cfg_.thresholds.grounded_pass)},
                      {"nmi", "I(A;B) / ((H(A) + H(B)) / 2); both constant and equal -> 1, one constant -> 0"}}},
                    {"encoders", encoders},
                    {"grounding", grounding_},
                    {"tests", tests_},
                    {"means", means},
                    {"layerwise", layerwise_}};
        write_json(root_ / "report.json", report);
        write_json(root_ / "config.json", cfg_.to_json());
        for (const char* test : {"is_grounded", "is_token_of_type", "is_modular", "is_causal"}) {
            json rows = json::array();
            for (const auto& g : grounding_)
                if (g.at("result").at("test") == test) rows.push_back(g.at("result"));
            for (const auto& t : tests_)
                if (t.at("test") == test) rows.push_back(t);
            write_json(root_ / "results" / test / (config_hash_ + ".json"), {{"config_hash", config_hash_}, {"results", rows}});
        }
        write_csvs(means);
        write_markdown(report);
        say(Stage::Report, "wrote " + (root_ / "report.json").string());
        return report;
    }

    void write_csvs(const json& means) {
        {
            detail::CsvWriter csv(root_ / "fig2.csv", {"condition", "p", "accuracy", "verdict"});
            for (const auto& g : grounding_) {
                const auto& r = g.at("result");
                csv.row({g.at("condition").get<std::string>(), g.at("p").is_null() ? "" : fmt(g.at("p").get<double>()),
                         fmt(r.at("conditions").at(0).at("accuracy").get<double>()), r.at("verdict").get<std::string>()});
            }
        }
        auto per_test = [&](const fs::path& path, const std::vector<std::string>& tests) {
            detail::CsvWriter csv(path, {"test", "mode", "seed", "dimension", "measured", "accuracy", "satisfied"});
            for (const auto& t : tests_) {
                if (std::find(tests.begin(), tests.end(), t.at("test").get<std::string>()) == tests.end()) continue;
                for (const auto& c : t.at("conditions"))
                    csv.row({t.at("test").get<std::string>(), t.at("mode").get<std::string>(),
                             std::to_string(t.at("seed").get<std::uint64_t>()), t.at("dimension").get<std::string>(),
                             c.at("name").get<std::string>(), fmt(c.at("accuracy").get<double>()),
                             c.at("satisfied").get<bool>() ? "yes" : "no"});
            }
            for (const auto& m : means) {
                if (std::find(tests.begin(), tests.end(), m.at("test").get<std::string>()) == tests.end()) continue;
                csv.row({m.at("test").get<std::string>(), m.at("mode").get<std::string>(), "mean",
                         m.at("dimension").get<std::string>(), m.at("measured").get<std::string>(),
                         fmt(m.at("mean").get<double>()), ""});
            }
        };
        per_test(root_ / "fig3.csv", {"is_token_of_type", "is_modular"});
        per_test(root_ / "fig4.csv", {"is_causal"});
        detail::CsvWriter csv(root_ / "layerwise.csv",
                              {"layer", "acc_layout", "acc_shape", "acc_stroke", "acc_composed", "acc_direct", "nmi"});
        for (const auto& r : layerwise_)
            csv.row({r.at("layer").get<std::string>(), fmt(r.at("acc_layout").get<double>()),
                     fmt(r.at("acc_shape").get<double>()), fmt(r.at("acc_stroke").get<double>()),
                     fmt(r.at("acc_composed").get<double>()), fmt(r.at("acc_direct").get<double>()),
                     fmt(r.at("nmi").get<double>())});
    }

    void write_markdown(const json& report) {
        std::ofstream md(root_ / "report.md");
        md << "# Concept unit tests\n\nConfig hash: `" << report.at("config_hash").get<std::string>() << "`\n\n";
        md << "Rules: high means " << report.at("rules").at("high").get<std::string>() << "; low means "
           << report.at("rules").at("low").get<std::string>() << "; is_grounded passes at "
           << report.at("rules").at("grounded").get<std::string>() << ".\n\n";
        if (!report.at("encoders").empty()) {
            md << "## Encoders\n\n| condition | encoder | epochs | train acc | val acc |\n|---|---|---|---|---|\n";
            for (const auto& e : report.at("encoders"))
                md << "| " << e.at("condition").get<std::string>() << " | " << e.at("name").get<std::string>() << " | "
                   << e.at("epochs_run").get<int>() << " | " << fmt(e.at("train_accuracy").get<double>()) << " | "
                   << fmt(e.at("val_accuracy").get<double>()) << " |\n";
            md << "\n";
        }
        md << "## is_grounded (minimal pairs)\n\n| condition | accuracy | verdict |\n|---|---|---|\n";
        for (const auto& g : grounding_)
            md << "| " << g.at("condition").get<std::string>() << " | "
               << fmt(g.at("result").at("conditions").at(0).at("accuracy").get<double>()) << " | "
               << g.at("result").at("verdict").get<std::string>() << " |\n";
        for (const char* test : {"is_token_of_type", "is_modular", "is_causal"}) {
            md << "\n## " << test << "\n\n| mode | seed | dimension | accuracies | verdict |\n|---|---|---|---|---|\n";
            for (const auto& t : tests_) {
                if (t.at("test") != test) continue;
                std::string accs;
                for (const auto& c : t.at("conditions"))
                    accs += (accs.empty() ? "" : ", ") + c.at("name").get<std::string>() + " " +
                            fmt(c.at("accuracy").get<double>());
                md << "| " << t.at("mode").get<std::string>() << " | " << t.at("seed").get<std::uint64_t>() << " | "
                   << t.at("dimension").get<std::string>() << " | " << accs << " | " << t.at("verdict").get<std::string>()
                   << " |\n";
            }
        }
        if (!layerwise_.empty()) {
            md << "\n## Layerwise\n\n| layer | layout | shape | stroke | composed | direct | NMI |\n"
                  "|---|---|---|---|---|---|---|\n";
            for (const auto& r : layerwise_)
                md << "| " << r.at("layer").get<std::string>() << " | " << fmt(r.at("acc_layout").get<double>()) << " | "
                   << fmt(r.at("acc_shape").get<double>()) << " | " << fmt(r.at("acc_stroke").get<double>()) << " | "
                   << fmt(r.at("acc_composed").get<double>()) << " | " << fmt(r.at("acc_direct").get<double>()) << " | "
                   << fmt(r.at("nmi").get<double>()) << " |\n";
        }
        if (!md) throw IoError("cannot write report.md");
    }

    const ExperimentConfig& cfg_;
    std::ostream* log_;
    fs::path root_;
    std::string config_hash_;
    std::vector<ConditionState> states_;
    std::map<std::string, Dataset> datasets_;
    std::map<std::string, RepresentationBundle> bundles_;
    std::map<std::string, Reps> reps_;
    json grounding_ = json::array();
    json tests_ = json::array();
    json layerwise_ = json::array();
};

} // namespace

json run_pipeline(const ExperimentConfig& config, Stage last, std::ostream* log) {
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw StageError("config", e.what());
    }
    ExperimentLock lock(config.output_dir);
    Pipeline p(config, log);
    return p.run(last);
}

} // namespace uc
