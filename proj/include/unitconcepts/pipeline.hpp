#pragma once

// Experiment configuration and the resumable end-to-end pipeline behind the
// command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unitconcepts/encoder.hpp"
#include "unitconcepts/probes.hpp"
#include "unitconcepts/suite.hpp"

namespace uc {

/// A dataset condition: the default dataset or a colors dataset with
/// correlation p. Written "default", "colors:rand" (p = 1/18) or "colors:<p>".
struct DataCondition {
    bool colors = false;
    double p = 1.0;

    static DataCondition parse(std::string_view s);
    std::string name() const;
    ColorSpec color_spec() const;
};

struct ExperimentConfig {
    std::filesystem::path output_dir = "experiment";
    int threads = 0;

    std::uint64_t data_seed = 0;
    int resolution = 64;
    int n_train = 1000;
    int n_val = 100;
    int n_test = 100;
    std::vector<std::string> conditions{"default"};  // the first one drives the non-grounding tests

    int pair_rows = 100;
    std::uint64_t pair_seed = 1;

    EncoderSpec encoder;
    std::filesystem::path bundle_path;        // import instead of training when set
    std::filesystem::path pair_bundle_path;   // minimal-pair reps for an imported bundle

    std::vector<SplitMode> split_modes{SplitMode::OneSlice, SplitMode::NMinus1Slices};
    std::vector<std::uint64_t> split_seeds{0};

    ProbeHyper probe;
    int inlp_iterations = 1;
    // INLP probe settings; unset means same as `probe`.
    std::optional<double> inlp_l2;
    std::optional<bool> inlp_standardize;
    Thresholds thresholds;

    nlohmann::json to_json() const;
    nlohmann::json inlp_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    /// Applies a dotted-path override such as "encoder.epochs=5". The value is
    /// parsed as JSON when possible and as a string otherwise.
    void apply_override(const std::string& assignment);
    /// Throws ConfigError on invalid settings.
    void validate() const;
    /// SHA-256 of the canonical JSON without output_dir and threads.
    std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

std::string sha256_hex(const std::string& data);

enum class Stage : std::uint8_t { GenData, TrainEncoder, Extract, TrainProbes, FitAblation, RunTests, AnalyzeLayers, Report };
std::string_view to_string(Stage s) noexcept;

/// Holds <dir>/.lock for its lifetime; throws IoError if another process
/// holds it.
class ExperimentLock {
public:
    explicit ExperimentLock(const std::filesystem::path& dir);
    ~ExperimentLock();
    ExperimentLock(const ExperimentLock&) = delete;
    ExperimentLock& operator=(const ExperimentLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Runs every stage up to and including `last`, reusing stage outputs whose
/// stamps match. Stage failures throw StageError. Returns the report JSON when
/// the report stage ran, otherwise null.
nlohmann::json run_pipeline(const ExperimentConfig& config, Stage last = Stage::Report, std::ostream* log = nullptr);

} // namespace uc
