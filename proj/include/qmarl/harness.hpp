/**
 * \file harness.hpp
 * \brief Run configuration, metrics CSV, checkpoints and the library side of
 *        the command-line subcommands.
 *
 * Every subcommand is a plain function so tests can drive it without a
 * process boundary. The CLI in tools/ only parses flags and maps errors to
 * exit codes.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmarl/rl.hpp"

namespace qmarl::harness {

namespace fs = std::filesystem;

/// Environment variable that replaces run.output_dir when set and non-empty.
inline constexpr const char* kOutputDirEnv = "QMARL_OUTPUT_DIR";

struct RunBlock {
    std::uint64_t seed = 1;
    int batches = 10;
    std::string output_dir = "runs/default";
    int parallelism = 1;
    /// Checkpoint every this many batches; the final checkpoint is always written.
    int checkpoint_every = 10;
    /// Print a batch summary every this many batches.
    int log_every = 1;
    /// Single worker and zeroed wall-clock columns, so reruns are byte-identical.
    bool deterministic = false;
};

struct RunConfig {
    grid::ScenarioConfig scenario;
    rl::TrainerConfig trainer;
    rl::NetworkConfig network;
    RunBlock run;

    void validate() const;
};

/// Missing keys take scenario defaults; unknown keys raise ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const fs::path& path);
nlohmann::ordered_json config_to_json(const RunConfig& cfg);
/// run.output_dir, or the environment override.
fs::path resolve_output_dir(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
    int batch = 0;
    int team = 0;
    double mean_reward = 0.0;
    double win_rate = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
    double mean_alive = 0.0;

    bool operator==(const MetricsRow&) const = default;
};

/// Comment line describing the reward normalisation, then the column names.
std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
/// Throws IoError on a malformed row.
MetricsRow parse_metrics_row(const std::string& line);
std::vector<MetricsRow> read_metrics(const fs::path& path);
/// One row per team.
std::vector<MetricsRow> metrics_rows(const rl::BatchMetrics& m, bool zero_seconds);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json checkpoint_to_json(const rl::ModelSet& models);
rl::ModelSet checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const fs::path& path, const rl::ModelSet& models);
rl::ModelSet load_checkpoint(const fs::path& path);
/// Throws ShapeMismatch if the models cannot drive `scenario` with `net`.
void check_compatible(const rl::ModelSet& models, const grid::ScenarioConfig& scenario, const rl::NetworkConfig& net);

// ---------------------------------------------------------------------------
// Subcommands

struct TrainResult {
    fs::path metrics_path;
    fs::path checkpoint_path;
    std::vector<rl::BatchMetrics> batches;
};

TrainResult run_train(const RunConfig& cfg, std::ostream& log);

struct EvalOptions {
    int episodes = 100;
    std::uint64_t seed = 1;
    /// Replace the home team size; the second team is scaled by the same factor.
    std::optional<int> agents;
    std::optional<rl::TeamPolicy> opponent;
};

rl::EvalSummary run_eval(const rl::ModelSet& models, const RunConfig& cfg, const EvalOptions& opts);

struct BenchOptions {
    std::vector<int> counts{10, 100, 1000, 10000};
    int episodes = 100;
    /// Cells per agent on the auto-sized square grid.
    double cells_per_agent = 16.0;
    /// Foods per agent.
    double food_ratio = 0.25;
    std::size_t memory_bound_bytes = std::size_t{8} << 30;
};

struct BenchRow {
    int agents = 0;
    int width = 0;
    int height = 0;
    int foods = 0;
    int episodes = 0;
    double seconds = 0.0;
};

/// Deduplicates and sorts `counts`, warning on `log` when duplicates occur.
std::vector<int> normalise_counts(const std::vector<int>& counts, std::ostream& log);
/// Density-matched scenario for `agents` agents derived from `base`.
grid::ScenarioConfig bench_scenario(const grid::ScenarioConfig& base, int agents, const BenchOptions& opts);
/// Rough peak bytes for one batch of `episodes` on `scenario`.
std::size_t estimate_batch_bytes(const grid::ScenarioConfig& scenario, const RunConfig& cfg, int episodes);
std::vector<BenchRow> run_bench(const RunConfig& cfg, const BenchOptions& opts, std::ostream& log);

struct RenderOptions {
    int episodes = 1;
    std::uint64_t seed = 1;
    fs::path output_dir;
    int cell_pixels = 8;
};

/// Writes frames.jsonl and one PPM per step. Returns the number of frames.
int run_render(const rl::ModelSet& models, const RunConfig& cfg, const RenderOptions& opts);

/// Portable pixmap of the world; the target landmark is drawn like any other.
std::string render_ppm(const grid::GridWorld& world, int cell_pixels);

/// One JSON line per sub-graph of a freshly built world.
std::vector<std::string> run_decompose(const RunConfig& cfg, std::uint64_t seed, int depth);

}  // namespace qmarl::harness
