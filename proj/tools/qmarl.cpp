// Command-line front end: train, eval, bench, render, decompose.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qmarl/harness.hpp"

using namespace qmarl;
namespace hs = qmarl::harness;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> batches;
    std::optional<std::string> output;
    std::optional<int> parallelism;
    std::optional<std::string> algorithm;
    bool deterministic = false;
};

hs::RunConfig load_with(const std::string& path, const Overrides& o) {
    auto cfg = hs::load_config(path);
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.batches) cfg.run.batches = *o.batches;
    if (o.output) cfg.run.output_dir = *o.output;
    if (o.parallelism) cfg.run.parallelism = *o.parallelism;
    if (o.algorithm) cfg.trainer.algorithm = rl::parse_algorithm(*o.algorithm);
    if (o.deterministic) cfg.run.deterministic = true;
    cfg.validate();
    return cfg;
}

rl::ModelSet models_for(const std::optional<std::string>& checkpoint, const hs::RunConfig& cfg) {
    if (checkpoint) return hs::load_checkpoint(*checkpoint);
    return rl::make_models(cfg.scenario.num_teams(), cfg.trainer.algorithm, cfg.network, cfg.trainer, cfg.run.seed);
}

void print_summary(const rl::EvalSummary& s, grid::Scenario scenario) {
    std::cout << "episodes " << s.episodes;
    for (int t = 0; t < s.num_teams; ++t) std::cout << " | team " << t << " mean_reward " << s.mean_reward[static_cast<std::size_t>(t)];
    if (scenario != grid::Scenario::Jungle) std::cout << " | win_rate " << s.win_rate << " tie_rate " << s.tie_rate;
    std::cout << " | mean_alive " << s.mean_alive << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sub-graph message-passing multi-agent trainer"};
    app.require_subcommand(1);

    std::string config;
    Overrides ov;

    auto* train = app.add_subcommand("train", "Train from a config file");
    train->add_option("-c,--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", ov.seed, "Override run.seed");
    train->add_option("--batches", ov.batches, "Override run.batches");
    train->add_option("-o,--output", ov.output, "Override run.output_dir");
    train->add_option("-j,--parallelism", ov.parallelism, "Override run.parallelism");
    train->add_option("--algorithm", ov.algorithm, "vanilla-pg, qmarl-pg or qmarl-ac");
    train->add_flag("--deterministic", ov.deterministic, "Single worker, zeroed timing column");

    std::optional<std::string> checkpoint;
    hs::EvalOptions eval_opts;
    std::optional<std::string> opponent;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint in argmax mode");
    eval->add_option("-c,--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    eval->add_option("-k,--checkpoint", checkpoint, "Checkpoint; fresh models when omitted");
    eval->add_option("-n,--episodes", eval_opts.episodes, "Episodes")->check(CLI::NonNegativeNumber);
    eval->add_option("--seed", eval_opts.seed, "Evaluation seed");
    eval->add_option("--agents", eval_opts.agents, "Home team size for evaluation");
    eval->add_option("--opponent", opponent, "learned or random");

    std::vector<int> counts;
    hs::BenchOptions bench_opts;
    std::optional<int> bench_limit;
    auto* bench = app.add_subcommand("bench", "Time one batch of training updates per agent count");
    bench->add_option("-c,--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    bench->add_option("--counts", counts, "Agent counts")->delimiter(',');
    bench->add_option("-n,--episodes", bench_opts.episodes, "Episodes per timing");
    bench->add_option("--limit", bench_limit, "Override scenario.episode_limit");
    bench->add_option("--cells-per-agent", bench_opts.cells_per_agent, "Grid cells per agent");
    bench->add_option("-j,--parallelism", ov.parallelism, "Override run.parallelism");

    hs::RenderOptions render_opts;
    std::string render_dir;
    auto* render = app.add_subcommand("render", "Dump frames and images of evaluation episodes");
    render->add_option("-c,--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    render->add_option("-k,--checkpoint", checkpoint, "Checkpoint; fresh models when omitted");
    render->add_option("-n,--episodes", render_opts.episodes, "Episodes");
    render->add_option("--seed", render_opts.seed, "Episode seed");
    render->add_option("-o,--output", render_dir, "Output directory")->required();
    render->add_option("--cell-pixels", render_opts.cell_pixels, "Pixels per grid cell");

    std::uint64_t decompose_seed = 1;
    std::optional<int> depth;
    auto* decompose = app.add_subcommand("decompose", "Print the sub-graphs of one generated world");
    decompose->add_option("-c,--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    decompose->add_option("--seed", decompose_seed, "World seed");
    decompose->add_option("--depth", depth, "Neighbourhood depth; trainer.depth when omitted");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const auto cfg = load_with(config, ov);
            const auto r = hs::run_train(cfg, std::cout);
            std::cout << "metrics " << r.metrics_path.string() << "\ncheckpoint " << r.checkpoint_path.string() << '\n';
        } else if (*eval) {
            const auto cfg = load_with(config, ov);
            if (opponent) eval_opts.opponent = rl::parse_team_policy(*opponent);
            const auto models = models_for(checkpoint, cfg);
            print_summary(hs::run_eval(models, cfg, eval_opts), cfg.scenario.scenario);
        } else if (*bench) {
            auto cfg = load_with(config, ov);
            if (bench_limit) cfg.scenario.episode_limit = *bench_limit;
            if (!counts.empty()) bench_opts.counts = counts;
            const auto rows = hs::run_bench(cfg, bench_opts, std::cerr);
            std::cout << "agents,width,height,foods,episodes,seconds\n";
            for (const auto& r : rows)
                std::cout << r.agents << ',' << r.width << ',' << r.height << ',' << r.foods << ',' << r.episodes << ','
                          << r.seconds << '\n';
        } else if (*render) {
            const auto cfg = load_with(config, ov);
            render_opts.output_dir = render_dir;
            const auto models = models_for(checkpoint, cfg);
            const int frames = hs::run_render(models, cfg, render_opts);
            std::cout << frames << " frames written to " << render_dir << '\n';
        } else if (*decompose) {
            const auto cfg = load_with(config, ov);
            for (const auto& line : hs::run_decompose(cfg, decompose_seed, depth.value_or(cfg.trainer.depth)))
                std::cout << line << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ShapeMismatch& e) {
        std::cerr << "shape mismatch: " << e.what() << '\n';
        return 3;
    } catch (const ResourceError& e) {
        std::cerr << "resource error: " << e.what() << '\n';
        return 4;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
