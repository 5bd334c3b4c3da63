// Command-line driver: train, sweep-ratio, timing-model, report, evaluate.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "aetlab/config.hpp"
#include "aetlab/error.hpp"
#include "aetlab/experiment.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
    std::string config;
    std::string preset;
    std::string out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
    app->add_option("--config", c.config, "configuration file");
    app->add_option("--preset", c.preset, "built-in experiment preset (synthetic, mnist-desk, cifar-desk)");
    app->add_option("--seed", c.seed, "run seed (overrides [run] seeds)");
    if (with_out) app->add_option("--out", c.out, "output directory");
}

aetlab::config::ExperimentConfig load(const Common& c) {
    aetlab::config::ConfigFile file;
    if (!c.config.empty()) file = aetlab::config::ConfigFile::load(c.config);
    if (c.seed) file.set("run", "seeds", std::to_string(*c.seed));
    return aetlab::config::build(file, c.preset);
}

void apply_thread_cap() {
    const char* env = std::getenv("AETLAB_THREADS");
    if (!env || !*env) return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw aetlab::ConfigError("AETLAB_THREADS must be a positive integer");
    omp_set_num_threads(static_cast<int>(std::min<long>(n, omp_get_num_procs())));
}

std::string require_out(const Common& c) {
    if (c.out.empty()) throw aetlab::ConfigError("--out is required");
    return c.out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aetlab: adversarial training experiments"};
    app.require_subcommand(1);

    Common train_c, sweep_c, timing_c, report_c, eval_c;
    std::string resume, run_dir, checkpoint;
    std::vector<int> n_ce;

    auto* train = app.add_subcommand("train", "train one run per seed");
    add_common(train, train_c);
    train->add_option("--resume", resume, "continue from a checkpoint");

    auto* sweep = app.add_subcommand("sweep-ratio", "AET runs for every [sweep] ratios entry");
    add_common(sweep, sweep_c);

    auto* timing = app.add_subcommand("timing-model", "epoch-cost model of ignition savings");
    add_common(timing, timing_c, false);
    timing->add_option("--n-ce", n_ce, "number of natural epochs (repeatable; default 0,10,20,30)");

    auto* report = app.add_subcommand("report", "bound audit and curves from a run directory");
    add_common(report, report_c);
    report->add_option("--run", run_dir, "run directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    add_common(evaluate, eval_c);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        apply_thread_cap();
        if (*train) {
            const auto cfg = load(train_c);
            aetlab::exp::TrainOptions o;
            o.log = &std::cerr;
            if (!resume.empty()) o.resume = resume;
            for (const auto& r : aetlab::exp::cmd_train(cfg, require_out(train_c), o)) {
                std::printf("seed %llu: %d epochs -> %s", static_cast<unsigned long long>(r.seed), r.epochs, r.dir.c_str());
                if (r.final_eval) std::printf(" (clean %.2f, robust %.2f)", r.final_eval->clean_acc, r.final_eval->robust_acc);
                std::printf("\n");
            }
        } else if (*sweep) {
            const auto cfg = load(sweep_c);
            std::printf("ratio,clean_acc,robust_acc,baseline\n");
            for (const auto& r : aetlab::exp::cmd_sweep_ratio(cfg, require_out(sweep_c), &std::cerr))
                std::printf("%d/%d,%.4f,%.4f,%d\n", r.ce, r.at, r.clean_acc, r.robust_acc, r.baseline ? 1 : 0);
        } else if (*timing) {
            const auto cfg = load(timing_c);
            if (n_ce.empty()) n_ce = {0, 10, 20, 30};
            std::vector<aetlab::exp::TimingResult> rows;
            for (int n : n_ce) rows.push_back(aetlab::exp::cmd_timing_model(cfg.timing, n));
            std::printf("n_ce,total_seconds,baseline_seconds,savings_percent\n");
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const int n = n_ce[i];
                const auto& r = rows[i];
                std::printf("%d,%s,%s,%s\n", n, aetlab::exp::format_centiseconds(r.total_centiseconds).c_str(),
                            aetlab::exp::format_centiseconds(r.baseline_centiseconds).c_str(),
                            aetlab::exp::format_basis_points(r.savings_basis_points).c_str());
            }
        } else if (*report) {
            aetlab::exp::ReportOptions o;
            o.out = report_c.out;
            o.log = &std::cerr;
            std::fputs(aetlab::exp::cmd_report(run_dir, o).c_str(), stdout);
        } else if (*evaluate) {
            const auto cfg = load(eval_c);
            const auto seed = eval_c.seed.value_or(cfg.run.seeds.front());
            const auto r = aetlab::exp::cmd_evaluate(cfg, checkpoint, seed, require_out(eval_c));
            std::printf("clean %.4f robust %.4f (%s)\n", r.clean_acc, r.robust_acc, cfg.final_attack.name.c_str());
        }
    } catch (const aetlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const aetlab::exp::IncompleteTrace& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
