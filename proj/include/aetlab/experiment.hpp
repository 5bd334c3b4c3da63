#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aetlab/config.hpp"
#include "aetlab/data.hpp"
#include "aetlab/error.hpp"
#include "aetlab/regimes.hpp"
#include "aetlab/theory.hpp"

namespace aetlab::exp {

/// Data used by one experiment. `probe` and `cat_val` are seed-pinned subsets of the training split.
struct Splits {
    data::Dataset train;
    data::Dataset test;
    data::Dataset eval;  // per-epoch evaluation subset of test
    data::Dataset probe;
    data::Dataset cat_val;
};

Splits load_splits(const config::ExperimentConfig& cfg);

/// Per-seed specialisations: init seed, evaluation seed.
models::ArchSpec arch_for_seed(const config::ExperimentConfig& cfg, std::uint64_t seed);
regimes::RegimeSpec regime_for_seed(const config::ExperimentConfig& cfg, std::uint64_t seed);
regimes::TrainState initial_state(const config::ExperimentConfig& cfg, std::uint64_t seed);

// ---- epochs.csv ------------------------------------------------------------------------

std::string csv_header();
std::string csv_row(const regimes::EpochReport& r, double wall_seconds);
/// Value of the wall_seconds column: modelled from the timing model unless measured time is requested.
double wall_column(const config::ExperimentConfig& cfg, const regimes::RegimeSpec& spec,
                   const regimes::EpochReport& r);

struct CsvRow {
    int epoch = 0;
    std::string phase;
    double lr = 0, train_loss = 0, clean_acc = 0, robust_acc = 0, wall_seconds = 0;
};
std::vector<CsvRow> read_csv(const std::string& path);

// ---- train ---------------------------------------------------------------------------------

struct TrainOptions {
    std::optional<std::string> resume;  // checkpoint to continue from
    std::ostream* log = nullptr;
};

struct RunSummary {
    std::uint64_t seed = 0;
    std::string dir;
    int epochs = 0;
    std::optional<regimes::EvalResult> final_eval;
    double measured_train_seconds = 0.0;
    std::vector<regimes::EpochReport> reports;
};

/// Trains one seed into `dir` (created if needed).
RunSummary train_seed(const config::ExperimentConfig& cfg, const Splits& splits, std::uint64_t seed,
                      const std::string& dir, const TrainOptions& opts = {});

/// Trains every configured seed; several seeds go to out/seed_N.
std::vector<RunSummary> cmd_train(const config::ExperimentConfig& cfg, const std::string& out,
                                  const TrainOptions& opts = {});

// ---- sweep-ratio -------------------------------------------------------------------------

struct SweepRow {
    int ce = 0;
    int at = 0;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    bool baseline = false;
};

/// Drops repeated (ce, at) pairs keeping the first, warning on `log`.
std::vector<std::pair<int, int>> dedupe_ratios(const std::vector<std::pair<int, int>>& ratios, std::ostream* log);
std::vector<SweepRow> cmd_sweep_ratio(const config::ExperimentConfig& cfg, const std::string& out,
                                      std::ostream* log = nullptr);

// ---- timing-model ----------------------------------------------------------------------------

struct TimingResult {
    std::int64_t total_centiseconds = 0;
    std::int64_t baseline_centiseconds = 0;
    std::int64_t savings_basis_points = 0;  // hundredths of a percent, rounded half up

    double total_seconds() const { return static_cast<double>(total_centiseconds) / 100.0; }
    double baseline_seconds() const { return static_cast<double>(baseline_centiseconds) / 100.0; }
    double savings_percent() const { return static_cast<double>(savings_basis_points) / 100.0; }
};

TimingResult cmd_timing_model(const config::TimingModel& tm, int n_ce);
/// "11339", "12280.4" style rendering of centiseconds.
std::string format_centiseconds(std::int64_t cs);
std::string format_basis_points(std::int64_t bp);

// ---- report ---------------------------------------------------------------------------------

struct ReportOptions {
    std::string out;  // defaults to the run directory
    std::ostream* log = nullptr;
};

/// Reads a run directory, writes report.json and curves.csv, and returns the JSON text.
/// Throws IncompleteTrace naming every missing artifact.
std::string cmd_report(const std::string& run_dir, const ReportOptions& opts = {});

class IncompleteTrace : public Error {
public:
    explicit IncompleteTrace(std::vector<std::string> missing);
    const std::vector<std::string>& missing() const { return missing_; }

private:
    std::vector<std::string> missing_;
};

// ---- evaluate ----------------------------------------------------------------------------------

/// Evaluates a checkpoint on the test split with the final attack; writes evaluation.json into `out`.
regimes::EvalResult cmd_evaluate(const config::ExperimentConfig& cfg, const std::string& checkpoint,
                                 std::uint64_t seed, const std::string& out);

}  // namespace aetlab::exp
