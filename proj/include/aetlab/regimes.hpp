#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aetlab/attacks.hpp"
#include "aetlab/data.hpp"
#include "aetlab/models.hpp"
#include "aetlab/optim.hpp"

namespace aetlab::regimes {

enum class RegimeKind { Erm, At, Trades, Aet, Cat };

const char* to_string(RegimeKind k);
RegimeKind regime_from_string(const std::string& s);

struct CatSpec {
    /// Strictly increasing ℓ∞ radii, last one the maximum strength.
    std::vector<double> ladder;
    int patience = 3;

    /// `levels` evenly spaced radii from 0 to eps_max.
    static CatSpec even(double eps_max, int levels = 5, int patience = 3);
};

struct RegimeSpec {
    RegimeKind kind = RegimeKind::Aet;
    int t0 = 0;  // ignition epochs (aet)
    int t1 = 0;  // adversarial epochs; erm/at/trades/cat run t0 + t1 epochs in total
    /// Objective of the adversarial phase of aet: At or Trades.
    RegimeKind aet_inner = RegimeKind::At;
    double trades_beta = 6.0;
    CatSpec cat;
    attacks::PgdConfig train_pgd;
    optim::AdamHyper adam;
    optim::CosineSchedule schedule;
    std::size_t batch_size = 64;
    std::optional<data::AugmentConfig> augment;
    bool reset_moments_at_switch = false;
    /// Evaluation attack for the robust-accuracy column.
    attacks::AttackSpec eval_attack;
    std::uint64_t eval_seed = 0;
    bool eval_initial = true;

    int budget() const { return t0 + t1; }
    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    std::string phase;
    double lr = 0.0;
    double train_loss = 0.0;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    double wall_seconds = 0.0;  // measured training time of the epoch
    double eval_seconds = 0.0;
    int stage = -1;             // CAT stage, -1 otherwise
    double val_robust = -1.0;   // CAT validation metric
};

struct Snapshot {
    ParamList params;
    optim::AdamState opt;
    double metric = 0.0;
    int epoch = 0;
};

struct Rollback {
    int epoch = 0;       // epoch after which the rollback happened
    int stage = 0;
    int restored_epoch = 0;
    double metric = 0.0;
};

struct TrainState {
    models::CompositeModel model;
    optim::AdamState opt;
    int epoch = 0;
    std::mt19937_64 rng;
    std::vector<EpochReport> reports;
    std::optional<EpochReport> initial;  // evaluation of the untrained model

    // CAT bookkeeping
    int stage = 0;
    int since_improvement = 0;
    std::optional<Snapshot> best;
    std::vector<Rollback> rollbacks;
    int validation_attacks = 0;
    bool finished = false;

    static TrainState create(const models::ArchSpec& arch, const optim::AdamHyper& hyper, std::uint64_t seed);
};

/// Independent 64-bit seed for stream `tag` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

struct EvalResult {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

/// Accuracies in percent; the attack seed is derived from (seed, tag) so evaluation never touches training RNG.
EvalResult evaluate(const models::CompositeModel& model, const data::Dataset& d, const attacks::AttackSpec& attack,
                    std::uint64_t seed, std::uint64_t tag);

/// One pass returns the mean training loss.
double train_epoch_erm(TrainState& s, const data::Dataset& d, const RegimeSpec& spec, double lr);
double train_epoch_at(TrainState& s, const data::Dataset& d, const RegimeSpec& spec, const attacks::PgdConfig& pgd,
                      double lr);
double train_epoch_trades(TrainState& s, const data::Dataset& d, const RegimeSpec& spec,
                          const attacks::PgdConfig& pgd, double beta, double lr);

/// Called after every epoch with the report just appended.
using EpochHook = std::function<void(const TrainState&, const EpochReport&)>;

/// Phase label of epoch `e` (1-based) under `spec` for erm/at/trades/aet.
std::string phase_label(const RegimeSpec& spec, int e);

/// Runs (or resumes) erm/at/trades/aet until the budget is spent.
void run_schedule(TrainState& s, const RegimeSpec& spec, const data::Dataset& train, const data::Dataset& eval,
                  const EpochHook& hook = {});

/// Curriculum over spec.cat.ladder with validation-driven stage advances and stage-best rollback.
void run_cat(TrainState& s, const RegimeSpec& spec, const data::Dataset& train, const data::Dataset& val,
             const data::Dataset& eval, const EpochHook& hook = {});

}  // namespace aetlab::regimes
