#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aetlab/models.hpp"
#include "aetlab/norms.hpp"
#include "aetlab/tensor.hpp"

namespace aetlab::attacks {

struct ThreatModel {
    Norm p = Norm::Linf;
    double delta = 0.0;
    double lo = 0.0;
    double hi = 1.0;

    void validate() const;
};

struct PgdConfig {
    ThreatModel threat;
    double alpha = 2.0 / 255.0;
    int steps = 10;
    bool random_start = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CwConfig {
    double c = 1.0;      // trade-off constant
    double kappa = 0.0;  // margin
    int steps = 100;
    double lr = 0.01;

    void validate() const;
};

enum class AttackKind { None, Fgsm, Pgd, Cw };

struct AttackSpec {
    std::string name;
    AttackKind kind = AttackKind::None;
    PgdConfig pgd;  // threat is shared by fgsm and pgd
    CwConfig cw;
};

/// Named evaluation and training attack configurations ("mnist-pgd20", "cifar-cw", "train-pgd", ...).
AttackSpec preset(const std::string& name);
std::vector<std::string> preset_names();

/// Projection onto B_p(center, delta) intersected with the clip box. Rows are projected independently.
Tensor project_ball(const Tensor& candidate, const Tensor& center, const ThreatModel& threat);

/// Gradient of the objective being maximized, evaluated at a batch of candidates.
using AscentGrad = std::function<Tensor(const Tensor& x_adv)>;

/// Projected ascent from `x` (random start drawn from `rng` when enabled).
Tensor pgd_ascent(const Tensor& x, const AscentGrad& grad, const PgdConfig& cfg, std::mt19937_64& rng);

Tensor fgsm(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const ThreatModel& threat);
/// Cross-entropy PGD seeded by cfg.seed.
Tensor pgd(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const PgdConfig& cfg);

struct CwResult {
    Tensor x_adv;
    std::vector<bool> found;
};

CwResult cw_l2(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const CwConfig& cfg);

struct WorstCase {
    Tensor x;  // one example, same shape as the input
    double loss = 0.0;
};

/// Exhaustive grid search for a single example (no batch axis).
WorstCase brute_force_worst_case(const models::CompositeModel& model, const Tensor& x, int y,
                                 const ThreatModel& threat, int grid_levels);

/// Applies `spec` to a batch; AttackKind::None returns x.
Tensor run_attack(const AttackSpec& spec, const models::CompositeModel& model, const Tensor& x,
                  std::span<const int> y);

}  // namespace aetlab::attacks
