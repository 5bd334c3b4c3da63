#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aetlab/attacks.hpp"
#include "aetlab/data.hpp"
#include "aetlab/models.hpp"
#include "aetlab/norms.hpp"
#include "aetlab/tensor.hpp"

namespace aetlab::theory {

// ---- risks ----------------------------------------------------------------------

enum class LossKind { CrossEntropy, ZeroOne };

/// Per-example losses of precomputed logits.
std::vector<double> losses_from_logits(const Tensor& logits, std::span<const int> labels, LossKind loss);
double mean_loss(std::span<const double> losses);

double nat_risk(const models::CompositeModel& model, const data::Dataset& d, LossKind loss);

enum class AdvMethod { Pgd, Brute };

struct AdvRiskSpec {
    AdvMethod method = AdvMethod::Pgd;
    attacks::PgdConfig pgd;  // pgd.threat is also the brute-force threat
    int grid_levels = 5;
};

struct AdvRisk {
    double value = 0.0;
    /// "exact" for brute-force enumeration, "pgd_lower_bound" otherwise.
    std::string tag;
};

/// Mean loss at the attacked points; both methods maximize cross-entropy.
AdvRisk adv_risk(const models::CompositeModel& model, const data::Dataset& d, LossKind loss, const AdvRiskSpec& spec);

// ---- instance metric and W1 ---------------------------------------------------------

struct InstanceMetric {
    Norm p = Norm::L2;
    double c = 1.0;
};

double instance_metric(std::span<const double> x, int y, std::span<const double> x2, int y2, const InstanceMetric& m);

enum class Space { Input, Feature };

struct EmpiricalDistribution {
    Tensor points;            // [n, d]
    std::vector<int> labels;  // empty for unlabeled (feature pushforwards)
    std::vector<double> weights;  // empty means uniform
    Space space = Space::Input;

    std::size_t size() const { return points.rank() ? points.dim(0) : 0; }
    std::size_t dim() const { return points.rank() == 2 ? points.dim(1) : 0; }
    bool uniform() const { return weights.empty(); }
    double weight(std::size_t i) const;
    void validate() const;

    /// Flattens a batch of examples [n, ...] into [n, d].
    static EmpiricalDistribution from_batch(const Tensor& batch, std::vector<int> labels = {},
                                            Space space = Space::Input);
};

enum class W1Mode { Exact, Sliced };

struct W1Options {
    std::size_t projections = 64;
    std::uint64_t seed = 0;
    /// Explicit unit directions for sliced mode (overrides the random draw when non-empty).
    std::vector<std::vector<double>> directions;
    std::size_t max_assignment = 512;
    std::size_t max_lp_cells = 4096;
};

/// Pairwise instance-metric costs [|P| × |Q|], row-major.
std::vector<double> cost_matrix(const EmpiricalDistribution& P, const EmpiricalDistribution& Q, const InstanceMetric& m);

/// Minimum-cost perfect assignment on a square cost matrix; returns the column of every row.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n);

/// Optimal transport cost by the transport linear program (dense simplex).
double transport_lp(std::span<const double> cost, std::span<const double> a, std::span<const double> b);

/// W1 between weighted samples on the line.
double w1_line(std::span<const double> xs, std::span<const double> wx, std::span<const double> ys,
               std::span<const double> wy);

double w1(const EmpiricalDistribution& P, const EmpiricalDistribution& Q, const InstanceMetric& m, W1Mode mode,
          const W1Options& opts = {});

// ---- Rademacher complexity -------------------------------------------------------------

/// sup_f (1/n) Σ σ_i f(z_i) for a sign vector σ.
using SupOracle = std::function<double(std::span<const int> sigma)>;

/// Oracle over an explicit finite class given as rows of values f(z_1..z_n).
SupOracle finite_class(std::vector<std::vector<double>> values);

/// Exact expectation by enumerating all 2^n sign vectors (n ≤ 24).
double rademacher_exact(const SupOracle& sup, std::size_t n);

struct RademacherEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::size_t draws = 0;
};

RademacherEstimate rademacher_mc(const SupOracle& sup, std::size_t n, std::size_t m_draws, std::uint64_t seed);

// ---- bound assembly ---------------------------------------------------------------------

struct Round {
    EmpiricalDistribution D;  // D_t: the round's adversarial examples
    double risk = 0.0;        // R̂_t(h_t)
    /// R̂_{t+1}(h_t), when the caller evaluated h_t on the next round's set.
    std::optional<double> cross_risk_next;
};

struct RoundTrace {
    std::vector<Round> rounds;
    void validate() const;
};

struct LossSpec {
    double rho = 1.0;
    double M = 1.0;
    double L = 1.0;
    void validate() const;
};

struct BoundOptions {
    double delta_conf = 0.05;
    std::size_t n = 1;
    W1Mode mode = W1Mode::Exact;
    InstanceMetric metric;
    W1Options w1;
    /// Multiplier on sqrt(log(1/δ_conf)/n); 1 unless a loss bound is supplied.
    double stat_multiplier = 1.0;
    double drift_slack = 1e-9;
};

struct DriftCheck {
    std::size_t round = 0;  // t (1-based); compares rounds t and t+1
    double risk_gap = 0.0;  // |R̂_t(h_t) − R̂_{t+1}(h_t)|
    double w1 = 0.0;
    double bound = 0.0;     // L·w1
    bool holds = true;
};

struct BoundReport {
    std::size_t T = 0;
    double avg_empirical_risk = 0.0;
    std::vector<double> drifts;  // W1(D_t, D_{t+1})
    double drift_sum = 0.0;
    double L_used = 0.0;
    double drift_term = 0.0;
    double stat_multiplier = 1.0;
    double stat_term = 0.0;
    double total = 0.0;
    double final_risk = 0.0;
    bool eq12_flag = false;
    double telescoping_residual = 0.0;
    bool telescoping_ok = false;
    std::vector<DriftCheck> drift_checks;
    std::string w1_mode;
};

BoundReport bound_assemble(const RoundTrace& trace, const LossSpec& loss, const BoundOptions& opts);

// ---- Magic Phase -------------------------------------------------------------------------

struct MagicPhase {
    double peak_gain = 0.0;
    std::size_t peak_epoch = 0;
    bool detected = false;
};

/// `robust[e]` is robust accuracy after epoch e (index 0 is the untrained model). Gains
/// robust[e] − robust[e−1] are scanned for e in [switch_epoch, switch_epoch + window],
/// where switch_epoch is the first adversarial epoch.
MagicPhase magic_phase_detect(std::span<const double> robust, std::size_t switch_epoch, std::size_t window,
                              double threshold = 5.0);

}  // namespace aetlab::theory
