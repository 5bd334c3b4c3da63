#include "aetlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "aetlab/autodiff.hpp"
#include "aetlab/error.hpp"

namespace aetlab::theory {

// ---- risks ----------------------------------------------------------------------

std::vector<double> losses_from_logits(const Tensor& logits, std::span<const int> labels, LossKind loss) {
    if (loss == LossKind::CrossEntropy) return ad::cross_entropy_per_row(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = logits.data.data() + i * k;
        out[i] = (std::max_element(r, r + k) - r) == labels[i] ? 0.0 : 1.0;
    }
    return out;
}

double mean_loss(std::span<const double> losses) {
    if (losses.empty()) throw InvalidArgument("mean of an empty loss set");
    double s = 0.0;
    for (double v : losses) s += v;
    return s / static_cast<double>(losses.size());
}

double nat_risk(const models::CompositeModel& model, const data::Dataset& d, LossKind loss) {
    if (d.empty()) throw InvalidArgument("nat_risk needs a non-empty dataset");
    return mean_loss(losses_from_logits(models::logits(model, d.images), d.labels, loss));
}

AdvRisk adv_risk(const models::CompositeModel& model, const data::Dataset& d, LossKind loss, const AdvRiskSpec& spec) {
    if (d.empty()) throw InvalidArgument("adv_risk needs a non-empty dataset");
    if (spec.method == AdvMethod::Pgd) {
        const Tensor xa = attacks::pgd(model, d.images, d.labels, spec.pgd);
        return {mean_loss(losses_from_logits(models::logits(model, xa), d.labels, loss)), "pgd_lower_bound"};
    }
    const auto ex = d.example_shape();
    if (shape_numel(ex) > 6) throw InvalidArgument("brute-force adversarial risk needs inputs of dimension ≤ 6");
    Tensor worst(d.images.shape);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto r = d.images.row(i);
        const auto wc = attacks::brute_force_worst_case(model, Tensor(ex, std::vector<double>(r.begin(), r.end())),
                                                        d.labels[i], spec.pgd.threat, spec.grid_levels);
        std::copy(wc.x.data.begin(), wc.x.data.end(), worst.row(i).begin());
    }
    return {mean_loss(losses_from_logits(models::logits(model, worst), d.labels, loss)), "exact"};
}

// ---- instance metric and W1 ---------------------------------------------------------

double instance_metric(std::span<const double> x, int y, std::span<const double> x2, int y2, const InstanceMetric& m) {
    if (x.size() != x2.size()) throw ShapeError("instance_metric: inputs differ in size");
    return distance(x, x2, m.p) + m.c * std::abs(static_cast<double>(y - y2));
}

double EmpiricalDistribution::weight(std::size_t i) const {
    return weights.empty() ? 1.0 / static_cast<double>(size()) : weights[i];
}

void EmpiricalDistribution::validate() const {
    if (points.rank() != 2) throw ShapeError("empirical distribution points must be [n×d]");
    if (size() == 0) throw InvalidArgument("empirical distribution is empty");
    if (!labels.empty() && labels.size() != size()) throw ShapeError("labels must match the point count");
    if (!weights.empty()) {
        if (weights.size() != size()) throw ShapeError("weights must match the point count");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvalidArgument("weights must be non-negative");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("weights must sum to 1");
    }
}

EmpiricalDistribution EmpiricalDistribution::from_batch(const Tensor& batch, std::vector<int> labels, Space space) {
    EmpiricalDistribution e;
    const std::size_t n = batch.rank() ? batch.dim(0) : 0;
    e.points = Tensor({n, n ? batch.row_size() : 0}, batch.data);
    e.labels = std::move(labels);
    e.space = space;
    return e;
}

std::vector<double> cost_matrix(const EmpiricalDistribution& P, const EmpiricalDistribution& Q, const InstanceMetric& m) {
    P.validate();
    Q.validate();
    if (P.dim() != Q.dim()) throw ShapeError("W1 point sets differ in dimension");
    const bool labelled = !P.labels.empty() && !Q.labels.empty();
    const auto n = static_cast<std::ptrdiff_t>(P.size());
    const std::size_t q = Q.size();
    std::vector<double> c(P.size() * q);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < q; ++j) {
            const int yi = labelled ? P.labels[ui] : 0;
            const int yj = labelled ? Q.labels[j] : 0;
            c[ui * q + j] = instance_metric(P.points.row(ui), yi, Q.points.row(j), yj, m);
        }
    }
    return c;
}

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n) {
    if (cost.size() != n * n) throw ShapeError("assignment cost matrix must be square");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col(n);
    for (std::size_t j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
    return col;
}

namespace {

// min c·x s.t. A x = b, x ≥ 0 (b ≥ 0), two-phase tableau simplex with Bland's rule.
double simplex_min(const std::vector<std::vector<double>>& A, const std::vector<double>& b, const std::vector<double>& c) {
    const std::size_t m = A.size(), N = c.size(), W = N + m + 1;
    constexpr double eps = 1e-12;
    std::vector<std::vector<double>> T(m + 1, std::vector<double>(W, 0.0));
    std::vector<std::size_t> basis(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < N; ++j) T[i][j] = A[i][j];
        T[i][N + i] = 1.0;
        T[i][W - 1] = b[i];
        basis[i] = N + i;
    }
    auto pivot = [&](std::size_t r, std::size_t col) {
        const double pv = T[r][col];
        for (double& x : T[r]) x /= pv;
        for (std::size_t i = 0; i <= m; ++i) {
            if (i == r || T[i][col] == 0.0) continue;
            const double f = T[i][col];
            for (std::size_t j = 0; j < W; ++j) T[i][j] -= f * T[r][j];
        }
        basis[r] = col;
    };
    auto run = [&](std::size_t allowed) {
        for (;;) {
            std::size_t enter = W;
            for (std::size_t j = 0; j < allowed; ++j)
                if (T[m][j] < -eps) {
                    enter = j;
                    break;
                }
            if (enter == W) return;
            std::size_t leave = m;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                if (T[i][enter] <= eps) continue;
                const double ratio = T[i][W - 1] / T[i][enter];
                if (ratio < best - eps || (ratio <= best + eps && leave < m && basis[i] < basis[leave])) {
                    best = ratio;
                    leave = i;
                }
            }
            if (leave == m) throw NumericError("transport LP is unbounded");
            pivot(leave, enter);
        }
    };

    // phase 1: minimize the artificial sum
    for (std::size_t j = 0; j < W; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += T[i][j];
        T[m][j] = (j >= N && j < N + m) ? 0.0 : -s;
    }
    run(N + m);
    if (-T[m][W - 1] > 1e-9) throw NumericError("transport LP is infeasible (masses differ)");
    for (std::size_t i = 0; i < m; ++i) {
        if (basis[i] < N) continue;
        for (std::size_t j = 0; j < N; ++j)
            if (std::abs(T[i][j]) > eps) {
                pivot(i, j);
                break;
            }
    }

    // phase 2
    for (std::size_t j = 0; j < W; ++j) T[m][j] = j < N ? c[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double cb = basis[i] < N ? c[basis[i]] : 0.0;
        if (cb == 0.0) continue;
        for (std::size_t j = 0; j < W; ++j) T[m][j] -= cb * T[i][j];
    }
    run(N);
    double obj = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] < N) obj += c[basis[i]] * T[i][W - 1];
    return obj;
}

double sorted_sum(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

double transport_lp(std::span<const double> cost, std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size(), q = b.size();
    if (cost.size() != n * q) throw ShapeError("transport cost must be |a|×|b|");
    if (n == 0 || q == 0) throw InvalidArgument("transport marginals must be non-empty");
    const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    if (std::abs(sa - sb) > 1e-9) throw InvalidArgument("transport marginals carry different mass");
    // The last column constraint is implied by the others and is dropped.
    const std::size_t rows = n + q - 1;
    std::vector<std::vector<double>> A(rows, std::vector<double>(n * q, 0.0));
    std::vector<double> rhs(rows);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < q; ++j) A[i][i * q + j] = 1.0;
        rhs[i] = a[i];
    }
    for (std::size_t j = 0; j + 1 < q; ++j) {
        for (std::size_t i = 0; i < n; ++i) A[n + j][i * q + j] = 1.0;
        rhs[n + j] = b[j];
    }
    return simplex_min(A, rhs, std::vector<double>(cost.begin(), cost.end()));
}

double w1_line(std::span<const double> xs, std::span<const double> wx, std::span<const double> ys,
               std::span<const double> wy) {
    struct Ev {
        double pos;
        double dp, dq;
    };
    std::vector<Ev> ev;
    ev.reserve(xs.size() + ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) ev.push_back({xs[i], wx[i], 0.0});
    for (std::size_t i = 0; i < ys.size(); ++i) ev.push_back({ys[i], 0.0, wy[i]});
    std::sort(ev.begin(), ev.end(), [](const Ev& l, const Ev& r) { return l.pos < r.pos; });
    double F = 0.0, G = 0.0, total = 0.0;
    for (std::size_t k = 0; k + 1 < ev.size(); ++k) {
        F += ev[k].dp;
        G += ev[k].dq;
        total += std::abs(F - G) * (ev[k + 1].pos - ev[k].pos);
    }
    return total;
}

double w1(const EmpiricalDistribution& P, const EmpiricalDistribution& Q, const InstanceMetric& m, W1Mode mode,
          const W1Options& opts) {
    P.validate();
    Q.validate();
    if (P.dim() != Q.dim()) throw ShapeError("W1 point sets differ in dimension");

    if (mode == W1Mode::Exact) {
        const auto cost = cost_matrix(P, Q, m);
        if (P.uniform() && Q.uniform() && P.size() == Q.size()) {
            const std::size_t n = P.size();
            if (n > opts.max_assignment)
                throw InvalidArgument("exact W1 by assignment is limited to " + std::to_string(opts.max_assignment) +
                                      " points; use sliced mode");
            const auto col = solve_assignment(cost, n);
            std::vector<double> picked(n);
            for (std::size_t i = 0; i < n; ++i) picked[i] = cost[i * n + col[i]];
            return sorted_sum(std::move(picked)) / static_cast<double>(n);
        }
        if (P.size() * Q.size() > opts.max_lp_cells)
            throw InvalidArgument("exact W1 for weighted or unequal sets is limited to tiny sizes; use sliced mode");
        std::vector<double> a(P.size()), b(Q.size());
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = P.weight(i);
        for (std::size_t j = 0; j < b.size(); ++j) b[j] = Q.weight(j);
        return transport_lp(cost, a, b);
    }

    const bool labelled = !P.labels.empty() && !Q.labels.empty() && m.c != 0.0;
    const std::size_t d = P.dim() + (labelled ? 1 : 0);
    std::vector<std::vector<double>> dirs = opts.directions;
    if (dirs.empty()) {
        if (opts.projections == 0) throw InvalidArgument("sliced W1 needs at least one projection");
        std::mt19937_64 rng(opts.seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t k = 0; k < opts.projections; ++k) {
            std::vector<double> v(d);
            double nrm = 0.0;
            do {
                nrm = 0.0;
                for (auto& x : v) {
                    x = gauss(rng);
                    nrm += x * x;
                }
            } while (nrm == 0.0);
            nrm = std::sqrt(nrm);
            for (auto& x : v) x /= nrm;
            dirs.push_back(std::move(v));
        }
    }
    auto project = [&](const EmpiricalDistribution& E, const std::vector<double>& dir) {
        std::vector<double> out(E.size());
        for (std::size_t i = 0; i < E.size(); ++i) {
            const auto r = E.points.row(i);
            double s = 0.0;
            for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * dir[j];
            if (labelled) s += dir.back() * m.c * static_cast<double>(E.labels[i]);
            out[i] = s;
        }
        return out;
    };
    for (const auto& dir : dirs)
        if (dir.size() != d) throw ShapeError("sliced W1 direction has the wrong dimension");
    std::vector<double> wp(P.size()), wq(Q.size());
    for (std::size_t i = 0; i < wp.size(); ++i) wp[i] = P.weight(i);
    for (std::size_t j = 0; j < wq.size(); ++j) wq[j] = Q.weight(j);
    std::vector<double> per(dirs.size());
    const auto nd = static_cast<std::ptrdiff_t>(dirs.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < nd; ++k) {
        const auto& dir = dirs[static_cast<std::size_t>(k)];
        per[static_cast<std::size_t>(k)] = w1_line(project(P, dir), wp, project(Q, dir), wq);
    }
    double s = 0.0;
    for (double v : per) s += v;
    return s / static_cast<double>(per.size());
}

// ---- Rademacher complexity -------------------------------------------------------------

SupOracle finite_class(std::vector<std::vector<double>> values) {
    if (values.empty()) throw InvalidArgument("function class is empty");
    const std::size_t n = values.front().size();
    for (const auto& f : values)
        if (f.size() != n) throw ShapeError("every function needs one value per sample");
    return [vals = std::move(values)](std::span<const int> sigma) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& f : vals) {
            if (f.size() != sigma.size()) throw ShapeError("sign vector length differs from the sample count");
            double s = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) s += sigma[i] * f[i];
            best = std::max(best, s / static_cast<double>(f.size()));
        }
        return best;
    };
}

double rademacher_exact(const SupOracle& sup, std::size_t n) {
    if (n == 0 || n > 24) throw InvalidArgument("exhaustive Rademacher enumeration needs 1 ≤ n ≤ 24");
    const std::uint64_t count = std::uint64_t{1} << n;
    std::vector<int> sigma(n);
    double total = 0.0;
    for (std::uint64_t mask = 0; mask < count; ++mask) {
        for (std::size_t i = 0; i < n; ++i) sigma[i] = (mask >> i) & 1U ? 1 : -1;
        total += sup(sigma);
    }
    return total / static_cast<double>(count);
}

RademacherEstimate rademacher_mc(const SupOracle& sup, std::size_t n, std::size_t m_draws, std::uint64_t seed) {
    if (m_draws == 0) throw InvalidArgument("rademacher_mc needs at least one draw");
    if (n == 0) throw InvalidArgument("rademacher_mc needs samples");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<int> sigma(n);
    double mean = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < m_draws; ++k) {
        for (auto& s : sigma) s = coin(rng) ? 1 : -1;
        const double v = sup(sigma);
        const double d = v - mean;
        mean += d / static_cast<double>(k + 1);
        m2 += d * (v - mean);
    }
    RademacherEstimate r;
    r.estimate = mean;
    r.draws = m_draws;
    r.stderr_ = m_draws > 1 ? std::sqrt(m2 / static_cast<double>(m_draws - 1) / static_cast<double>(m_draws)) : 0.0;
    return r;
}

// ---- bound assembly ---------------------------------------------------------------------

void RoundTrace::validate() const {
    if (rounds.empty()) throw InvalidArgument("round trace needs at least one round");
    for (const auto& r : rounds) {
        r.D.validate();
        if (!std::isfinite(r.risk)) throw NumericError("round risk is not finite");
    }
}

void LossSpec::validate() const {
    if (!(rho > 0.0) || !(M > 0.0) || !(L > 0.0)) throw InvalidArgument("loss constants rho, M and L must be > 0");
}

BoundReport bound_assemble(const RoundTrace& trace, const LossSpec& loss, const BoundOptions& opts) {
    trace.validate();
    loss.validate();
    if (!(opts.delta_conf > 0.0 && opts.delta_conf < 1.0)) throw InvalidArgument("delta_conf must lie in (0,1)");
    if (opts.n == 0) throw InvalidArgument("sample count n must be positive");
    if (opts.mode == W1Mode::Exact)
        for (const auto& r : trace.rounds)
            if (r.D.size() != trace.rounds.front().D.size() || !r.D.uniform())
                throw InvalidArgument("exact W1 needs equal-size uniform round sets");

    BoundReport rep;
    const auto& R = trace.rounds;
    rep.T = R.size();
    rep.w1_mode = opts.mode == W1Mode::Exact ? "exact" : "sliced";
    const double T = static_cast<double>(rep.T);

    double risk_sum = 0.0;
    for (const auto& r : R) risk_sum += r.risk;
    rep.avg_empirical_risk = risk_sum / T;

    for (std::size_t t = 0; t + 1 < R.size(); ++t) {
        const double d = w1(R[t].D, R[t + 1].D, opts.metric, opts.mode, opts.w1);
        rep.drifts.push_back(d);
        rep.drift_sum += d;
        if (R[t].cross_risk_next) {
            DriftCheck c;
            c.round = t + 1;
            c.risk_gap = std::abs(R[t].risk - *R[t].cross_risk_next);
            c.w1 = d;
            c.bound = loss.L * d;
            c.holds = c.risk_gap <= c.bound + opts.drift_slack;
            rep.drift_checks.push_back(c);
        }
    }
    rep.L_used = loss.L;
    rep.drift_term = (loss.L / T) * rep.drift_sum;
    rep.stat_multiplier = opts.stat_multiplier;
    rep.stat_term = opts.stat_multiplier * std::sqrt(std::log(1.0 / opts.delta_conf) / static_cast<double>(opts.n));
    rep.total = rep.avg_empirical_risk + rep.drift_term + rep.stat_term;

    rep.final_risk = R.back().risk;
    rep.eq12_flag = rep.final_risk <= rep.avg_empirical_risk;
    double tele = R.front().risk;
    for (std::size_t t = 1; t < R.size(); ++t) tele += R[t].risk - R[t - 1].risk;
    rep.telescoping_residual = std::abs(tele - rep.final_risk);
    rep.telescoping_ok = rep.telescoping_residual <= 1e-12;
    return rep;
}

// ---- Magic Phase -------------------------------------------------------------------------

MagicPhase magic_phase_detect(std::span<const double> robust, std::size_t switch_epoch, std::size_t window,
                              double threshold) {
    if (switch_epoch == 0) throw InvalidArgument("switch_epoch is 1-based (first adversarial epoch)");
    if (switch_epoch + window >= robust.size())
        throw InvalidArgument("magic-phase window runs past the recorded series");
    MagicPhase mp;
    mp.peak_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t e = switch_epoch; e <= switch_epoch + window; ++e) {
        const double g = robust[e] - robust[e - 1];
        if (g > mp.peak_gain) {
            mp.peak_gain = g;
            mp.peak_epoch = e;
        }
    }
    mp.detected = mp.peak_gain > threshold;
    return mp;
}

}  // namespace aetlab::theory
