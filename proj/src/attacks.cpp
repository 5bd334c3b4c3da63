#include "aetlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aetlab/autodiff.hpp"
#include "aetlab/error.hpp"

namespace aetlab::attacks {

namespace {

constexpr double kCwNudge = 1e-6;
// Rows whose ℓ2 offset exceeds delta by less than this relative slack are left alone,
// so that projection is idempotent under rounding.
constexpr double kL2Slack = 1e-12;

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_batch(const Tensor& x, std::span<const int> y) {
    if (x.rank() == 0 || x.dim(0) != y.size())
        throw ShapeError("attack batch has " + (x.rank() ? std::to_string(x.dim(0)) : std::string("no")) +
                         " rows but " + std::to_string(y.size()) + " labels");
}

void random_start(Tensor& x, const ThreatModel& t, std::mt19937_64& rng) {
    if (t.p == Norm::Linf) {
        std::uniform_real_distribution<double> u(-t.delta, t.delta);
        for (double& v : x.data) v += u(rng);
        return;
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = x.dim(0), d = x.row_size();
    for (std::size_t i = 0; i < n; ++i) {
        auto r = x.row(i);
        std::vector<double> dir(d);
        double norm = 0.0;
        for (auto& v : dir) {
            v = gauss(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        const double radius = t.delta * std::pow(u(rng), 1.0 / static_cast<double>(d));
        if (norm > 0.0)
            for (std::size_t j = 0; j < d; ++j) r[j] += radius * dir[j] / norm;
    }
}

}  // namespace

void ThreatModel::validate() const {
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw InvalidArgument("threat radius must be finite and ≥ 0");
    if (!(lo < hi)) throw InvalidArgument("clip range must satisfy lo < hi");
}

void PgdConfig::validate() const {
    threat.validate();
    if (!(alpha > 0.0)) throw InvalidArgument("pgd step size must be > 0");
    if (steps < 1) throw InvalidArgument("pgd needs at least one step");
}

void CwConfig::validate() const {
    if (!(c > 0.0)) throw InvalidArgument("cw trade-off constant must be > 0");
    if (!(kappa >= 0.0)) throw InvalidArgument("cw margin must be ≥ 0");
    if (steps < 1) throw InvalidArgument("cw needs at least one step");
    if (!(lr > 0.0)) throw InvalidArgument("cw learning rate must be > 0");
}

AttackSpec preset(const std::string& name) {
    auto linf = [&](AttackKind kind, double eps, double alpha, int steps) {
        AttackSpec s;
        s.name = name;
        s.kind = kind;
        s.pgd.threat = {Norm::Linf, eps};
        s.pgd.alpha = alpha;
        s.pgd.steps = steps;
        s.pgd.random_start = kind == AttackKind::Pgd;
        return s;
    };
    auto cw = [&](double c) {
        AttackSpec s;
        s.name = name;
        s.kind = AttackKind::Cw;
        s.cw = {c, 0.0, 100, 0.01};
        return s;
    };
    constexpr double px = 1.0 / 255.0;
    if (name == "none") return AttackSpec{name, AttackKind::None, {}, {}};
    if (name == "cifar-fgsm") return linf(AttackKind::Fgsm, 8 * px, 8 * px, 1);
    if (name == "cifar-pgd20") return linf(AttackKind::Pgd, 8 * px, 2 * px, 20);
    if (name == "cifar-pgd100") return linf(AttackKind::Pgd, 10 * px, 2 * px, 100);
    if (name == "cifar-cw") return cw(1.0);
    if (name == "mnist-fgsm") return linf(AttackKind::Fgsm, 16 * px, 16 * px, 1);
    if (name == "mnist-pgd20") return linf(AttackKind::Pgd, 32 * px, 2 * px, 20);
    if (name == "mnist-pgd100") return linf(AttackKind::Pgd, 64 * px, 2 * px, 100);
    if (name == "mnist-cw") return cw(2.0);
    if (name == "train-pgd") return linf(AttackKind::Pgd, 8 * px, 2 * px, 20);
    if (name == "train-pgd10") return linf(AttackKind::Pgd, 8 * px, 2 * px, 10);
    throw InvalidArgument("unknown attack preset '" + name + "'");
}

std::vector<std::string> preset_names() {
    return {"none",       "cifar-fgsm",  "cifar-pgd20",  "cifar-pgd100", "cifar-cw", "mnist-fgsm",
            "mnist-pgd20", "mnist-pgd100", "mnist-cw", "train-pgd",    "train-pgd10"};
}

Tensor project_ball(const Tensor& candidate, const Tensor& center, const ThreatModel& t) {
    if (candidate.shape != center.shape)
        throw ShapeError("project_ball: candidate " + shape_str(candidate.shape) + " vs center " +
                         shape_str(center.shape));
    Tensor out = candidate;
    if (t.p == Norm::Linf) {
        for (std::size_t i = 0; i < out.numel(); ++i) {
            const double c = center.data[i];
            double v = std::clamp(out.data[i], c - t.delta, c + t.delta);
            out.data[i] = std::clamp(v, t.lo, t.hi);
        }
        return out;
    }
    const std::size_t n = out.rank() ? out.dim(0) : 1;
    const std::size_t d = out.rank() ? out.row_size() : 1;
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.data.data() + i * d;
        const double* c = center.data.data() + i * d;
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += (o[j] - c[j]) * (o[j] - c[j]);
        norm = std::sqrt(norm);
        if (norm > t.delta * (1.0 + kL2Slack) + std::numeric_limits<double>::min()) {
            const double s = t.delta / norm;
            for (std::size_t j = 0; j < d; ++j) o[j] = c[j] + (o[j] - c[j]) * s;
        }
        for (std::size_t j = 0; j < d; ++j) o[j] = std::clamp(o[j], t.lo, t.hi);
    }
    return out;
}

Tensor pgd_ascent(const Tensor& x, const AscentGrad& grad, const PgdConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    if (cfg.threat.delta == 0.0) return x;
    Tensor cur = x;
    if (cfg.random_start) {
        random_start(cur, cfg.threat, rng);
        cur = project_ball(cur, x, cfg.threat);
    }
    const std::size_t n = x.dim(0), d = x.row_size();
    for (int s = 0; s < cfg.steps; ++s) {
        const Tensor g = grad(cur);
        if (cfg.threat.p == Norm::Linf) {
            for (std::size_t k = 0; k < cur.numel(); ++k) cur.data[k] += cfg.alpha * sign0(g.data[k]);
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double gn = norm_of(g.row(i), Norm::L2);
                if (gn == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) cur.data[i * d + j] += cfg.alpha * g.data[i * d + j] / gn;
            }
        }
        cur = project_ball(cur, x, cfg.threat);
    }
    return cur;
}

Tensor fgsm(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const ThreatModel& threat) {
    threat.validate();
    if (threat.p != Norm::Linf) throw InvalidArgument("fgsm is defined for the ℓ∞ threat model only");
    check_batch(x, y);
    if (threat.delta == 0.0) return x;
    const Tensor g = models::input_gradient(model, x, y);
    Tensor out = x;
    for (std::size_t k = 0; k < out.numel(); ++k)
        out.data[k] = std::clamp(x.data[k] + threat.delta * sign0(g.data[k]), threat.lo, threat.hi);
    return out;
}

Tensor pgd(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const PgdConfig& cfg) {
    check_batch(x, y);
    std::mt19937_64 rng(cfg.seed);
    return pgd_ascent(x, [&](const Tensor& xa) { return models::input_gradient(model, xa, y); }, cfg, rng);
}

CwResult cw_l2(const models::CompositeModel& model, const Tensor& x, std::span<const int> y, const CwConfig& cfg) {
    cfg.validate();
    check_batch(x, y);
    const std::size_t n = x.dim(0), d = x.row_size();

    Tensor w = x;
    for (double& v : w.data) v = std::atanh(2.0 * std::clamp(v, kCwNudge, 1.0 - kCwNudge) - 1.0);
    std::vector<double> m(w.numel(), 0.0), v2(w.numel(), 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    CwResult res{x, std::vector<bool>(n, false)};
    std::vector<double> best_dist(n, std::numeric_limits<double>::infinity());

    Tensor xp(x.shape);
    for (int s = 0; s <= cfg.steps; ++s) {
        for (std::size_t k = 0; k < w.numel(); ++k) xp.data[k] = 0.5 * (std::tanh(w.data[k]) + 1.0);

        ad::Tape tape;
        const auto xin = tape.input(xp, true);
        const auto rec = model.record(tape, xin, false);
        const Tensor& z = tape.value(rec.logits);
        const std::size_t K = z.dim(1);

        Tensor seed(z.shape, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zi = z.data.data() + i * K;
            const auto yi = static_cast<std::size_t>(y[i]);
            std::size_t other = yi == 0 ? 1 : 0;
            for (std::size_t k = 0; k < K; ++k)
                if (k != yi && zi[k] > zi[other]) other = k;
            const double margin = zi[yi] - zi[other];
            const auto pred = static_cast<std::size_t>(std::max_element(zi, zi + K) - zi);
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double dj = xp.data[i * d + j] - x.data[i * d + j];
                dist += dj * dj;
            }
            if (pred != yi && dist < best_dist[i]) {
                best_dist[i] = dist;
                res.found[i] = true;
                std::copy_n(xp.data.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                            res.x_adv.data.begin() + static_cast<std::ptrdiff_t>(i * d));
            }
            if (margin > -cfg.kappa) {
                seed.data[i * K + yi] = cfg.c;
                seed.data[i * K + other] = -cfg.c;
            }
        }
        if (s == cfg.steps) break;

        const Tensor gx = tape.backward(rec.logits, seed)[xin];
        const double t = static_cast<double>(s + 1);
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t k = 0; k < w.numel(); ++k) {
            const double th = std::tanh(w.data[k]);
            const double gxp = gx.data[k] + 2.0 * (xp.data[k] - x.data[k]);
            const double g = gxp * 0.5 * (1.0 - th * th);
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v2[k] = b2 * v2[k] + (1.0 - b2) * g * g;
            w.data[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v2[k] / c2) + eps);
        }
    }
    return res;
}

WorstCase brute_force_worst_case(const models::CompositeModel& model, const Tensor& x, int y,
                                 const ThreatModel& threat, int grid_levels) {
    threat.validate();
    if (grid_levels < 1) throw InvalidArgument("grid_levels must be ≥ 1");
    const std::size_t dim = x.numel();
    if (dim == 0 || dim > 6) throw InvalidArgument("brute force supports inputs of dimension 1..6");
    const double combos = std::pow(static_cast<double>(grid_levels), static_cast<double>(dim));
    if (combos > 1e6) throw InvalidArgument("brute force grid exceeds 10^6 points");

    std::vector<std::vector<double>> axis(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        for (int l = 0; l < grid_levels; ++l) {
            const double off =
                grid_levels == 1 ? 0.0 : -threat.delta + 2.0 * threat.delta * l / static_cast<double>(grid_levels - 1);
            const double v = x.data[j] + off;
            if (v >= threat.lo && v <= threat.hi) axis[j].push_back(v);
        }
        if (axis[j].empty()) axis[j].push_back(x.data[j]);
    }

    std::vector<std::vector<double>> points;
    std::vector<std::size_t> idx(dim, 0);
    for (;;) {
        std::vector<double> p(dim);
        double l2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            p[j] = axis[j][idx[j]];
            l2 += (p[j] - x.data[j]) * (p[j] - x.data[j]);
        }
        if (threat.p == Norm::Linf || std::sqrt(l2) <= threat.delta * (1.0 + kL2Slack)) points.push_back(std::move(p));
        std::size_t j = 0;
        while (j < dim && ++idx[j] == axis[j].size()) idx[j++] = 0;
        if (j == dim) break;
    }

    WorstCase best{x, -std::numeric_limits<double>::infinity()};
    const std::size_t chunk = 4096;
    for (std::size_t b = 0; b < points.size(); b += chunk) {
        const std::size_t e = std::min(points.size(), b + chunk);
        Shape s{e - b};
        s.insert(s.end(), x.shape.begin(), x.shape.end());
        Tensor batch(s);
        for (std::size_t i = b; i < e; ++i) std::copy(points[i].begin(), points[i].end(), batch.data.begin() + (i - b) * dim);
        const std::vector<int> labels(e - b, y);
        const auto losses = ad::cross_entropy_per_row(models::logits(model, batch), labels);
        for (std::size_t i = 0; i < losses.size(); ++i)
            if (losses[i] > best.loss) {
                best.loss = losses[i];
                best.x = Tensor(x.shape, points[b + i]);
            }
    }
    return best;
}

Tensor run_attack(const AttackSpec& spec, const models::CompositeModel& model, const Tensor& x,
                  std::span<const int> y) {
    switch (spec.kind) {
        case AttackKind::None: return x;
        case AttackKind::Fgsm: return fgsm(model, x, y, spec.pgd.threat);
        case AttackKind::Pgd: return pgd(model, x, y, spec.pgd);
        case AttackKind::Cw: return cw_l2(model, x, y, spec.cw).x_adv;
    }
    return x;
}

}  // namespace aetlab::attacks
