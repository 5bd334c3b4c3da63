#include "aetlab/regimes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aetlab/autodiff.hpp"
#include "aetlab/error.hpp"

namespace aetlab::regimes {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct Batch {
    Tensor x;
    std::vector<int> y;
};

// Shuffles with the training RNG and cuts batches; augmentation draws follow the shuffle.
std::vector<std::vector<std::size_t>> epoch_batches(TrainState& s, const data::Dataset& d, std::size_t batch) {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), s.rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += batch)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch)));
    return out;
}

Batch make_batch(TrainState& s, const data::Dataset& d, const std::vector<std::size_t>& idx,
                 const std::optional<data::AugmentConfig>& aug) {
    Batch b{gather_rows(d.images, idx), {}};
    for (auto i : idx) b.y.push_back(d.labels[i]);
    if (aug) {
        const auto ex = d.example_shape();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto r = b.x.row(i);
            const Tensor a = data::augment(Tensor(ex, std::vector<double>(r.begin(), r.end())), *aug, s.rng);
            if (a.numel() != r.size()) throw ShapeError("augmentation changed the example size");
            std::copy(a.data.begin(), a.data.end(), r.begin());
        }
    }
    return b;
}

void check_loss(double loss, const TrainState& s, std::size_t batch_index) {
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << s.epoch + 1 << ", batch " << batch_index;
        throw NumericError(os.str());
    }
}

enum class Objective { Erm, At, Trades };

double run_epoch(TrainState& s, const data::Dataset& d, const RegimeSpec& spec, Objective obj,
                 const attacks::PgdConfig& pgd, double beta, double lr) {
    if (d.empty()) throw InvalidArgument("training set is empty");
    const bool attack = obj != Objective::Erm && pgd.threat.delta > 0.0 && (obj != Objective::Trades || beta > 0.0);
    if (attack) pgd.validate();
    const auto batches = epoch_batches(s, d, spec.batch_size);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        Batch b = make_batch(s, d, batches[bi], spec.augment);
        const auto n = static_cast<double>(b.y.size());
        models::LossGrads lg;
        if (!attack) {
            lg = models::cross_entropy_grads(s.model, b.x, b.y);
        } else if (obj == Objective::At) {
            attacks::PgdConfig cfg = pgd;
            cfg.seed = s.rng();
            const Tensor xa = attacks::pgd(s.model, b.x, b.y, cfg);
            lg = models::cross_entropy_grads(s.model, xa, b.y);
        } else {
            attacks::PgdConfig cfg = pgd;
            std::mt19937_64 arng(s.rng());
            const Tensor nat = models::logits(s.model, b.x);
            const auto kl_grad = [&](const Tensor& xa) {
                ad::Tape tape;
                const auto xin = tape.input(xa, true);
                const auto rec = s.model.record(tape, xin, false);
                const auto p = tape.constant(nat);
                const auto kl = ad::kl_divergence(tape, p, rec.logits, ad::Reduction::Sum);
                return tape.backward(kl)[xin];
            };
            const Tensor xa = attacks::pgd_ascent(b.x, kl_grad, cfg, arng);
            ad::Tape tape;
            const auto rn = s.model.record(tape, tape.input(b.x), true);
            const auto ra = s.model.record(tape, tape.input(xa), true);
            const auto ce = ad::softmax_cross_entropy(tape, rn.logits, b.y);
            const auto kl = ad::kl_divergence(tape, rn.logits, ra.logits);
            const auto loss = ad::add(tape, ce, ad::scale(tape, kl, beta));
            const auto g = tape.backward(loss);
            lg.loss = tape.value(loss).item();
            for (std::size_t i = 0; i < rn.params.size(); ++i) {
                Tensor gi = g[rn.params[i]];
                const Tensor& ga = g[ra.params[i]];
                for (std::size_t k = 0; k < gi.numel(); ++k) gi.data[k] += ga.data[k];
                lg.grads.push_back(std::move(gi));
            }
        }
        check_loss(lg.loss, s, bi);
        optim::adam_step(s.opt, s.model.params, lg.grads, lr);
        loss_sum += lg.loss * n;
    }
    return loss_sum / static_cast<double>(d.size());
}

EpochReport finish_epoch(TrainState& s, const RegimeSpec& spec, const data::Dataset& eval, std::string phase,
                         double lr, double loss, double train_seconds) {
    ++s.epoch;
    EpochReport r;
    r.epoch = s.epoch;
    r.phase = std::move(phase);
    r.lr = lr;
    r.train_loss = loss;
    r.wall_seconds = train_seconds;
    const auto t = Clock::now();
    if (!eval.empty()) {
        const auto ev = evaluate(s.model, eval, spec.eval_attack, spec.eval_seed, static_cast<std::uint64_t>(s.epoch));
        r.clean_acc = ev.clean_acc;
        r.robust_acc = ev.robust_acc;
    }
    r.eval_seconds = seconds_since(t);
    return r;
}

void initial_eval(TrainState& s, const RegimeSpec& spec, const data::Dataset& eval) {
    if (!spec.eval_initial || s.initial || s.epoch != 0 || eval.empty()) return;
    EpochReport r;
    r.phase = "init";
    const auto ev = evaluate(s.model, eval, spec.eval_attack, spec.eval_seed, 0);
    r.clean_acc = ev.clean_acc;
    r.robust_acc = ev.robust_acc;
    s.initial = r;
}

}  // namespace

const char* to_string(RegimeKind k) {
    switch (k) {
        case RegimeKind::Erm: return "erm";
        case RegimeKind::At: return "at";
        case RegimeKind::Trades: return "trades";
        case RegimeKind::Aet: return "aet";
        case RegimeKind::Cat: return "cat";
    }
    return "?";
}

RegimeKind regime_from_string(const std::string& s) {
    for (auto k : {RegimeKind::Erm, RegimeKind::At, RegimeKind::Trades, RegimeKind::Aet, RegimeKind::Cat})
        if (s == to_string(k)) return k;
    throw InvalidArgument("unknown regime '" + s + "'");
}

CatSpec CatSpec::even(double eps_max, int levels, int patience) {
    if (levels < 1) throw InvalidArgument("CAT ladder needs at least one level");
    CatSpec c;
    c.patience = patience;
    if (levels == 1) {
        c.ladder = {eps_max};
        return c;
    }
    for (int k = 0; k < levels; ++k) c.ladder.push_back(eps_max * k / static_cast<double>(levels - 1));
    return c;
}

void RegimeSpec::validate() const {
    if (t0 < 0 || t1 < 0) throw InvalidArgument("epoch counts must be ≥ 0");
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (kind == RegimeKind::Trades || (kind == RegimeKind::Aet && aet_inner == RegimeKind::Trades))
        if (!(trades_beta >= 0.0)) throw InvalidArgument("trades beta must be ≥ 0");
    if (kind == RegimeKind::Aet && aet_inner != RegimeKind::At && aet_inner != RegimeKind::Trades)
        throw InvalidArgument("aet adversarial phase must be at or trades");
    if (kind == RegimeKind::Cat) {
        if (cat.ladder.empty()) throw InvalidArgument("CAT ladder is empty");
        for (std::size_t k = 0; k < cat.ladder.size(); ++k) {
            if (!(cat.ladder[k] >= 0.0)) throw InvalidArgument("CAT strengths must be ≥ 0");
            if (k > 0 && !(cat.ladder[k] > cat.ladder[k - 1]))
                throw InvalidArgument("CAT ladder must be strictly increasing");
        }
        if (cat.patience < 1) throw InvalidArgument("CAT patience must be ≥ 1");
    }
    train_pgd.threat.validate();
    if (kind != RegimeKind::Erm) train_pgd.validate();
    if (!(schedule.t_max >= 0.0)) throw InvalidArgument("schedule t_max must be ≥ 0");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
    std::mt19937_64 g(seq);
    return g();
}

TrainState TrainState::create(const models::ArchSpec& arch, const optim::AdamHyper& hyper, std::uint64_t seed) {
    TrainState s;
    s.model = models::build_model(arch);
    s.opt = optim::AdamState(hyper, s.model.params);
    s.rng.seed(seed);
    return s;
}

EvalResult evaluate(const models::CompositeModel& model, const data::Dataset& d, const attacks::AttackSpec& attack,
                    std::uint64_t seed, std::uint64_t tag) {
    if (d.empty()) throw InvalidArgument("evaluation set is empty");
    EvalResult r;
    r.clean_acc = accuracy(models::predict(model, d.images), d.labels);
    if (attack.kind == attacks::AttackKind::None) {
        r.robust_acc = r.clean_acc;
        return r;
    }
    attacks::AttackSpec a = attack;
    a.pgd.seed = derive_seed(seed, tag);
    r.robust_acc = accuracy(models::predict(model, attacks::run_attack(a, model, d.images, d.labels)), d.labels);
    return r;
}

double train_epoch_erm(TrainState& s, const data::Dataset& d, const RegimeSpec& spec, double lr) {
    return run_epoch(s, d, spec, Objective::Erm, spec.train_pgd, 0.0, lr);
}

double train_epoch_at(TrainState& s, const data::Dataset& d, const RegimeSpec& spec, const attacks::PgdConfig& pgd,
                      double lr) {
    return run_epoch(s, d, spec, Objective::At, pgd, 0.0, lr);
}

double train_epoch_trades(TrainState& s, const data::Dataset& d, const RegimeSpec& spec,
                          const attacks::PgdConfig& pgd, double beta, double lr) {
    if (!(beta >= 0.0)) throw InvalidArgument("trades beta must be ≥ 0");
    return run_epoch(s, d, spec, Objective::Trades, pgd, beta, lr);
}

std::string phase_label(const RegimeSpec& spec, int e) {
    switch (spec.kind) {
        case RegimeKind::Erm: return "erm";
        case RegimeKind::At: return "adversarial";
        case RegimeKind::Trades: return "adversarial";
        case RegimeKind::Aet: return e <= spec.t0 ? "ignition" : "adversarial";
        case RegimeKind::Cat: return "cat";
    }
    return "?";
}

void run_schedule(TrainState& s, const RegimeSpec& spec, const data::Dataset& train, const data::Dataset& eval,
                  const EpochHook& hook) {
    spec.validate();
    if (spec.kind == RegimeKind::Cat) throw InvalidArgument("run_schedule does not drive CAT; use run_cat");
    initial_eval(s, spec, eval);
    while (s.epoch < spec.budget()) {
        const int e = s.epoch + 1;
        const double lr = optim::cosine_lr(spec.schedule, static_cast<double>(s.epoch));
        const auto t = Clock::now();
        double loss = 0.0;
        RegimeKind objective = spec.kind;
        if (spec.kind == RegimeKind::Aet) {
            objective = e <= spec.t0 ? RegimeKind::Erm : spec.aet_inner;
            if (e == spec.t0 + 1 && spec.t0 > 0 && spec.reset_moments_at_switch) s.opt.reset();
        }
        switch (objective) {
            case RegimeKind::Erm: loss = train_epoch_erm(s, train, spec, lr); break;
            case RegimeKind::At: loss = train_epoch_at(s, train, spec, spec.train_pgd, lr); break;
            case RegimeKind::Trades:
                loss = train_epoch_trades(s, train, spec, spec.train_pgd, spec.trades_beta, lr);
                break;
            default: break;
        }
        s.reports.push_back(finish_epoch(s, spec, eval, phase_label(spec, e), lr, loss, seconds_since(t)));
        if (hook) hook(s, s.reports.back());
    }
}

void run_cat(TrainState& s, const RegimeSpec& spec, const data::Dataset& train, const data::Dataset& val,
             const data::Dataset& eval, const EpochHook& hook) {
    spec.validate();
    if (spec.kind != RegimeKind::Cat) throw InvalidArgument("run_cat needs a cat regime");
    if (val.empty()) throw InvalidArgument("CAT needs a validation set");
    initial_eval(s, spec, eval);
    const int last = static_cast<int>(spec.cat.ladder.size()) - 1;
    while (!s.finished && s.epoch < spec.budget()) {
        const double lr = optim::cosine_lr(spec.schedule, static_cast<double>(s.epoch));
        attacks::PgdConfig pgd = spec.train_pgd;
        pgd.threat.delta = spec.cat.ladder[static_cast<std::size_t>(s.stage)];
        const auto t = Clock::now();
        const double loss = train_epoch_at(s, train, spec, pgd, lr);
        const double secs = seconds_since(t);

        attacks::AttackSpec va;
        va.name = "cat-validation";
        va.kind = pgd.threat.delta > 0.0 ? attacks::AttackKind::Pgd : attacks::AttackKind::None;
        va.pgd = pgd;
        const double metric = evaluate(s.model, val, va, spec.eval_seed ^ 0x5a5a5a5aULL,
                                       static_cast<std::uint64_t>(s.epoch + 1))
                                  .robust_acc;
        ++s.validation_attacks;

        EpochReport r = finish_epoch(s, spec, eval, "cat-" + std::to_string(s.stage), lr, loss, secs);
        r.stage = s.stage;
        r.val_robust = metric;

        if (!s.best || metric > s.best->metric) {
            s.best = Snapshot{s.model.params, s.opt, metric, s.epoch};
            s.since_improvement = 0;
        } else {
            ++s.since_improvement;
        }
        s.reports.push_back(r);

        if (s.since_improvement >= spec.cat.patience) {
            s.model.params = s.best->params;
            s.opt = s.best->opt;
            s.rollbacks.push_back({s.epoch, s.stage, s.best->epoch, s.best->metric});
            if (s.stage == last) {
                s.finished = true;
            } else {
                ++s.stage;
                s.best.reset();
                s.since_improvement = 0;
            }
        }
        if (hook) hook(s, s.reports.back());
    }
}

}  // namespace aetlab::regimes
