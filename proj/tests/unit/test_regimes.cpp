#include <doctest.h>

#include <cmath>
#include <map>

#include "aetlab/error.hpp"
#include "aetlab/regimes.hpp"
#include "support.hpp"

using namespace aetlab;
using namespace aetlab::regimes;

namespace {

data::Dataset gaussians(double separation, double noise, std::size_t per_class, std::uint64_t seed) {
    data::SyntheticSpec s;
    s.separation = separation;
    s.noise = noise;
    s.n_per_class = per_class;
    s.seed = seed;
    return data::gen_synthetic(s);
}

const models::ArchSpec kArch = models::ArchSpec::mlp({2, 8, 2}, 17);

RegimeSpec base_spec(RegimeKind kind, int t0, int t1) {
    RegimeSpec r;
    r.kind = kind;
    r.t0 = t0;
    r.t1 = t1;
    r.train_pgd = {{Norm::Linf, 0.08}, 0.03, 4, true, 0};
    r.adam.lr = 0.01;
    r.schedule = {0.01, 0.0, 6.0};
    r.batch_size = 16;
    r.eval_attack.name = "eval";
    r.eval_attack.kind = attacks::AttackKind::Pgd;
    r.eval_attack.pgd = {{Norm::Linf, 0.08}, 0.03, 5, true, 0};
    r.eval_seed = 5;
    return r;
}

TrainState fresh(const RegimeSpec& spec) { return TrainState::create(kArch, spec.adam, 99); }

std::vector<ParamList> trajectory(TrainState& s, const RegimeSpec& spec, const data::Dataset& d,
                                  const data::Dataset& eval) {
    std::vector<ParamList> out;
    run_schedule(s, spec, d, eval, [&](const TrainState& st, const EpochReport&) { out.push_back(st.model.params); });
    return out;
}

bool same_params(const ParamList& a, const ParamList& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i].value == b[i].value)) return false;
    return true;
}

bool same_reports(const std::vector<EpochReport>& a, const std::vector<EpochReport>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].train_loss != b[i].train_loss || a[i].clean_acc != b[i].clean_acc || a[i].robust_acc != b[i].robust_acc ||
            a[i].lr != b[i].lr)
            return false;
    return true;
}

}  // namespace

TEST_CASE("nesting law: aet is erm for t0 epochs, then at from the ignition parameters") {
    const auto d = gaussians(2.0, 1.0, 40, 1), ev = gaussians(2.0, 1.0, 20, 2);
    const auto aet_spec = base_spec(RegimeKind::Aet, 3, 3);
    auto aet = fresh(aet_spec);
    const auto aet_traj = trajectory(aet, aet_spec, d, ev);
    REQUIRE(aet_traj.size() == 6);

    // erm over the same 6-epoch schedule, stopped after 3 epochs by giving it a 3-epoch budget
    auto erm_spec = base_spec(RegimeKind::Erm, 0, 3);
    auto erm = fresh(erm_spec);
    const auto erm_traj = trajectory(erm, erm_spec, d, ev);
    for (int e = 0; e < 3; ++e) CHECK(same_params(erm_traj[e], aet_traj[e]));

    // continue the erm state with plain at up to the full budget
    const auto at_spec = base_spec(RegimeKind::At, 0, 6);
    const auto cont = trajectory(erm, at_spec, d, ev);
    REQUIRE(cont.size() == 3);
    for (int e = 0; e < 3; ++e) CHECK(same_params(cont[e], aet_traj[3 + e]));
    CHECK(aet.reports[2].phase == "ignition");
    CHECK(aet.reports[3].phase == "adversarial");
}

TEST_CASE("aet degenerates to at when t0 = 0 and to erm when t1 = 0") {
    const auto d = gaussians(2.0, 1.0, 30, 3), ev = gaussians(2.0, 1.0, 20, 4);
    auto a = fresh(base_spec(RegimeKind::Aet, 0, 4)), b = fresh(base_spec(RegimeKind::At, 0, 4));
    run_schedule(a, base_spec(RegimeKind::Aet, 0, 4), d, ev);
    run_schedule(b, base_spec(RegimeKind::At, 0, 4), d, ev);
    CHECK(same_reports(a.reports, b.reports));
    CHECK(same_params(a.model.params, b.model.params));

    auto c = fresh(base_spec(RegimeKind::Aet, 4, 0)), e = fresh(base_spec(RegimeKind::Erm, 4, 0));
    run_schedule(c, base_spec(RegimeKind::Aet, 4, 0), d, ev);
    run_schedule(e, base_spec(RegimeKind::Erm, 4, 0), d, ev);
    CHECK(same_reports(c.reports, e.reports));
    CHECK(same_params(c.model.params, e.model.params));
}

TEST_CASE("zero radius at and zero beta or zero radius trades equal erm") {
    const auto d = gaussians(2.0, 1.0, 30, 5);
    const auto spec = base_spec(RegimeKind::At, 0, 1);
    auto pgd0 = spec.train_pgd;
    pgd0.threat.delta = 0.0;

    auto erm = fresh(spec), at = fresh(spec), tb = fresh(spec), td = fresh(spec);
    for (int epoch = 0; epoch < 2; ++epoch) {
        const double l0 = train_epoch_erm(erm, d, spec, 0.01);
        CHECK(train_epoch_at(at, d, spec, pgd0, 0.01) == l0);
        CHECK(train_epoch_trades(tb, d, spec, spec.train_pgd, 0.0, 0.01) == l0);
        CHECK(train_epoch_trades(td, d, spec, pgd0, 6.0, 0.01) == l0);
    }
    CHECK(same_params(erm.model.params, at.model.params));
    CHECK(same_params(erm.model.params, tb.model.params));
    CHECK(same_params(erm.model.params, td.model.params));
    CHECK_THROWS_AS(train_epoch_trades(td, d, spec, spec.train_pgd, -1.0, 0.01), InvalidArgument);
}

TEST_CASE("erm separates well separated gaussians and zero learning rate freezes parameters") {
    const auto d = gaussians(10.0, 0.01, 50, 6);
    auto spec = base_spec(RegimeKind::Erm, 0, 10);
    spec.schedule = {0.01, 0.0, 10.0};
    auto s = fresh(spec);
    run_schedule(s, spec, d, data::Dataset{});
    const auto pred = models::predict(s.model, d.images);
    int correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) correct += pred[i] == d.labels[i];
    CHECK(correct == 100);

    auto frozen = fresh(spec);
    const auto before = frozen.model.params;
    train_epoch_erm(frozen, d, spec, 0.0);
    CHECK(same_params(before, frozen.model.params));
}

TEST_CASE("one full-batch step lowers the loss on separable data") {
    const auto d = gaussians(4.0, 0.5, 32, 7);
    auto spec = base_spec(RegimeKind::Erm, 0, 1);
    spec.batch_size = d.size();
    auto s = fresh(spec);
    const double before = models::cross_entropy_grads(s.model, d.images, d.labels).loss;
    const double reported = train_epoch_erm(s, d, spec, optim::AdamHyper{}.lr);
    CHECK(reported == doctest::Approx(before).epsilon(1e-15));
    CHECK(models::cross_entropy_grads(s.model, d.images, d.labels).loss < before);
}

TEST_CASE("at on separated gaussians is robust under the brute-force oracle") {
    // the class means sit about 0.99 apart in [0,1]; δ = 0.1 is far below half the margin
    const auto d = gaussians(10.0, 0.01, 40, 8);
    auto spec = base_spec(RegimeKind::At, 0, 15);
    spec.train_pgd = {{Norm::Linf, 0.1}, 0.04, 5, true, 0};
    spec.schedule = {0.01, 0.0, 15.0};
    auto s = fresh(spec);
    run_schedule(s, spec, d, data::Dataset{});
    int robust = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Tensor x({2}, std::vector<double>(d.images.row(i).begin(), d.images.row(i).end()));
        // binary cross-entropy is monotone in the margin, so its grid maximum is the worst margin
        const auto wc = attacks::brute_force_worst_case(s.model, x, d.labels[i], spec.train_pgd.threat, 21);
        robust += models::predict(s.model, Tensor({1, 2}, wc.x.data))[0] == d.labels[i];
    }
    CHECK(robust == 80);
}

TEST_CASE("epoch accounting, phase labels and initial evaluation") {
    const auto d = gaussians(2.0, 1.0, 20, 9), ev = gaussians(2.0, 1.0, 10, 10);
    for (auto [kind, t0, t1] : {std::tuple{RegimeKind::Erm, 0, 3}, std::tuple{RegimeKind::At, 1, 2},
                                std::tuple{RegimeKind::Trades, 0, 2}, std::tuple{RegimeKind::Aet, 2, 3}}) {
        const auto spec = base_spec(kind, t0, t1);
        auto s = fresh(spec);
        run_schedule(s, spec, d, ev);
        CHECK(s.epoch == spec.budget());
        CHECK(static_cast<int>(s.reports.size()) == spec.budget());
        REQUIRE(s.initial.has_value());
        CHECK(s.initial->phase == "init");
        for (const auto& r : s.reports) {
            CHECK(r.phase == phase_label(spec, r.epoch));
            CHECK((r.clean_acc >= 0.0 && r.clean_acc <= 100.0));
            CHECK((r.robust_acc >= 0.0 && r.robust_acc <= 100.0));
            CHECK(r.wall_seconds > 0.0);
        }
        // a finished run resumes to a no-op
        run_schedule(s, spec, d, ev);
        CHECK(static_cast<int>(s.reports.size()) == spec.budget());
    }
    auto cat = fresh(base_spec(RegimeKind::Cat, 0, 1));
    CHECK_THROWS_AS(run_schedule(cat, base_spec(RegimeKind::Cat, 0, 1), d, ev), InvalidArgument);
}

TEST_CASE("cat: single stage equals at, zero strength stage equals erm, validation count") {
    const auto d = gaussians(2.0, 1.0, 30, 11), val = gaussians(2.0, 1.0, 15, 12), ev = gaussians(2.0, 1.0, 10, 13);
    auto cat_spec = base_spec(RegimeKind::Cat, 0, 4);
    cat_spec.cat.ladder = {cat_spec.train_pgd.threat.delta};
    cat_spec.cat.patience = 10;
    auto cat = fresh(cat_spec);
    run_cat(cat, cat_spec, d, val, ev);
    auto at = fresh(base_spec(RegimeKind::At, 0, 4));
    run_schedule(at, base_spec(RegimeKind::At, 0, 4), d, ev);
    CHECK(same_params(cat.model.params, at.model.params));
    CHECK(cat.validation_attacks == 4);
    CHECK(cat.rollbacks.empty());

    auto zero_spec = cat_spec;
    zero_spec.cat.ladder = {0.0, 0.08};
    auto z = fresh(zero_spec);
    std::vector<ParamList> ztraj;
    run_cat(z, zero_spec, d, val, ev, [&](const TrainState& st, const EpochReport&) { ztraj.push_back(st.model.params); });
    auto erm = fresh(base_spec(RegimeKind::Erm, 0, 4));
    const auto etraj = trajectory(erm, base_spec(RegimeKind::Erm, 0, 4), d, ev);
    for (std::size_t e = 0; e < ztraj.size() && z.reports[e].stage == 0; ++e) {
        // stage 0 keeps the erm trajectory until its first rollback
        if (!z.rollbacks.empty() && static_cast<int>(e) + 1 >= z.rollbacks.front().epoch) break;
        CHECK(same_params(ztraj[e], etraj[e]));
    }
    CHECK(z.validation_attacks == z.epoch);

    auto bad = cat_spec;
    bad.cat.ladder = {0.1, 0.05};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad.cat.ladder = {0.1};
    bad.cat.patience = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    const auto ladder = CatSpec::even(0.1).ladder;
    REQUIRE(ladder.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(ladder[k] == doctest::Approx(0.025 * k).epsilon(1e-15));
    CHECK(ladder.back() == 0.1);
}

TEST_CASE("cat rollback restores the stage-best parameters exactly") {
    const auto d = gaussians(1.0, 1.5, 40, 14), val = gaussians(1.0, 1.5, 20, 15);
    auto spec = base_spec(RegimeKind::Cat, 0, 24);
    spec.cat = CatSpec::even(0.2, 3, 1);
    spec.schedule = {0.01, 0.0, 24.0};
    auto s = fresh(spec);
    std::map<int, ParamList> after;
    std::map<int, double> metric;
    std::vector<std::pair<int, ParamList>> restored;
    std::size_t seen = 0;
    run_cat(s, spec, d, val, data::Dataset{}, [&](const TrainState& st, const EpochReport& r) {
        metric[r.epoch] = r.val_robust;
        if (st.rollbacks.size() > seen) {
            seen = st.rollbacks.size();
            restored.emplace_back(st.rollbacks.back().restored_epoch, st.model.params);
        } else {
            after[r.epoch] = st.model.params;
        }
    });
    REQUIRE_FALSE(s.rollbacks.empty());
    CHECK(s.validation_attacks == s.epoch);
    CHECK(s.epoch <= spec.budget());
    for (std::size_t k = 0; k < restored.size(); ++k) {
        const auto& rb = s.rollbacks[k];
        const int best_epoch = rb.restored_epoch;
        REQUIRE(after.count(best_epoch));
        CHECK(same_params(restored[k].second, after[best_epoch]));
        // strict improvement: the restored epoch holds the stage maximum, first occurrence
        double stage_max = -1.0;
        int first_max = 0;
        for (const auto& r : s.reports)
            if (r.stage == rb.stage && r.epoch <= rb.epoch && r.val_robust > stage_max) {
                stage_max = r.val_robust;
                first_max = r.epoch;
            }
        CHECK(first_max == best_epoch);
        CHECK(rb.metric == stage_max);
    }
    for (const auto& r : s.reports) CHECK(r.phase == "cat-" + std::to_string(r.stage));
}

TEST_CASE("derived seeds are deterministic and separate streams") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(regime_from_string("aet") == RegimeKind::Aet);
    CHECK_THROWS_AS(regime_from_string("mart"), InvalidArgument);
}
