#include "aetlab/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aetlab/attacks.hpp"
#include "aetlab/checkpoint.hpp"
#include "aetlab/error.hpp"

namespace aetlab::exp {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Stream tags for derive_seed. Each consumer of randomness gets its own stream.
enum : std::uint64_t {
    kTagInit = 1,
    kTagTrain = 2,
    kTagEval = 3,
    kTagFinal = 4,
    kTagSliced = 5,
    kTagLipschitz = 6,
    kTagRademacher = 7,
    kTagRound = 1000,
    kTagFeature = 2000,
};

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string hex64(std::uint64_t v) { return fmt("%016" PRIx64, v); }

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + p.string() + "'");
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void make_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw Error("cannot create output directory '" + p.string() + "'");
}

data::Dataset concat_cifar(const std::string& dir, const std::vector<std::string>& files, data::Split split) {
    std::vector<std::uint8_t> all;
    for (const auto& f : files) {
        const auto b = data::read_file(dir + "/" + f);
        all.insert(all.end(), b.begin(), b.end());
    }
    return data::parse_cifar10_bin(all, split);
}

data::Dataset take(const data::Dataset& d, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n >= d.size()) return d;
    return data::stratified_subset_total(d, n, seed);
}

json eval_json(const std::optional<regimes::EvalResult>& e) {
    if (!e) return nullptr;
    return json{{"clean_acc", e->clean_acc}, {"robust_acc", e->robust_acc}};
}

std::string round_name(int epoch) { return fmt("round_%04d.bin", epoch); }
std::string snapshot_name(int epoch) { return fmt("snapshot_%04d.bin", epoch); }

/// Training threat of an epoch, or nothing for a natural epoch.
std::optional<attacks::PgdConfig> round_attack(const regimes::RegimeSpec& spec, const std::string& phase) {
    if (phase == "adversarial") return spec.train_pgd;
    if (phase.rfind("cat-", 0) == 0) {
        const auto stage = static_cast<std::size_t>(std::stoul(phase.substr(4)));
        if (stage >= spec.cat.ladder.size() || spec.cat.ladder[stage] <= 0.0) return std::nullopt;
        auto p = spec.train_pgd;
        p.threat.delta = spec.cat.ladder[stage];
        return p;
    }
    return std::nullopt;
}

Tensor round_points(const models::CompositeModel& model, const data::Dataset& probe, attacks::PgdConfig pgd,
                    std::uint64_t seed, int epoch) {
    pgd.seed = regimes::derive_seed(seed, kTagRound + static_cast<std::uint64_t>(epoch));
    return attacks::pgd(model, probe.images, probe.labels, pgd);
}

double ce_risk(const models::CompositeModel& model, const Tensor& x, const std::vector<int>& y) {
    return theory::mean_loss(theory::losses_from_logits(models::logits(model, x), y, theory::LossKind::CrossEntropy));
}

models::CompositeModel model_with(const models::ArchSpec& arch, const ParamList& params) {
    auto m = models::build_model(arch);
    if (m.params.size() != params.size()) throw ParseError(ParseErrorKind::DimensionMismatch, "parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (m.params[i].value.shape != params[i].value.shape)
            throw ParseError(ParseErrorKind::DimensionMismatch, "parameter shape mismatch for " + params[i].name);
        m.params[i].value = params[i].value;
    }
    return m;
}

std::vector<std::string> split_line(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    return out;
}

}  // namespace

// ---- data ---------------------------------------------------------------------------------

Splits load_splits(const config::ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    Splits s;
    switch (d.kind) {
        case config::DatasetKind::Mnist: {
            s.train = data::load_mnist_dir(d.path, "train", data::Split::Train);
            const bool t10k = !fs::exists(d.path + "/test-images-idx3-ubyte") && fs::exists(d.path + "/t10k-images-idx3-ubyte");
            s.test = data::load_mnist_dir(d.path, t10k ? "t10k" : "test", data::Split::Test);
            break;
        }
        case config::DatasetKind::Cifar10:
            s.train = concat_cifar(d.path, {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                                            "data_batch_5.bin"},
                                   data::Split::Train);
            s.test = concat_cifar(d.path, {"test_batch.bin"}, data::Split::Test);
            break;
        default: {
            auto spec = d.synthetic;
            spec.seed = d.subset_seed;
            s.train = data::gen_synthetic(spec);
            spec.seed = regimes::derive_seed(d.subset_seed, 1);
            s.test = data::gen_synthetic(spec);
            s.test.split = data::Split::Test;
        }
    }
    s.train = take(s.train, d.train_size, d.subset_seed);
    s.test = take(s.test, d.test_size, regimes::derive_seed(d.subset_seed, 2));
    s.eval = take(s.test, d.eval_size, regimes::derive_seed(d.subset_seed, 3));
    if (cfg.run.trace)
        s.probe = data::stratified_subset_total(s.train, std::min(cfg.run.probe_size, s.train.size()),
                                                regimes::derive_seed(d.subset_seed, 4));
    if (cfg.regime.kind == regimes::RegimeKind::Cat)
        s.cat_val = data::stratified_subset_total(s.train, std::min(cfg.run.cat_val_size, s.train.size()),
                                                  regimes::derive_seed(d.subset_seed, 5));
    const auto in = shape_numel(cfg.arch.input_shape);
    if (shape_numel(s.train.example_shape()) != in)
        throw ConfigError("[model] input shape does not match the dataset");
    return s;
}

models::ArchSpec arch_for_seed(const config::ExperimentConfig& cfg, std::uint64_t seed) {
    auto a = cfg.arch;
    a.init_seed = regimes::derive_seed(seed, kTagInit);
    return a;
}

regimes::RegimeSpec regime_for_seed(const config::ExperimentConfig& cfg, std::uint64_t seed) {
    auto r = cfg.regime;
    r.eval_seed = regimes::derive_seed(seed, kTagEval);
    return r;
}

regimes::TrainState initial_state(const config::ExperimentConfig& cfg, std::uint64_t seed) {
    return regimes::TrainState::create(arch_for_seed(cfg, seed), cfg.regime.adam, regimes::derive_seed(seed, kTagTrain));
}

// ---- CSV ------------------------------------------------------------------------------------

std::string csv_header() { return "epoch,phase,lr,train_loss,clean_acc,robust_acc,wall_seconds\n"; }

std::string csv_row(const regimes::EpochReport& r, double wall_seconds) {
    return fmt("%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.phase.c_str(), r.lr, r.train_loss, r.clean_acc,
               r.robust_acc, wall_seconds);
}

double wall_column(const config::ExperimentConfig& cfg, const regimes::RegimeSpec& spec, const regimes::EpochReport& r) {
    if (cfg.run.record_wall_time) return r.wall_seconds;
    return round_attack(spec, r.phase) ? cfg.timing.at_epoch_seconds : cfg.timing.ce_epoch_seconds;
}

std::vector<CsvRow> read_csv(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line) || line + "\n" != csv_header())
        throw ParseError(ParseErrorKind::BadFormat, path + ": unexpected CSV header");
    std::vector<CsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_line(line);
        if (f.size() != 7) throw ParseError(ParseErrorKind::BadFormat, path + ": row with " + std::to_string(f.size()) + " fields");
        try {
            rows.push_back({std::stoi(f[0]), f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                            std::stod(f[6])});
        } catch (const std::logic_error&) {
            throw ParseError(ParseErrorKind::BadFormat, path + ": malformed row '" + line + "'");
        }
    }
    return rows;
}

// ---- train ------------------------------------------------------------------------------------

RunSummary train_seed(const config::ExperimentConfig& cfg, const Splits& splits, std::uint64_t seed,
                      const std::string& dir_s, const TrainOptions& opts) {
    const fs::path dir(dir_s);
    const auto spec = regime_for_seed(cfg, seed);
    const auto arch = arch_for_seed(cfg, seed);

    std::optional<io::Checkpoint> ck;
    if (opts.resume) {
        if (spec.kind == regimes::RegimeKind::Cat)
            throw ConfigError("resume is not supported for cat runs (stage bookkeeping is not checkpointed)");
        ck = io::load_checkpoint(*opts.resume);
        if (!(ck->arch == arch)) throw ConfigError("checkpoint '" + *opts.resume + "' does not belong to this config and seed");
        if (ck->epoch > spec.budget()) throw ConfigError("checkpoint epoch exceeds the configured budget");
    }

    make_dir(dir);
    write_text(dir / "config.ini", cfg.effective.dump());
    if (cfg.run.trace) make_dir(dir / "trace");

    auto s = ck ? io::restore(*ck) : initial_state(cfg, seed);
    const int start_epoch = s.epoch;

    if (cfg.run.trace) {
        io::save_probe((dir / "trace" / "probe.bin").string(), {splits.probe.images, splits.probe.labels});
        if (s.epoch == 0) io::save_snapshot((dir / "trace" / snapshot_name(0)).string(), {0, s.model.params});
    }

    std::string csv = csv_header();
    write_text(dir / "epochs.csv", csv);
    auto hook = [&](const regimes::TrainState& st, const regimes::EpochReport& r) {
        csv += csv_row(r, wall_column(cfg, spec, r));
        write_text(dir / "epochs.csv", csv);
        if (cfg.run.trace) {
            if (const auto atk = round_attack(spec, r.phase)) {
                io::RoundRecord rr;
                rr.epoch = r.epoch;
                rr.params = st.model.params;
                rr.adversarial = round_points(st.model, splits.probe, *atk, seed, r.epoch);
                rr.risk = ce_risk(st.model, rr.adversarial, splits.probe.labels);
                io::save_round((dir / "trace" / round_name(r.epoch)).string(), rr);
            }
            if (spec.kind == regimes::RegimeKind::Aet && spec.t0 > 0 && r.epoch == spec.t0)
                io::save_snapshot((dir / "trace" / snapshot_name(r.epoch)).string(), {r.epoch, st.model.params});
        }
        if (cfg.run.checkpoint_every > 0 && r.epoch % cfg.run.checkpoint_every == 0)
            io::save_checkpoint((dir / fmt("checkpoint_%04d.bin", r.epoch)).string(), io::capture(st));
        if (opts.log)
            *opts.log << fmt("[seed %" PRIu64 "] epoch %d %s loss=%.4f clean=%.2f robust=%.2f (%.1fs)\n", seed, r.epoch,
                             r.phase.c_str(), r.train_loss, r.clean_acc, r.robust_acc, r.wall_seconds)
                      << std::flush;
    };

    if (spec.kind == regimes::RegimeKind::Cat)
        regimes::run_cat(s, spec, splits.train, splits.cat_val, splits.eval, hook);
    else
        regimes::run_schedule(s, spec, splits.train, splits.eval, hook);

    RunSummary sum;
    sum.seed = seed;
    sum.dir = dir.string();
    sum.epochs = s.epoch;
    sum.reports = s.reports;
    for (const auto& r : s.reports) sum.measured_train_seconds += r.wall_seconds;

    std::vector<std::string> artifacts{"config.ini", "epochs.csv"};
    if (s.epoch > 0 && s.epoch > start_epoch) {
        io::save_checkpoint((dir / "checkpoint_final.bin").string(), io::capture(s));
        artifacts.push_back("checkpoint_final.bin");
    }
    if (cfg.run.final_eval && s.epoch > 0)
        sum.final_eval = regimes::evaluate(s.model, splits.test, cfg.final_attack, regimes::derive_seed(seed, kTagFinal), 0);

    std::optional<regimes::EvalResult> initial;
    if (s.initial) initial = regimes::EvalResult{s.initial->clean_acc, s.initial->robust_acc};
    json rollbacks = json::array();
    for (const auto& rb : s.rollbacks)
        rollbacks.push_back({{"epoch", rb.epoch}, {"stage", rb.stage}, {"restored_epoch", rb.restored_epoch}, {"metric", rb.metric}});
    json m{{"config_hash", hex64(cfg.hash())},
           {"seed", seed},
           {"regime", regimes::to_string(spec.kind)},
           {"ignition_epochs", spec.t0},
           {"adversarial_epochs", spec.t1},
           {"epochs_completed", s.epoch},
           {"resumed_from", ck ? json(start_epoch) : json(nullptr)},
           {"initial_eval", eval_json(initial)},
           {"final_attack", cfg.final_attack.name},
           {"final_eval", eval_json(sum.final_eval)},
           {"test_size", splits.test.size()},
           {"eval_size", splits.eval.size()},
           {"wall_seconds_column", cfg.run.record_wall_time ? "measured" : "timing_model"},
           {"trace", cfg.run.trace},
           {"artifacts", artifacts}};
    if (spec.kind == regimes::RegimeKind::Cat) {
        m["cat_ladder"] = spec.cat.ladder;
        m["cat_rollbacks"] = rollbacks;
        m["cat_validation_attacks"] = s.validation_attacks;
    }
    write_text(dir / "manifest.json", m.dump(2) + "\n");
    return sum;
}

std::vector<RunSummary> cmd_train(const config::ExperimentConfig& cfg, const std::string& out, const TrainOptions& opts) {
    if (opts.resume && cfg.run.seeds.size() != 1) throw ConfigError("resume needs exactly one seed");
    make_dir(out);
    const auto splits = load_splits(cfg);
    std::vector<RunSummary> runs;
    for (auto seed : cfg.run.seeds) {
        const auto dir = cfg.run.seeds.size() > 1 ? (fs::path(out) / ("seed_" + std::to_string(seed))).string() : out;
        runs.push_back(train_seed(cfg, splits, seed, dir, opts));
    }
    return runs;
}

// ---- sweep ------------------------------------------------------------------------------------

std::vector<std::pair<int, int>> dedupe_ratios(const std::vector<std::pair<int, int>>& ratios, std::ostream* log) {
    std::vector<std::pair<int, int>> out;
    std::set<std::pair<int, int>> seen;
    for (const auto& r : ratios) {
        if (seen.insert(r).second) {
            out.push_back(r);
        } else if (log) {
            *log << "warning: duplicate ratio " << r.first << "/" << r.second << " ignored\n";
        }
    }
    return out;
}

std::vector<SweepRow> cmd_sweep_ratio(const config::ExperimentConfig& cfg, const std::string& out, std::ostream* log) {
    const int budget = cfg.regime.budget();
    if (cfg.ratios.empty()) throw ConfigError("[sweep] ratios is empty");
    for (const auto& [ce, at] : cfg.ratios)
        if (ce < 0 || at < 0 || ce + at != budget)
            throw ConfigError(fmt("[sweep] ratio %d/%d does not sum to the %d-epoch budget", ce, at, budget));
    const auto ratios = dedupe_ratios(cfg.ratios, log);

    const auto splits = load_splits(cfg);
    std::vector<SweepRow> rows;
    std::string csv = "ratio,clean_acc,robust_acc,baseline\n";
    for (const auto& [ce, at] : ratios) {
        auto c = cfg;
        c.regime.kind = regimes::RegimeKind::Aet;
        c.regime.t0 = ce;
        c.regime.t1 = at;
        c.effective.set("regime", "kind", "aet");
        c.effective.set("regime", "ignition", std::to_string(ce));
        const auto dir = fs::path(out) / fmt("ratio_%d_%d", ce, at);
        SweepRow row{ce, at, 0.0, 0.0, ce == 0};
        for (auto seed : c.run.seeds) {
            const auto sub = c.run.seeds.size() > 1 ? dir / ("seed_" + std::to_string(seed)) : dir;
            TrainOptions o;
            o.log = log;
            const auto run = train_seed(c, splits, seed, sub.string(), o);
            regimes::EvalResult e{};
            if (run.final_eval) {
                e = *run.final_eval;
            } else if (!run.reports.empty()) {
                e = {run.reports.back().clean_acc, run.reports.back().robust_acc};
            }
            row.clean_acc += e.clean_acc / static_cast<double>(c.run.seeds.size());
            row.robust_acc += e.robust_acc / static_cast<double>(c.run.seeds.size());
        }
        rows.push_back(row);
        csv += fmt("%d/%d,%.4f,%.4f,%d\n", ce, at, row.clean_acc, row.robust_acc, row.baseline ? 1 : 0);
    }
    make_dir(out);
    write_text(fs::path(out) / "summary.csv", csv);
    return rows;
}

// ---- timing model --------------------------------------------------------------------------------

TimingResult cmd_timing_model(const config::TimingModel& tm, int n_ce) {
    tm.validate();
    if (n_ce < 0 || n_ce > tm.total_epochs)
        throw ConfigError(fmt("n_ce must lie in [0, %d], got %d", tm.total_epochs, n_ce));
    const auto ce = static_cast<std::int64_t>(std::llround(tm.ce_epoch_seconds * 100.0));
    const auto at = static_cast<std::int64_t>(std::llround(tm.at_epoch_seconds * 100.0));
    TimingResult r;
    r.total_centiseconds = n_ce * ce + (tm.total_epochs - n_ce) * at;
    r.baseline_centiseconds = tm.total_epochs * at;
    const std::int64_t num = 10000 * (r.baseline_centiseconds - r.total_centiseconds);
    const std::int64_t den = r.baseline_centiseconds;
    r.savings_basis_points = num >= 0 ? (2 * num + den) / (2 * den) : -((-2 * num + den) / (2 * den));
    return r;
}

std::string format_centiseconds(std::int64_t cs) {
    if (cs % 100 == 0) return std::to_string(cs / 100);
    auto s = fmt("%" PRId64 ".%02" PRId64, cs / 100, cs % 100);
    if (s.back() == '0') s.pop_back();
    return s;
}

std::string format_basis_points(std::int64_t bp) {
    const std::int64_t a = bp < 0 ? -bp : bp;
    return fmt("%s%" PRId64 ".%02" PRId64, bp < 0 ? "-" : "", a / 100, a % 100);
}

// ---- report --------------------------------------------------------------------------------------

IncompleteTrace::IncompleteTrace(std::vector<std::string> missing)
    : Error([&] {
          std::string s = "incomplete trace, missing:";
          for (const auto& m : missing) s += " " + m;
          return s;
      }()),
      missing_(std::move(missing)) {}

std::string cmd_report(const std::string& run_dir, const ReportOptions& opts) {
    const fs::path dir(run_dir);
    std::vector<std::string> missing;
    for (const char* f : {"config.ini", "manifest.json", "epochs.csv"})
        if (!fs::exists(dir / f)) missing.emplace_back(f);
    if (!missing.empty()) throw IncompleteTrace(missing);

    const auto cfg = config::build(config::ConfigFile::load((dir / "config.ini").string()));
    const auto manifest = json::parse(read_text(dir / "manifest.json"));
    const auto seed = manifest.at("seed").get<std::uint64_t>();
    const auto spec = regime_for_seed(cfg, seed);
    const auto arch = arch_for_seed(cfg, seed);
    const auto rows = read_csv((dir / "epochs.csv").string());

    std::vector<int> adv_epochs;
    for (const auto& r : rows)
        if (round_attack(spec, r.phase)) adv_epochs.push_back(r.epoch);
    std::vector<int> snapshot_epochs;
    if (!adv_epochs.empty()) {
        if (!fs::exists(dir / "trace" / "probe.bin")) missing.push_back("trace/probe.bin");
        for (int e : adv_epochs)
            if (!fs::exists(dir / "trace" / round_name(e))) missing.push_back("trace/" + round_name(e));
        const bool resumed = !manifest.at("resumed_from").is_null();
        if (!resumed) snapshot_epochs.push_back(0);
        if (spec.kind == regimes::RegimeKind::Aet && spec.t0 > 0 && !rows.empty() && rows.back().epoch >= spec.t0 &&
            (!resumed || manifest.at("resumed_from").get<int>() < spec.t0))
            snapshot_epochs.push_back(spec.t0);
        for (int e : snapshot_epochs)
            if (!fs::exists(dir / "trace" / snapshot_name(e))) missing.push_back("trace/" + snapshot_name(e));
    }
    if (!missing.empty()) throw IncompleteTrace(missing);

    json rep;
    rep["run"] = {{"seed", seed},
                  {"regime", regimes::to_string(spec.kind)},
                  {"config_hash", manifest.at("config_hash")},
                  {"epochs", rows.size()},
                  {"adversarial_rounds", adv_epochs.size()}};

    // curves
    std::string curves = "epoch,clean_acc,robust_acc,phase_label\n";
    std::vector<double> robust;
    const auto& init = manifest.at("initial_eval");
    if (!init.is_null()) {
        curves += fmt("0,%.10g,%.10g,init\n", init.at("clean_acc").get<double>(), init.at("robust_acc").get<double>());
        robust.push_back(init.at("robust_acc").get<double>());
    }
    for (const auto& r : rows) {
        curves += fmt("%d,%.10g,%.10g,%s\n", r.epoch, r.clean_acc, r.robust_acc, r.phase.c_str());
        robust.push_back(r.robust_acc);
    }

    // magic phase
    if (adv_epochs.empty()) {
        rep["magic_phase"] = {{"status", "no adversarial epochs"}};
    } else if (init.is_null() || rows.front().epoch != 1) {
        rep["magic_phase"] = {{"status", "needs the initial evaluation and every epoch from 1"}};
    } else {
        const auto sw = static_cast<std::size_t>(adv_epochs.front());
        const std::size_t window = std::min(cfg.theory.magic_window, robust.size() - 1 - sw);
        const auto mp = theory::magic_phase_detect(robust, sw, window, cfg.theory.magic_threshold);
        rep["magic_phase"] = {{"status", "measured"},
                              {"switch_epoch", sw},
                              {"window", window},
                              {"threshold", cfg.theory.magic_threshold},
                              {"peak_gain", mp.peak_gain},
                              {"peak_epoch", mp.peak_epoch},
                              {"detected", mp.detected}};
    }

    if (adv_epochs.empty()) {
        rep["note"] = "no adversarial rounds: the drift, Lipschitz and Rademacher sections are omitted";
    } else {
        const auto probe = io::load_probe((dir / "trace" / "probe.bin").string());
        const std::size_t n = probe.labels.size();
        std::vector<io::RoundRecord> rounds;
        std::vector<models::CompositeModel> hyps;
        for (int e : adv_epochs) {
            rounds.push_back(io::load_round((dir / "trace" / round_name(e)).string()));
            hyps.push_back(model_with(arch, rounds.back().params));
            if (rounds.back().adversarial.rank() == 0 || rounds.back().adversarial.dim(0) != n)
                throw ParseError(ParseErrorKind::DimensionMismatch, round_name(e) + " does not match the probe set");
        }
        const std::size_t T = rounds.size();

        // Lipschitz constant of x -> loss(h_t(x), y), per class, over (probe, D_t) points.
        json lip;
        double L = 0.0;
        if (cfg.theory.lipschitz) {
            L = *cfg.theory.lipschitz;
            lip = {{"source", "config"}, {"value", L}};
        } else {
            const int k = arch.num_classes > 0 ? static_cast<int>(arch.num_classes) : 1;
            std::vector<double> per_class(static_cast<std::size_t>(k), 0.0);
            models::LipschitzOptions lo;
            lo.pair_budget = cfg.theory.lipschitz_pairs;
            lo.norm = cfg.theory.metric.p;
            for (std::size_t t = 0; t < T; ++t) {
                const auto nat = theory::losses_from_logits(models::logits(hyps[t], probe.x), probe.labels,
                                                            theory::LossKind::CrossEntropy);
                const auto adv = theory::losses_from_logits(models::logits(hyps[t], rounds[t].adversarial), probe.labels,
                                                            theory::LossKind::CrossEntropy);
                for (int y = 0; y < k; ++y) {
                    std::vector<std::vector<double>> in, out, pin, pout;
                    for (std::size_t i = 0; i < n; ++i) {
                        if (probe.labels[i] != y) continue;
                        const auto a = probe.x.row(i);
                        const auto b = rounds[t].adversarial.row(i);
                        in.emplace_back(a.begin(), a.end());
                        out.push_back({nat[i]});
                        pin.emplace_back(b.begin(), b.end());
                        pout.push_back({adv[i]});
                    }
                    if (in.empty()) continue;
                    const std::size_t m = in.size();
                    in.insert(in.end(), pin.begin(), pin.end());
                    out.insert(out.end(), pout.begin(), pout.end());
                    lo.seed = regimes::derive_seed(regimes::derive_seed(seed, kTagLipschitz), t * 1024 + static_cast<std::uint64_t>(y));
                    try {
                        const double v = models::lipschitz_estimate_outputs(in, out, m, lo);
                        per_class[static_cast<std::size_t>(y)] = std::max(per_class[static_cast<std::size_t>(y)], v);
                    } catch (const InvalidArgument&) {
                        // every pair coincided; nothing to learn from this class
                    }
                }
            }
            L = *std::max_element(per_class.begin(), per_class.end());
            lip = {{"source", "estimated"},
                   {"value", L},
                   {"per_class", per_class},
                   {"pair_budget", cfg.theory.lipschitz_pairs},
                   {"note", "empirical lower bound on the true constant"}};
        }
        rep["lipschitz"] = lip;

        // bound
        theory::RoundTrace trace;
        for (std::size_t t = 0; t < T; ++t) {
            theory::Round r;
            r.D = theory::EmpiricalDistribution::from_batch(rounds[t].adversarial, probe.labels);
            r.risk = rounds[t].risk;
            if (t + 1 < T) r.cross_risk_next = ce_risk(hyps[t], rounds[t + 1].adversarial, probe.labels);
            trace.rounds.push_back(std::move(r));
        }
        theory::BoundOptions bo;
        bo.delta_conf = cfg.theory.delta_conf;
        bo.n = cfg.theory.n > 0 ? cfg.theory.n : n;
        const bool exact = cfg.theory.w1_mode == "exact" || (cfg.theory.w1_mode == "auto" && n <= bo.w1.max_assignment);
        bo.mode = exact ? theory::W1Mode::Exact : theory::W1Mode::Sliced;
        bo.metric = cfg.theory.metric;
        bo.w1.projections = cfg.theory.projections;
        bo.w1.seed = regimes::derive_seed(seed, kTagSliced);
        bo.stat_multiplier = cfg.theory.stat_multiplier;
        theory::LossSpec ls;
        ls.L = L > 0.0 ? L : 1e-12;
        const auto b = theory::bound_assemble(trace, ls, bo);
        json checks = json::array();
        for (const auto& c : b.drift_checks)
            checks.push_back({{"round", c.round}, {"risk_gap", c.risk_gap}, {"w1", c.w1}, {"bound", c.bound}, {"holds", c.holds}});
        std::vector<double> risks;
        for (const auto& r : rounds) risks.push_back(r.risk);
        rep["bound"] = {{"T", b.T},
                        {"round_epochs", adv_epochs},
                        {"round_risks", risks},
                        {"avg_empirical_risk", b.avg_empirical_risk},
                        {"drifts", b.drifts},
                        {"drift_sum", b.drift_sum},
                        {"L_used", b.L_used},
                        {"drift_term", b.drift_term},
                        {"delta_conf", bo.delta_conf},
                        {"n", bo.n},
                        {"stat_multiplier", b.stat_multiplier},
                        {"stat_term", b.stat_term},
                        {"total", b.total},
                        {"final_risk", b.final_risk},
                        {"eq12_flag", b.eq12_flag},
                        {"telescoping_residual", b.telescoping_residual},
                        {"telescoping_ok", b.telescoping_ok},
                        {"w1_mode", b.w1_mode},
                        {"drift_checks", checks}};

        // Rademacher complexity of the visited loss class on the probe set.
        std::vector<std::vector<double>> cls;
        for (std::size_t t = 0; t < T; ++t)
            cls.push_back(theory::losses_from_logits(models::logits(hyps[t], probe.x), probe.labels,
                                                     theory::LossKind::CrossEntropy));
        const auto sup = theory::finite_class(cls);
        json rad{{"class", "losses of the visited hypotheses"}, {"class_size", T}, {"n", n}};
        if (n <= 12) {
            rad["method"] = "enumeration";
            rad["estimate"] = theory::rademacher_exact(sup, n);
        } else {
            const auto est = theory::rademacher_mc(sup, n, std::max<std::size_t>(1, cfg.theory.rademacher_draws),
                                                   regimes::derive_seed(seed, kTagRademacher));
            rad["method"] = "monte_carlo";
            rad["estimate"] = est.estimate;
            rad["stderr"] = est.stderr_;
            rad["draws"] = est.draws;
        }
        rep["rademacher"] = rad;

        // Feature-space W1 between natural and attacked probe points, per stored snapshot.
        json fw = json::array();
        std::map<int, double> fvals;
        for (int e : snapshot_epochs) {
            const auto snap = io::load_snapshot((dir / "trace" / snapshot_name(e)).string());
            const auto h = model_with(arch, snap.params);
            auto pgd = spec.train_pgd;
            pgd.seed = regimes::derive_seed(seed, kTagFeature + static_cast<std::uint64_t>(e));
            const auto adv = attacks::pgd(h, probe.x, probe.labels, pgd);
            const auto P = theory::EmpiricalDistribution::from_batch(models::features(h, probe.x), {}, theory::Space::Feature);
            const auto Q = theory::EmpiricalDistribution::from_batch(models::features(h, adv), {}, theory::Space::Feature);
            theory::W1Options wo;
            wo.projections = cfg.theory.projections;
            wo.seed = regimes::derive_seed(seed, kTagSliced + 1);
            const double v = theory::w1(P, Q, theory::InstanceMetric{Norm::L2, 0.0},
                                        exact ? theory::W1Mode::Exact : theory::W1Mode::Sliced, wo);
            fvals[e] = v;
            fw.push_back({{"epoch", e}, {"w1", v}});
        }
        json feat{{"snapshots", fw}, {"attack_eps", spec.train_pgd.threat.delta}};
        if (fvals.count(0) && spec.t0 > 0 && fvals.count(spec.t0))
            feat["ignition_reduced"] = fvals[spec.t0] < fvals[0];
        rep["feature_w1"] = feat;
    }

    const fs::path out = opts.out.empty() ? dir : fs::path(opts.out);
    make_dir(out);
    const auto text = rep.dump(2) + "\n";
    write_text(out / "report.json", text);
    write_text(out / "curves.csv", curves);
    if (opts.log) *opts.log << "wrote " << (out / "report.json").string() << "\n";
    return text;
}

// ---- evaluate ------------------------------------------------------------------------------------

regimes::EvalResult cmd_evaluate(const config::ExperimentConfig& cfg, const std::string& checkpoint, std::uint64_t seed,
                                 const std::string& out) {
    const auto ck = io::load_checkpoint(checkpoint);
    if (shape_numel(ck.arch.input_shape) != shape_numel(cfg.arch.input_shape) || ck.arch.num_classes != cfg.arch.num_classes)
        throw ConfigError("checkpoint architecture does not fit the configured dataset");
    const auto s = io::restore(ck);
    auto c = cfg;
    c.run.trace = false;
    c.regime.kind = regimes::RegimeKind::Erm;
    const auto splits = load_splits(c);
    const auto r = regimes::evaluate(s.model, splits.test, cfg.final_attack, regimes::derive_seed(seed, kTagFinal), 0);
    make_dir(out);
    json j{{"checkpoint", checkpoint},
           {"epoch", ck.epoch},
           {"attack", cfg.final_attack.name},
           {"test_size", splits.test.size()},
           {"clean_acc", r.clean_acc},
           {"robust_acc", r.robust_acc}};
    write_text(fs::path(out) / "evaluation.json", j.dump(2) + "\n");
    return r;
}

}  // namespace aetlab::exp
