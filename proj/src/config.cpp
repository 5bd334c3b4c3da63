#include "aetlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "aetlab/error.hpp"

namespace aetlab::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

// section -> key -> default
const std::map<std::string, std::map<std::string, std::string>>& schema() {
    static const std::map<std::string, std::map<std::string, std::string>> s = {
        {"data",
         {{"dataset", "two_gaussians"},
          {"path", ""},
          {"train_size", "0"},
          {"test_size", "0"},
          {"eval_size", "500"},
          {"subset_seed", "0"},
          {"augment", "false"},
          {"n_per_class", "200"},
          {"dim", "2"},
          {"separation", "4"},
          {"noise", "1"}}},
        {"model",
         {{"arch", "mlp"}, {"widths", "2,16,2"}, {"channels", "16,32"}, {"activation", "relu"}}},
        {"regime",
         {{"kind", "aet"},
          {"epochs", "10"},
          {"ignition", "3"},
          {"inner", "at"},
          {"trades_beta", "6"},
          {"batch_size", "64"},
          {"reset_moments", "false"},
          {"cat_levels", "5"},
          {"cat_ladder", ""},
          {"cat_patience", "3"}}},
        {"optim",
         {{"lr", "0.001"},
          {"eta_min", "0"},
          {"t_max", "0"},
          {"weight_decay", "0.0005"},
          {"beta1", "0.9"},
          {"beta2", "0.999"},
          {"eps", "1e-8"}}},
        {"attack",
         {{"train", "train-pgd"},
          {"train_eps", ""},
          {"train_alpha", ""},
          {"train_steps", ""},
          {"train_random_start", ""},
          {"eval", "mnist-pgd20"},
          {"eval_eps", ""},
          {"final", ""}}},
        {"run",
         {{"seeds", "0"},
          {"checkpoint_every", "0"},
          {"record_wall_time", "false"},
          {"final_eval", "true"},
          {"eval_initial", "true"},
          {"trace", "true"},
          {"probe_size", "512"},
          {"cat_val_size", "512"}}},
        {"theory",
         {{"delta_conf", "0.05"},
          {"lipschitz", "auto"},
          {"w1_mode", "auto"},
          {"metric_norm", "l2"},
          {"metric_c", "1"},
          {"projections", "64"},
          {"stat_multiplier", "1"},
          {"n", "0"},
          {"magic_window", "5"},
          {"magic_threshold", "5"},
          {"rademacher_draws", "1000"},
          {"lipschitz_pairs", "10000"}}},
        {"timing", {{"ce_epoch_seconds", "19.25"}, {"at_epoch_seconds", "123.85"}, {"total_epochs", "100"}}},
        {"sweep", {{"ratios", ""}}},
    };
    return s;
}

template <class F>
auto typed(const ConfigFile& f, const std::string& sec, const std::string& key, F conv) {
    const std::string v = f.get(sec, key).value_or("");
    try {
        return conv(v);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("[" + sec + "] " + key + " = '" + v + "': " + e.what());
    }
}

std::size_t to_size(const std::string& v) {
    std::size_t pos = 0;
    if (v.empty() || v[0] == '-') throw InvalidArgument("expected a non-negative integer");
    const auto r = std::stoull(v, &pos);
    if (pos != v.size()) throw InvalidArgument("expected a non-negative integer");
    return static_cast<std::size_t>(r);
}

int to_int(const std::string& v) {
    std::size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw InvalidArgument("expected an integer");
    return r;
}

Norm to_norm(const std::string& v) {
    if (v == "l2" || v == "2") return Norm::L2;
    if (v == "linf" || v == "inf") return Norm::Linf;
    throw InvalidArgument("expected l2 or linf");
}

DatasetKind to_dataset(const std::string& v) {
    if (v == "mnist") return DatasetKind::Mnist;
    if (v == "cifar10") return DatasetKind::Cifar10;
    if (v == "two_gaussians") return DatasetKind::TwoGaussians;
    if (v == "two_moons") return DatasetKind::TwoMoons;
    throw InvalidArgument("expected mnist, cifar10, two_gaussians or two_moons");
}

attacks::AttackSpec to_attack(const std::string& v) {
    try {
        return attacks::preset(v);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
    ConfigFile f;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (!schema().count(section)) throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        if (section.empty()) throw ConfigError(where + ": key outside of any section");
        std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        f.set(section, key, value);
    }
    return f;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

void ConfigFile::merge(const ConfigFile& other) {
    for (const auto& [sec, kv] : other.sections_)
        for (const auto& [k, v] : kv) set(sec, k, v);
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
    const auto it = schema().find(section);
    if (it == schema().end()) throw ConfigError("unknown section [" + section + "]");
    if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    sections_[section][key] = value;
}

std::optional<std::string> ConfigFile::get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
}

std::string ConfigFile::dump() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [sec, kv] : sections_) {
        if (!first) os << '\n';
        first = false;
        os << '[' << sec << "]\n";
        for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    }
    return os.str();
}

double parse_real(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) throw InvalidArgument("expected a number");
    const auto slash = t.find('/');
    auto one = [](const std::string& s) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::logic_error&) {
            throw InvalidArgument("expected a number, got '" + s + "'");
        }
        if (pos != s.size()) throw InvalidArgument("expected a number, got '" + s + "'");
        return v;
    };
    if (slash == std::string::npos) return one(t);
    const double den = one(trim(t.substr(slash + 1)));
    if (den == 0.0) throw InvalidArgument("zero denominator");
    return one(trim(t.substr(0, slash))) / den;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
    std::vector<std::size_t> out;
    for (const auto& p : split(text, ',')) out.push_back(to_size(p));
    return out;
}

std::vector<double> parse_reals(const std::string& text) {
    std::vector<double> out;
    for (const auto& p : split(text, ',')) out.push_back(parse_real(p));
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& p : split(text, ',')) out.push_back(to_size(p));
    return out;
}

bool parse_bool(const std::string& text) {
    std::string t = trim(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw InvalidArgument("expected true or false");
}

void TimingModel::validate() const {
    if (!(ce_epoch_seconds > 0.0) || !(at_epoch_seconds > 0.0) || total_epochs <= 0)
        throw ConfigError("timing model values must be positive");
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(effective.dump()); }

ConfigFile experiment_preset(const std::string& name) {
    if (name == "synthetic")
        return ConfigFile::parse(R"(
[data]
dataset = two_gaussians
n_per_class = 200
eval_size = 0
[model]
arch = mlp
widths = 2,16,2
[regime]
kind = aet
epochs = 10
ignition = 3
batch_size = 32
[optim]
lr = 0.01
[attack]
train = train-pgd10
eval = mnist-pgd20
[run]
probe_size = 64
)",
                                 "preset:synthetic");
    if (name == "mnist-desk")
        return ConfigFile::parse(R"(
[data]
dataset = mnist
path = data/mnist5k
eval_size = 250
[model]
arch = small_cnn
channels = 16,32
[regime]
kind = aet
epochs = 10
ignition = 3
batch_size = 64
[attack]
train = train-pgd10
eval = mnist-pgd20
[run]
probe_size = 256
)",
                                 "preset:mnist-desk");
    if (name == "cifar-desk")
        return ConfigFile::parse(R"(
[data]
dataset = cifar10
path = data/cifar-10-batches-bin
train_size = 5000
test_size = 1000
eval_size = 250
augment = true
[model]
arch = small_cnn
channels = 16,32
[regime]
kind = aet
epochs = 10
ignition = 2
batch_size = 64
[attack]
train = train-pgd10
eval = cifar-pgd20
[run]
probe_size = 256
)",
                                 "preset:cifar-desk");
    throw ConfigError("unknown experiment preset '" + name + "'");
}

std::vector<std::string> experiment_preset_names() { return {"synthetic", "mnist-desk", "cifar-desk"}; }

ExperimentConfig build(const ConfigFile& file, const std::string& preset) {
    ConfigFile eff;
    for (const auto& [sec, kv] : schema())
        for (const auto& [k, v] : kv) eff.set(sec, k, v);
    if (!preset.empty()) eff.merge(experiment_preset(preset));
    eff.merge(file);

    ExperimentConfig c;
    c.effective = eff;
    const auto& f = eff;

    // data
    auto& d = c.data;
    d.kind = typed(f, "data", "dataset", to_dataset);
    d.path = f.get("data", "path").value_or("");
    d.train_size = typed(f, "data", "train_size", to_size);
    d.test_size = typed(f, "data", "test_size", to_size);
    d.eval_size = typed(f, "data", "eval_size", to_size);
    d.subset_seed = typed(f, "data", "subset_seed", to_size);
    d.augment = typed(f, "data", "augment", parse_bool);
    d.synthetic.kind = d.kind == DatasetKind::TwoMoons ? data::SyntheticKind::TwoMoons : data::SyntheticKind::TwoGaussians;
    d.synthetic.n_per_class = typed(f, "data", "n_per_class", to_size);
    d.synthetic.dim = typed(f, "data", "dim", to_size);
    d.synthetic.separation = typed(f, "data", "separation", parse_real);
    d.synthetic.noise = typed(f, "data", "noise", parse_real);
    if ((d.kind == DatasetKind::Mnist || d.kind == DatasetKind::Cifar10) && d.path.empty())
        throw ConfigError("[data] path is required for " + f.get("data", "dataset").value_or(""));
    if (d.synthetic.n_per_class == 0 || d.synthetic.dim == 0) throw ConfigError("synthetic data needs n_per_class, dim > 0");

    // model
    const std::string arch = f.get("model", "arch").value_or("");
    const std::string act = f.get("model", "activation").value_or("");
    if (act != "relu" && act != "identity") throw ConfigError("[model] activation must be relu or identity");
    const auto activation = act == "relu" ? models::Activation::Relu : models::Activation::Identity;
    Shape input;
    std::size_t classes = 10;
    switch (d.kind) {
        case DatasetKind::Mnist: input = {1, 28, 28}; break;
        case DatasetKind::Cifar10: input = {3, 32, 32}; break;
        default:
            input = {d.synthetic.dim};
            classes = 2;
    }
    if (arch == "mlp") {
        auto widths = typed(f, "model", "widths", parse_sizes);
        if (widths.size() < 2) throw ConfigError("[model] widths needs at least input and output widths");
        if (widths.front() != shape_numel(input) || input.size() != 1)
            throw ConfigError("[model] mlp input width must match the flat data dimension");
        if (widths.back() != classes) throw ConfigError("[model] mlp output width must equal the class count");
        c.arch = models::ArchSpec::mlp(widths, 0, activation);
    } else if (arch == "small_cnn") {
        if (input.size() != 3) throw ConfigError("[model] small_cnn needs image data");
        c.arch = models::ArchSpec::small_cnn(input, classes, 0, typed(f, "model", "channels", parse_sizes));
    } else {
        throw ConfigError("[model] arch must be mlp or small_cnn");
    }
    try {
        c.arch.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("[model] ") + e.what());
    }

    // regime
    auto& r = c.regime;
    try {
        r.kind = regimes::regime_from_string(f.get("regime", "kind").value_or(""));
        r.aet_inner = regimes::regime_from_string(f.get("regime", "inner").value_or(""));
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("[regime] ") + e.what());
    }
    const int epochs = typed(f, "regime", "epochs", to_int);
    if (epochs < 0) throw ConfigError("[regime] epochs must be ≥ 0");
    const int ignition = r.kind == regimes::RegimeKind::Aet ? typed(f, "regime", "ignition", to_int) : 0;
    if (ignition < 0 || ignition > epochs) throw ConfigError("[regime] ignition must lie in [0, epochs]");
    r.t0 = ignition;
    r.t1 = epochs - ignition;
    r.trades_beta = typed(f, "regime", "trades_beta", parse_real);
    r.batch_size = typed(f, "regime", "batch_size", to_size);
    r.reset_moments_at_switch = typed(f, "regime", "reset_moments", parse_bool);

    // attacks
    r.train_pgd = to_attack(f.get("attack", "train").value_or("")).pgd;
    if (auto v = f.get("attack", "train_eps"); v && !v->empty()) r.train_pgd.threat.delta = typed(f, "attack", "train_eps", parse_real);
    if (auto v = f.get("attack", "train_alpha"); v && !v->empty()) r.train_pgd.alpha = typed(f, "attack", "train_alpha", parse_real);
    if (auto v = f.get("attack", "train_steps"); v && !v->empty()) r.train_pgd.steps = typed(f, "attack", "train_steps", to_int);
    if (auto v = f.get("attack", "train_random_start"); v && !v->empty())
        r.train_pgd.random_start = typed(f, "attack", "train_random_start", parse_bool);
    r.eval_attack = to_attack(f.get("attack", "eval").value_or(""));
    if (auto v = f.get("attack", "eval_eps"); v && !v->empty()) r.eval_attack.pgd.threat.delta = typed(f, "attack", "eval_eps", parse_real);
    const std::string fin = f.get("attack", "final").value_or("");
    c.final_attack = fin.empty() ? r.eval_attack : to_attack(fin);

    if (r.kind == regimes::RegimeKind::Cat) {
        const std::string ladder = f.get("regime", "cat_ladder").value_or("");
        const int patience = typed(f, "regime", "cat_patience", to_int);
        if (ladder.empty()) {
            const int levels = typed(f, "regime", "cat_levels", to_int);
            if (levels < 1) throw ConfigError("[regime] cat_levels must be ≥ 1");
            r.cat = regimes::CatSpec::even(r.train_pgd.threat.delta, levels, patience);
        } else {
            r.cat.ladder = typed(f, "regime", "cat_ladder", parse_reals);
            r.cat.patience = patience;
        }
    }

    // optimizer + schedule
    r.adam.lr = typed(f, "optim", "lr", parse_real);
    r.adam.weight_decay = typed(f, "optim", "weight_decay", parse_real);
    r.adam.beta1 = typed(f, "optim", "beta1", parse_real);
    r.adam.beta2 = typed(f, "optim", "beta2", parse_real);
    r.adam.eps = typed(f, "optim", "eps", parse_real);
    const double t_max = typed(f, "optim", "t_max", parse_real);
    r.schedule = {r.adam.lr, typed(f, "optim", "eta_min", parse_real), t_max > 0.0 ? t_max : static_cast<double>(epochs)};
    if (d.augment) {
        if (input.size() != 3) throw ConfigError("[data] augment needs image data");
        r.augment = d.kind == DatasetKind::Cifar10 ? data::AugmentConfig::cifar() : data::AugmentConfig::mnist();
    }

    // run
    auto& run = c.run;
    run.seeds = typed(f, "run", "seeds", parse_seeds);
    if (run.seeds.empty()) throw ConfigError("[run] seeds must not be empty");
    run.checkpoint_every = typed(f, "run", "checkpoint_every", to_int);
    run.record_wall_time = typed(f, "run", "record_wall_time", parse_bool);
    run.final_eval = typed(f, "run", "final_eval", parse_bool);
    r.eval_initial = typed(f, "run", "eval_initial", parse_bool);
    run.trace = typed(f, "run", "trace", parse_bool);
    run.probe_size = typed(f, "run", "probe_size", to_size);
    run.cat_val_size = typed(f, "run", "cat_val_size", to_size);
    if (run.trace && run.probe_size == 0) throw ConfigError("[run] probe_size must be positive when tracing");

    // theory
    auto& t = c.theory;
    t.delta_conf = typed(f, "theory", "delta_conf", parse_real);
    if (!(t.delta_conf > 0.0 && t.delta_conf < 1.0)) throw ConfigError("[theory] delta_conf must lie in (0,1)");
    if (const auto l = f.get("theory", "lipschitz").value_or("auto"); l != "auto")
        t.lipschitz = typed(f, "theory", "lipschitz", parse_real);
    t.w1_mode = f.get("theory", "w1_mode").value_or("auto");
    if (t.w1_mode != "auto" && t.w1_mode != "exact" && t.w1_mode != "sliced")
        throw ConfigError("[theory] w1_mode must be auto, exact or sliced");
    t.metric.p = typed(f, "theory", "metric_norm", to_norm);
    t.metric.c = typed(f, "theory", "metric_c", parse_real);
    t.projections = typed(f, "theory", "projections", to_size);
    t.stat_multiplier = typed(f, "theory", "stat_multiplier", parse_real);
    t.n = typed(f, "theory", "n", to_size);
    t.magic_window = typed(f, "theory", "magic_window", to_size);
    t.magic_threshold = typed(f, "theory", "magic_threshold", parse_real);
    t.rademacher_draws = typed(f, "theory", "rademacher_draws", to_size);
    t.lipschitz_pairs = typed(f, "theory", "lipschitz_pairs", to_size);

    // timing
    c.timing.ce_epoch_seconds = typed(f, "timing", "ce_epoch_seconds", parse_real);
    c.timing.at_epoch_seconds = typed(f, "timing", "at_epoch_seconds", parse_real);
    c.timing.total_epochs = typed(f, "timing", "total_epochs", to_int);
    c.timing.validate();

    // sweep
    for (const auto& item : split(f.get("sweep", "ratios").value_or(""), ',')) {
        const auto slash = item.find('/');
        if (slash == std::string::npos) throw ConfigError("[sweep] ratios entries look like ce/at");
        c.ratios.emplace_back(typed(f, "sweep", "ratios", [&](const std::string&) { return to_int(trim(item.substr(0, slash))); }),
                              typed(f, "sweep", "ratios", [&](const std::string&) { return to_int(trim(item.substr(slash + 1))); }));
    }

    try {
        r.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("[regime] ") + e.what());
    }
    return c;
}

ExperimentConfig build_from_text(const std::string& text, const std::string& preset) {
    return build(ConfigFile::parse(text), preset);
}

}  // namespace aetlab::config
