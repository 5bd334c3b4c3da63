#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aetlab/attacks.hpp"
#include "aetlab/models.hpp"
#include "aetlab/regimes.hpp"
#include "aetlab/theory.hpp"

namespace aetlab::config {

/// Sectioned key = value text. Lines starting with '#' or ';' are comments.
class ConfigFile {
public:
    static ConfigFile parse(const std::string& text, const std::string& origin = "<config>");
    static ConfigFile load(const std::string& path);

    /// Overlays `other` on top of this file.
    void merge(const ConfigFile& other);
    void set(const std::string& section, const std::string& key, const std::string& value);
    std::optional<std::string> get(const std::string& section, const std::string& key) const;

    /// Canonical text: sections and keys in sorted order.
    std::string dump() const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Parses a real, accepting fractions such as "8/255".
double parse_real(const std::string& text);
std::vector<std::size_t> parse_sizes(const std::string& text);
std::vector<double> parse_reals(const std::string& text);
std::vector<std::uint64_t> parse_seeds(const std::string& text);
bool parse_bool(const std::string& text);

enum class DatasetKind { Mnist, Cifar10, TwoGaussians, TwoMoons };

struct DataConfig {
    DatasetKind kind = DatasetKind::TwoGaussians;
    std::string path;
    std::size_t train_size = 0;  // 0 keeps every example
    std::size_t test_size = 0;
    std::size_t eval_size = 500;  // per-epoch evaluation subset; 0 uses the whole test split
    std::uint64_t subset_seed = 0;
    bool augment = false;
    data::SyntheticSpec synthetic;
};

struct RunConfig {
    std::vector<std::uint64_t> seeds{0};
    int checkpoint_every = 0;
    bool record_wall_time = false;
    bool final_eval = true;
    bool trace = true;
    std::size_t probe_size = 512;
    std::size_t cat_val_size = 512;
};

struct TheoryConfig {
    double delta_conf = 0.05;
    std::optional<double> lipschitz;  // empty: estimate from the trace
    std::string w1_mode = "auto";
    theory::InstanceMetric metric;
    std::size_t projections = 64;
    double stat_multiplier = 1.0;
    std::size_t n = 0;  // 0: probe size
    std::size_t magic_window = 5;
    double magic_threshold = 5.0;
    std::size_t rademacher_draws = 1000;
    std::size_t lipschitz_pairs = 2000;
};

struct TimingModel {
    double ce_epoch_seconds = 19.25;
    double at_epoch_seconds = 123.85;
    int total_epochs = 100;
    void validate() const;
};

struct ExperimentConfig {
    DataConfig data;
    models::ArchSpec arch;
    regimes::RegimeSpec regime;
    attacks::AttackSpec final_attack;
    RunConfig run;
    TheoryConfig theory;
    TimingModel timing;
    std::vector<std::pair<int, int>> ratios;
    /// Effective configuration (defaults + preset + file), canonical form.
    ConfigFile effective;

    std::uint64_t hash() const;
};

/// Built-in experiment presets ("synthetic", "mnist-desk", "cifar-desk").
ConfigFile experiment_preset(const std::string& name);
std::vector<std::string> experiment_preset_names();

/// Defaults, then `preset` (if any), then `file`. Unknown sections/keys and bad values raise ConfigError.
ExperimentConfig build(const ConfigFile& file, const std::string& preset = {});
ExperimentConfig build_from_text(const std::string& text, const std::string& preset = {});

std::uint64_t fnv1a(const std::string& s);

}  // namespace aetlab::config
