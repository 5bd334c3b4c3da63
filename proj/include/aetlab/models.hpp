#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aetlab/autodiff.hpp"
#include "aetlab/norms.hpp"
#include "aetlab/optim.hpp"
#include "aetlab/tensor.hpp"

namespace aetlab::models {

enum class ArchKind { Mlp, SmallCnn };
enum class Activation { Relu, Identity };

const char* to_string(ArchKind k);
ArchKind arch_kind_from_string(const std::string& s);

struct ArchSpec {
    ArchKind kind = ArchKind::Mlp;
    /// mlp: layer widths [in, hidden..., num_classes]; small_cnn: channel plan [c1, c2].
    std::vector<std::size_t> widths;
    Activation activation = Activation::Relu;
    std::size_t num_classes = 2;
    /// Per-example input shape: [dim] for mlp, [C,H,W] for small_cnn.
    Shape input_shape;
    std::uint64_t init_seed = 0;

    void validate() const;

    static ArchSpec mlp(std::vector<std::size_t> widths, std::uint64_t seed = 0,
                        Activation act = Activation::Relu);
    static ArchSpec small_cnn(Shape input_shape, std::size_t num_classes, std::uint64_t seed = 0,
                              std::vector<std::size_t> channels = {16, 32});

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// h = g ∘ f. `f` is every layer up to the flattened pre-head activation, `g` the final dense layer.
class CompositeModel {
public:
    struct Layer {
        enum class Kind { Dense, Conv, Relu, AvgPool, Flatten } kind;
        std::size_t weight = 0;  // index into params
        std::size_t bias = 0;
    };

    /// Vars produced when a model is recorded on a tape.
    struct Recorded {
        std::vector<ad::Var> params;  // aligned with CompositeModel::params
        ad::Var features;
        ad::Var logits;
    };

    ArchSpec arch;
    ParamList params;
    std::vector<Layer> feature_layers;
    std::vector<Layer> head_layers;

    /// Records h(x) on `tape`; parameter leaves require grad when `param_grads`.
    Recorded record(ad::Tape& tape, ad::Var x, bool param_grads) const;
    /// Records g alone on a feature batch.
    ad::Var record_head(ad::Tape& tape, ad::Var features) const;

    std::size_t feature_dim() const;
    Shape batch_shape(std::size_t n) const;
};

CompositeModel build_model(const ArchSpec& spec);

struct ForwardResult {
    Tensor logits;
    std::optional<Tensor> features;
};

/// Batched forward in chunks; when tapped, logits are g applied to the returned features.
ForwardResult forward(const CompositeModel& model, const Tensor& x, bool tap_features = false);
Tensor logits(const CompositeModel& model, const Tensor& x);
Tensor features(const CompositeModel& model, const Tensor& x);
Tensor head(const CompositeModel& model, const Tensor& features);

std::vector<int> predict(const CompositeModel& model, const Tensor& x);

struct LossGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  // aligned with params
};

/// Mean cross-entropy and its parameter gradients on one batch.
LossGrads cross_entropy_grads(const CompositeModel& model, const Tensor& x, std::span<const int> labels);

/// ∇x Σ_i CE(h(x_i), y_i); each row is the gradient of that example's own loss.
Tensor input_gradient(const CompositeModel& model, const Tensor& x, std::span<const int> labels);

// ---- Lipschitz estimation ------------------------------------------------------

struct LipschitzOptions {
    std::size_t pair_budget = 10000;
    Norm norm = Norm::L2;
    std::uint64_t seed = 0;
};

using VectorFn = std::function<std::vector<double>(std::span<const double>)>;

/// max ||f(a)−f(b)|| / ||a−b|| over sampled pairs: all pairs when the budget allows, else seeded
/// random pairs. When `partners` is given, half the budget goes to (samples[i], partners[i]) pairs.
/// The result is a lower bound on the true constant. Throws if every pair is degenerate.
double lipschitz_estimate(const VectorFn& f, std::span<const std::vector<double>> samples,
                          const LipschitzOptions& opts, std::span<const std::vector<double>> partners = {});

/// Same estimate from precomputed outputs; `inputs` holds the samples, optionally followed by one partner each.
double lipschitz_estimate_outputs(std::span<const std::vector<double>> inputs,
                                  std::span<const std::vector<double>> outputs, std::size_t n_samples,
                                  const LipschitzOptions& opts);

/// Same estimate for the model's feature extractor, evaluated in batches.
double lipschitz_estimate(const CompositeModel& model, const Tensor& samples, const LipschitzOptions& opts,
                          const Tensor* partners = nullptr);

}  // namespace aetlab::models
