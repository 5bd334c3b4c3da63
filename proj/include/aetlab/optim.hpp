#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aetlab/tensor.hpp"

namespace aetlab {

struct Param {
    std::string name;
    Tensor value;
};

using ParamList = std::vector<Param>;

std::size_t param_count(const ParamList& params);
/// All parameter values concatenated in list order.
std::vector<double> flatten_params(const ParamList& params);

}  // namespace aetlab

namespace aetlab::optim {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Classical L2 term: weight_decay·θ is added to the gradient before the moment updates.
    double weight_decay = 5e-4;
};

struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    AdamState(AdamHyper h, const ParamList& params);

    /// Zeroes the moments and the step counter.
    void reset();
};

/// One bias-corrected Adam update. `grads` is aligned with `params`.
/// A non-finite gradient aborts before any parameter changes (NumericError naming the parameter).
void adam_step(AdamState& state, ParamList& params, const std::vector<Tensor>& grads, double lr);

struct CosineSchedule {
    double base_lr = 1e-3;
    double eta_min = 0.0;
    double t_max = 100.0;
};

/// eta_min + (base_lr − eta_min)·(1 + cos(π·t/t_max))/2 for 0 ≤ t ≤ t_max.
double cosine_lr(const CosineSchedule& schedule, double t);

}  // namespace aetlab::optim
