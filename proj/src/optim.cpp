#include "aetlab/optim.hpp"

#include <cmath>
#include <numbers>

#include "aetlab/error.hpp"

namespace aetlab {

std::size_t param_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
}

std::vector<double> flatten_params(const ParamList& params) {
    std::vector<double> out;
    out.reserve(param_count(params));
    for (const auto& p : params) out.insert(out.end(), p.value.data.begin(), p.value.data.end());
    return out;
}

}  // namespace aetlab

namespace aetlab::optim {

AdamState::AdamState(AdamHyper h, const ParamList& params) : hyper(h) {
    for (const auto& p : params) {
        m.emplace_back(p.value.numel(), 0.0);
        v.emplace_back(p.value.numel(), 0.0);
    }
}

void AdamState::reset() {
    step = 0;
    for (auto& a : m) std::fill(a.begin(), a.end(), 0.0);
    for (auto& a : v) std::fill(a.begin(), a.end(), 0.0);
}

void adam_step(AdamState& state, ParamList& params, const std::vector<Tensor>& grads, double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw InvalidArgument("adam_step: gradients must cover all " + std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape != params[i].value.shape)
            throw ShapeError("adam_step: gradient for '" + params[i].name + "' has shape " +
                             shape_str(grads[i].shape) + ", parameter " + shape_str(params[i].value.shape));
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for '" + params[i].name + "'");
    }

    const AdamHyper& h = state.hyper;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].value.data;
        const auto& g = grads[i].data;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = g[j] + h.weight_decay * theta[j];
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + h.eps);
        }
    }
}

double cosine_lr(const CosineSchedule& s, double t) {
    if (!(t >= 0.0) || t > s.t_max)
        throw InvalidArgument("cosine_lr: epoch " + std::to_string(t) + " outside [0, " + std::to_string(s.t_max) +
                              "]");
    if (s.t_max == 0.0) return s.base_lr;
    if (t == s.t_max) return s.eta_min;
    return s.eta_min + (s.base_lr - s.eta_min) * (1.0 + std::cos(std::numbers::pi * t / s.t_max)) / 2.0;
}

}  // namespace aetlab::optim
