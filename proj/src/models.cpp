#include "aetlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "aetlab/error.hpp"

namespace aetlab::models {

namespace {
constexpr std::size_t kEvalChunk = 256;

Tensor chunk_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    Shape s = x.shape;
    s[0] = end - begin;
    const auto n = x.row_size();
    return Tensor(s, std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(begin * n),
                                         x.data.begin() + static_cast<std::ptrdiff_t>(end * n)));
}

void append_rows(Tensor& dst, const Tensor& src) {
    if (dst.shape.empty()) {
        dst = src;
        return;
    }
    dst.shape[0] += src.dim(0);
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
}

ad::Var apply(ad::Tape& tape, const CompositeModel::Layer& layer, ad::Var h, const std::vector<ad::Var>& p) {
    using Kind = CompositeModel::Layer::Kind;
    switch (layer.kind) {
        case Kind::Dense: return ad::dense(tape, h, p[layer.weight], p[layer.bias]);
        case Kind::Conv: return ad::conv2d(tape, h, p[layer.weight], p[layer.bias]);
        case Kind::Relu: return ad::relu(tape, h);
        case Kind::AvgPool: return ad::avgpool2(tape, h);
        case Kind::Flatten: return ad::flatten(tape, h);
    }
    return h;
}
}  // namespace

const char* to_string(ArchKind k) { return k == ArchKind::Mlp ? "mlp" : "small_cnn"; }

ArchKind arch_kind_from_string(const std::string& s) {
    if (s == "mlp") return ArchKind::Mlp;
    if (s == "small_cnn") return ArchKind::SmallCnn;
    throw InvalidArgument("unknown architecture '" + s + "'");
}

void ArchSpec::validate() const {
    if (kind == ArchKind::Mlp) {
        if (widths.size() < 2) throw InvalidArgument("mlp needs at least input and output widths");
        for (auto w : widths)
            if (w == 0) throw InvalidArgument("mlp widths must be positive");
        if (widths.back() != num_classes) throw InvalidArgument("mlp final width must equal num_classes");
        if (input_shape != Shape{widths.front()}) throw InvalidArgument("mlp input shape must be [widths[0]]");
    } else {
        if (widths.size() != 2 || widths[0] == 0 || widths[1] == 0)
            throw InvalidArgument("small_cnn needs a two-entry positive channel plan");
        if (input_shape.size() != 3 || input_shape[0] == 0 || input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0 ||
            input_shape[1] == 0 || input_shape[2] == 0)
            throw InvalidArgument("small_cnn input must be [C,H,W] with H, W positive multiples of 4");
    }
    if (num_classes < 2) throw InvalidArgument("need at least two classes");
}

ArchSpec ArchSpec::mlp(std::vector<std::size_t> widths, std::uint64_t seed, Activation act) {
    ArchSpec s;
    s.kind = ArchKind::Mlp;
    s.activation = act;
    s.init_seed = seed;
    if (!widths.empty()) {
        s.num_classes = widths.back();
        s.input_shape = {widths.front()};
    }
    s.widths = std::move(widths);
    return s;
}

ArchSpec ArchSpec::small_cnn(Shape input_shape, std::size_t num_classes, std::uint64_t seed,
                             std::vector<std::size_t> channels) {
    ArchSpec s;
    s.kind = ArchKind::SmallCnn;
    s.widths = std::move(channels);
    s.num_classes = num_classes;
    s.input_shape = std::move(input_shape);
    s.init_seed = seed;
    return s;
}

CompositeModel build_model(const ArchSpec& spec) {
    spec.validate();
    CompositeModel m;
    m.arch = spec;
    std::mt19937_64 rng(spec.init_seed);
    using Kind = CompositeModel::Layer::Kind;

    auto add_param = [&](std::string name, Shape shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        if (fan_in > 0) {
            std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (double& v : t.data) v = gauss(rng);
        }
        m.params.push_back({std::move(name), std::move(t)});
        return m.params.size() - 1;
    };
    auto dense_layer = [&](const std::string& name, std::size_t in, std::size_t out) {
        const auto w = add_param(name + ".weight", {in, out}, in);
        const auto b = add_param(name + ".bias", {out}, 0);
        return CompositeModel::Layer{Kind::Dense, w, b};
    };

    if (spec.kind == ArchKind::Mlp) {
        const auto& w = spec.widths;
        for (std::size_t i = 0; i + 2 < w.size(); ++i) {
            m.feature_layers.push_back(dense_layer("dense" + std::to_string(i), w[i], w[i + 1]));
            if (spec.activation == Activation::Relu) m.feature_layers.push_back({Kind::Relu});
        }
        m.head_layers.push_back(dense_layer("head", w[w.size() - 2], w.back()));
    } else {
        const std::size_t C = spec.input_shape[0], H = spec.input_shape[1], W = spec.input_shape[2];
        const std::size_t c1 = spec.widths[0], c2 = spec.widths[1];
        const auto w1 = add_param("conv1.weight", {c1, C, 3, 3}, C * 9);
        const auto b1 = add_param("conv1.bias", {c1}, 0);
        const auto w2 = add_param("conv2.weight", {c2, c1, 3, 3}, c1 * 9);
        const auto b2 = add_param("conv2.bias", {c2}, 0);
        m.feature_layers = {{Kind::Conv, w1, b1}, {Kind::Relu},    {Kind::AvgPool}, {Kind::Conv, w2, b2},
                            {Kind::Relu},         {Kind::AvgPool}, {Kind::Flatten}};
        m.head_layers.push_back(dense_layer("head", c2 * (H / 4) * (W / 4), spec.num_classes));
    }
    return m;
}

std::size_t CompositeModel::feature_dim() const {
    if (arch.kind == ArchKind::Mlp) return arch.widths[arch.widths.size() - 2];
    return arch.widths[1] * (arch.input_shape[1] / 4) * (arch.input_shape[2] / 4);
}

Shape CompositeModel::batch_shape(std::size_t n) const {
    Shape s{n};
    s.insert(s.end(), arch.input_shape.begin(), arch.input_shape.end());
    return s;
}

CompositeModel::Recorded CompositeModel::record(ad::Tape& tape, ad::Var x, bool param_grads) const {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != arch.input_shape.size() + 1 ||
        !std::equal(arch.input_shape.begin(), arch.input_shape.end(), xv.shape.begin() + 1))
        throw ShapeError("model expects input " + shape_str(batch_shape(0)) + " (any batch), got " +
                         shape_str(xv.shape));
    Recorded r;
    for (const auto& p : params) r.params.push_back(tape.param(p.value, p.name, param_grads));
    ad::Var h = x;
    for (const auto& layer : feature_layers) h = apply(tape, layer, h, r.params);
    r.features = h;
    for (const auto& layer : head_layers) h = apply(tape, layer, h, r.params);
    r.logits = h;
    return r;
}

ad::Var CompositeModel::record_head(ad::Tape& tape, ad::Var feats) const {
    std::vector<ad::Var> p;
    for (const auto& prm : params) p.push_back(tape.param(prm.value, prm.name, false));
    ad::Var h = feats;
    for (const auto& layer : head_layers) h = apply(tape, layer, h, p);
    return h;
}

ForwardResult forward(const CompositeModel& model, const Tensor& x, bool tap_features) {
    ForwardResult out;
    Tensor feats_all;
    const std::size_t n = x.rank() ? x.dim(0) : 0;
    for (std::size_t b = 0; b < n; b += kEvalChunk) {
        ad::Tape tape;
        const auto xin = tape.input(chunk_rows(x, b, std::min(n, b + kEvalChunk)));
        const auto rec = model.record(tape, xin, false);
        append_rows(out.logits, tape.value(rec.logits));
        if (tap_features) append_rows(feats_all, tape.value(rec.features));
    }
    if (n == 0) {
        ad::Tape tape;
        const auto rec = model.record(tape, tape.input(x), false);
        out.logits = tape.value(rec.logits);
        feats_all = tape.value(rec.features);
    }
    if (tap_features) out.features = std::move(feats_all);
    return out;
}

Tensor logits(const CompositeModel& model, const Tensor& x) { return forward(model, x, false).logits; }

Tensor features(const CompositeModel& model, const Tensor& x) { return *forward(model, x, true).features; }

Tensor head(const CompositeModel& model, const Tensor& feats) {
    if (feats.rank() != 2 || feats.dim(1) != model.feature_dim())
        throw ShapeError("head expects [N×" + std::to_string(model.feature_dim()) + "], got " + shape_str(feats.shape));
    Tensor out;
    for (std::size_t b = 0; b < feats.dim(0); b += kEvalChunk) {
        ad::Tape tape;
        const auto in = tape.input(chunk_rows(feats, b, std::min(feats.dim(0), b + kEvalChunk)));
        append_rows(out, tape.value(model.record_head(tape, in)));
    }
    return out;
}

std::vector<int> predict(const CompositeModel& model, const Tensor& x) {
    const Tensor z = logits(model, x);
    const std::size_t n = z.dim(0), k = z.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = z.data.data() + i * k;
        out[i] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

LossGrads cross_entropy_grads(const CompositeModel& model, const Tensor& x, std::span<const int> labels) {
    ad::Tape tape;
    const auto xin = tape.input(x);
    const auto rec = model.record(tape, xin, true);
    const auto loss = ad::softmax_cross_entropy(tape, rec.logits, std::vector<int>(labels.begin(), labels.end()));
    const auto g = tape.backward(loss);
    LossGrads out;
    out.loss = tape.value(loss).item();
    for (auto v : rec.params) out.grads.push_back(g[v]);
    return out;
}

Tensor input_gradient(const CompositeModel& model, const Tensor& x, std::span<const int> labels) {
    Tensor out;
    const std::size_t n = x.dim(0);
    for (std::size_t b = 0; b < n; b += kEvalChunk) {
        const std::size_t e = std::min(n, b + kEvalChunk);
        ad::Tape tape;
        const auto xin = tape.input(chunk_rows(x, b, e), true);
        const auto rec = model.record(tape, xin, false);
        const auto loss = ad::softmax_cross_entropy(
            tape, rec.logits, std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(b),
                                               labels.begin() + static_cast<std::ptrdiff_t>(e)),
            ad::Reduction::Sum);
        append_rows(out, tape.backward(loss)[xin]);
    }
    if (n == 0) out = x;
    return out;
}

// ---- Lipschitz ----------------------------------------------------------------

namespace {

double pair_ratio(std::span<const double> a, std::span<const double> b, std::span<const double> fa,
                  std::span<const double> fb, Norm p, bool& ok) {
    const double den = distance(a, b, p);
    ok = den > 0.0;
    return ok ? distance(fa, fb, p) / den : 0.0;
}

// inputs/outputs hold the samples, followed by their partners when `with_partners`.
double estimate_from_outputs(std::span<const std::vector<double>> in, std::span<const std::vector<double>> out,
                             std::size_t n, bool with_partners, const LipschitzOptions& opts) {
    if (n < 2 && !with_partners) throw InvalidArgument("lipschitz_estimate needs at least 2 samples");
    std::mt19937_64 rng(opts.seed);
    double best = 0.0;
    bool any = false;
    std::size_t budget = opts.pair_budget;

    if (with_partners) {
        const std::size_t share = std::min(n, budget / 2 > 0 ? budget / 2 : 1);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (share < n) std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t t = 0; t < share; ++t) {
            const auto i = idx[t];
            bool ok = false;
            const double r = pair_ratio(in[i], in[n + i], out[i], out[n + i], opts.norm, ok);
            if (ok) {
                best = std::max(best, r);
                any = true;
            }
        }
        budget -= share;
    }

    if (n >= 2) {
        const std::size_t all_pairs = n * (n - 1) / 2;
        if (budget >= all_pairs) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) {
                    bool ok = false;
                    const double r = pair_ratio(in[i], in[j], out[i], out[j], opts.norm, ok);
                    if (ok) {
                        best = std::max(best, r);
                        any = true;
                    }
                }
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t t = 0; t < budget; ++t) {
                const auto i = pick(rng);
                const auto j = pick(rng);
                if (i == j) continue;
                bool ok = false;
                const double r = pair_ratio(in[i], in[j], out[i], out[j], opts.norm, ok);
                if (ok) {
                    best = std::max(best, r);
                    any = true;
                }
            }
        }
    }
    if (!any) throw InvalidArgument("lipschitz_estimate: every sampled pair has zero input distance");
    return best;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        const auto r = t.row(i);
        out.emplace_back(r.begin(), r.end());
    }
    return out;
}

}  // namespace

double lipschitz_estimate(const VectorFn& f, std::span<const std::vector<double>> samples,
                          const LipschitzOptions& opts, std::span<const std::vector<double>> partners) {
    const bool with_partners = !partners.empty();
    if (with_partners && partners.size() != samples.size())
        throw InvalidArgument("lipschitz_estimate: partners must pair one-to-one with samples");
    std::vector<std::vector<double>> in(samples.begin(), samples.end());
    in.insert(in.end(), partners.begin(), partners.end());
    std::vector<std::vector<double>> out;
    out.reserve(in.size());
    for (const auto& x : in) out.push_back(f(x));
    return estimate_from_outputs(in, out, samples.size(), with_partners, opts);
}

double lipschitz_estimate_outputs(std::span<const std::vector<double>> inputs,
                                  std::span<const std::vector<double>> outputs, std::size_t n_samples,
                                  const LipschitzOptions& opts) {
    if (inputs.size() != outputs.size()) throw InvalidArgument("lipschitz_estimate: inputs and outputs differ in count");
    const bool with_partners = inputs.size() > n_samples;
    if (with_partners && inputs.size() != 2 * n_samples)
        throw InvalidArgument("lipschitz_estimate: partners must pair one-to-one with samples");
    return estimate_from_outputs(inputs, outputs, n_samples, with_partners, opts);
}

double lipschitz_estimate(const CompositeModel& model, const Tensor& samples, const LipschitzOptions& opts,
                          const Tensor* partners) {
    auto in = rows_of(samples);
    auto out = rows_of(features(model, samples));
    const bool with_partners = partners != nullptr;
    if (with_partners) {
        if (partners->shape != samples.shape)
            throw InvalidArgument("lipschitz_estimate: partners must match the sample shape");
        auto pin = rows_of(*partners);
        auto pout = rows_of(features(model, *partners));
        in.insert(in.end(), pin.begin(), pin.end());
        out.insert(out.end(), pout.begin(), pout.end());
    }
    return estimate_from_outputs(in, out, samples.dim(0), with_partners, opts);
}

}  // namespace aetlab::models
