#include "aetlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "aetlab/error.hpp"

namespace aetlab::data {

Shape Dataset::example_shape() const {
    if (images.rank() == 0) return {};
    return Shape(images.shape.begin() + 1, images.shape.end());
}

void Dataset::validate() const {
    if (images.rank() < 2) throw InvalidArgument("dataset images need a batch axis");
    if (images.dim(0) != labels.size())
        throw InvalidArgument("dataset has " + std::to_string(images.dim(0)) + " images but " +
                              std::to_string(labels.size()) + " labels");
    for (double v : images.data)
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("dataset pixel outside [0,1]");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw InvalidArgument("dataset label " + std::to_string(y) + " out of range");
}

Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
    Dataset out;
    out.images = gather_rows(d.images, indices);
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(d.labels.at(i));
    out.num_classes = d.num_classes;
    out.split = d.split;
    return out;
}

Dataset stratified_subset(const Dataset& d, std::size_t per_class, std::uint64_t seed) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(d.num_classes), per_class);
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> picked;
    for (auto i : order) {
        auto& left = counts[static_cast<std::size_t>(d.labels[i])];
        if (left > 0) {
            picked.push_back(i);
            --left;
        }
    }
    return subset(d, picked);
}

Dataset stratified_subset_total(const Dataset& d, std::size_t total, std::uint64_t seed) {
    if (d.num_classes <= 0) throw InvalidArgument("stratified subset of a dataset without classes");
    const auto k = static_cast<std::size_t>(d.num_classes);
    std::vector<std::size_t> counts(k, total / k);
    for (std::size_t c = 0; c < total % k; ++c) counts[c] += 1;
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> picked;
    for (auto i : order) {
        auto& left = counts[static_cast<std::size_t>(d.labels[i])];
        if (left > 0) {
            picked.push_back(i);
            --left;
        }
    }
    return subset(d, picked);
}

// ---- IDX --------------------------------------------------------------------

namespace {
std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}
void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}
}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw ParseError(ParseErrorKind::Truncated, "IDX header shorter than 4 bytes");
    if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08)
        throw ParseError(ParseErrorKind::BadMagic, "expected unsigned-byte IDX magic 00 00 08 xx");
    const std::size_t ndims = bytes[3];
    if (ndims == 0) throw ParseError(ParseErrorKind::BadMagic, "IDX with zero dimensions");
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header) throw ParseError(ParseErrorKind::Truncated, "IDX dimension block cut short");
    IdxArray out;
    std::uint64_t total = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        out.dims.push_back(read_be32(bytes, 4 + 4 * i));
        total *= out.dims.back();
        if (total > (std::uint64_t{1} << 40)) throw ParseError(ParseErrorKind::DimensionMismatch, "IDX too large");
    }
    const std::size_t payload = bytes.size() - header;
    if (payload < total)
        throw ParseError(ParseErrorKind::Truncated, "IDX payload has " + std::to_string(payload) + " bytes, dims need " +
                                                        std::to_string(total));
    if (payload > total)
        throw ParseError(ParseErrorKind::DimensionMismatch,
                         "IDX payload has " + std::to_string(payload - total) + " trailing bytes");
    out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

std::vector<std::uint8_t> write_idx(const IdxArray& array) {
    std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
    for (auto d : array.dims) write_be32(out, d);
    out.insert(out.end(), array.values.begin(), array.values.end());
    return out;
}

Tensor idx_to_images(const IdxArray& a) {
    if (a.dims.size() != 3)
        throw ParseError(ParseErrorKind::DimensionMismatch,
                         "image IDX needs 3 dimensions, got " + std::to_string(a.dims.size()));
    Tensor t({a.dims[0], 1, a.dims[1], a.dims[2]});
    for (std::size_t i = 0; i < a.values.size(); ++i) t.data[i] = a.values[i] / 255.0;
    return t;
}

std::vector<int> idx_to_labels(const IdxArray& a) {
    if (a.dims.size() != 1)
        throw ParseError(ParseErrorKind::DimensionMismatch,
                         "label IDX needs 1 dimension, got " + std::to_string(a.dims.size()));
    return std::vector<int>(a.values.begin(), a.values.end());
}

Dataset load_mnist(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes, Split split) {
    const IdxArray imgs = parse_idx(image_bytes);
    const IdxArray lbls = parse_idx(label_bytes);
    Dataset d;
    d.images = idx_to_images(imgs);
    d.labels = idx_to_labels(lbls);
    d.num_classes = 10;
    d.split = split;
    if (d.images.dim(0) != d.labels.size())
        throw ParseError(ParseErrorKind::DimensionMismatch, "image and label counts differ");
    for (int y : d.labels)
        if (y > 9) throw ParseError(ParseErrorKind::BadLabel, "MNIST label " + std::to_string(y));
    return d;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset load_mnist_dir(const std::string& dir, const std::string& prefix, Split split) {
    const auto images = read_file(dir + "/" + prefix + "-images-idx3-ubyte");
    const auto labels = read_file(dir + "/" + prefix + "-labels-idx1-ubyte");
    return load_mnist(images, labels, split);
}

// ---- CIFAR-10 -------------------------------------------------------------------

Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes, Split split) {
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
        throw ParseError(ParseErrorKind::BadLength, "CIFAR-10 binary length " + std::to_string(bytes.size()) +
                                                        " is not a positive multiple of 3073");
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    Dataset d;
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(n);
    d.num_classes = 10;
    d.split = split;
    for (std::size_t i = 0; i < n; ++i) {
        const auto* rec = bytes.data() + i * kCifarRecordBytes;
        if (rec[0] >= 10) throw ParseError(ParseErrorKind::BadLabel, "CIFAR-10 label " + std::to_string(rec[0]));
        d.labels[i] = rec[0];
        double* img = d.images.data.data() + i * 3072;
        for (std::size_t j = 0; j < 3072; ++j) img[j] = rec[1 + j] / 255.0;
    }
    return d;
}

std::vector<std::uint8_t> write_cifar10_bin(const Dataset& d) {
    if (d.example_shape() != Shape{3, 32, 32}) throw ShapeError("CIFAR-10 records are 3×32×32");
    std::vector<std::uint8_t> out;
    out.reserve(d.size() * kCifarRecordBytes);
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.push_back(static_cast<std::uint8_t>(d.labels[i]));
        for (double v : d.images.row(i)) out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    return out;
}

// ---- synthetic --------------------------------------------------------------------

SyntheticFrame synthetic_frame(const SyntheticSpec& spec) {
    double half_extent = 0.0;
    if (spec.kind == SyntheticKind::TwoGaussians)
        half_extent = spec.separation / 2.0 + 4.0 * spec.noise;
    else
        half_extent = 1.5 + spec.separation / 2.0 + 4.0 * spec.noise;
    if (half_extent <= 0.0) half_extent = 1.0;
    return SyntheticFrame{0.5, 0.5 / half_extent};
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.n_per_class < 1) throw InvalidArgument("synthetic: n_per_class must be >= 1");
    if (spec.noise < 0.0) throw InvalidArgument("synthetic: noise must be >= 0");
    if (spec.dim < 1 || (spec.kind == SyntheticKind::TwoMoons && spec.dim < 2))
        throw InvalidArgument("synthetic: dimension too small");
    const auto frame = synthetic_frame(spec);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t n = 2 * spec.n_per_class;
    Dataset d;
    d.images = Tensor({n, spec.dim});
    d.labels.resize(n);
    d.num_classes = 2;
    std::vector<double> raw(spec.dim);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        std::fill(raw.begin(), raw.end(), 0.0);
        if (spec.kind == SyntheticKind::TwoGaussians) {
            raw[0] = y == 0 ? -spec.separation / 2.0 : spec.separation / 2.0;
        } else {
            const double theta = std::numbers::pi * unit(rng);
            const double shift = spec.separation / 2.0;
            if (y == 0) {
                raw[0] = std::cos(theta) - 0.5;
                raw[1] = std::sin(theta) - 0.25 + shift;
            } else {
                raw[0] = 0.5 - std::cos(theta);
                raw[1] = 0.25 - std::sin(theta) - shift;
            }
        }
        if (spec.noise > 0.0)
            for (auto& v : raw) v += spec.noise * gauss(rng);
        for (std::size_t j = 0; j < spec.dim; ++j)
            d.images.data[i * spec.dim + j] = std::clamp(frame.offset + frame.scale * raw[j], 0.0, 1.0);
        d.labels[i] = y;
    }
    return d;
}

// ---- augmentation -------------------------------------------------------------------

Tensor augment_at(const Tensor& image, const AugmentConfig& cfg, std::size_t top, std::size_t left, bool flip) {
    if (image.rank() != 3) throw ShapeError("augment expects [C,H,W], got " + shape_str(image.shape));
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const std::size_t ph = H + 2 * cfg.pad, pw = W + 2 * cfg.pad;
    if (cfg.crop > ph || cfg.crop > pw)
        throw InvalidArgument("augment: crop " + std::to_string(cfg.crop) + " larger than padded image");
    if (top + cfg.crop > ph || left + cfg.crop > pw) throw InvalidArgument("augment: crop offset out of range");
    Tensor out({C, cfg.crop, cfg.crop});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < cfg.crop; ++i)
            for (std::size_t j = 0; j < cfg.crop; ++j) {
                const std::size_t pj = flip ? cfg.crop - 1 - j : j;
                const auto sy = static_cast<std::ptrdiff_t>(top + i) - static_cast<std::ptrdiff_t>(cfg.pad);
                const auto sx = static_cast<std::ptrdiff_t>(left + pj) - static_cast<std::ptrdiff_t>(cfg.pad);
                double v = 0.0;
                if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) && sx < static_cast<std::ptrdiff_t>(W))
                    v = image.data[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
                out.data[(c * cfg.crop + i) * cfg.crop + j] = v;
            }
    return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (image.rank() != 3) throw ShapeError("augment expects [C,H,W], got " + shape_str(image.shape));
    const std::size_t ph = image.dim(1) + 2 * cfg.pad, pw = image.dim(2) + 2 * cfg.pad;
    if (cfg.crop > ph || cfg.crop > pw)
        throw InvalidArgument("augment: crop " + std::to_string(cfg.crop) + " larger than padded image");
    std::uniform_int_distribution<std::size_t> top_dist(0, ph - cfg.crop), left_dist(0, pw - cfg.crop);
    const std::size_t top = top_dist(rng);
    const std::size_t left = left_dist(rng);
    bool flip = false;
    if (cfg.horizontal_flip) flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    return augment_at(image, cfg, top, left, flip);
}

}  // namespace aetlab::data
