#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aetlab/tensor.hpp"

namespace aetlab::data {

enum class Split { Train, Test };

/// Images in [0,1] stored as one [n, channels, height, width] tensor (or [n, dim] for vector data).
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::Train;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    /// Shape of one example (images.shape without the leading axis).
    Shape example_shape() const;

    /// Throws InvalidArgument naming the first violated invariant.
    void validate() const;
};

Dataset subset(const Dataset& d, std::span<const std::size_t> indices);

/// First `per_class` examples of every class after a seeded shuffle, ordered by that shuffle.
Dataset stratified_subset(const Dataset& d, std::size_t per_class, std::uint64_t seed);

/// Splits `total` examples evenly over classes (remainder to the lowest classes) and calls stratified_subset.
Dataset stratified_subset_total(const Dataset& d, std::size_t total, std::uint64_t seed);

// ---- IDX --------------------------------------------------------------------

/// Decoded unsigned-byte IDX container.
struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> values;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_idx(const IdxArray& array);

/// Image stack (3-D IDX) scaled by 1/255 into [n,1,h,w].
Tensor idx_to_images(const IdxArray& array);
std::vector<int> idx_to_labels(const IdxArray& array);

Dataset load_mnist(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes, Split split);
/// Reads `<dir>/<prefix>-images-idx3-ubyte` and `<dir>/<prefix>-labels-idx1-ubyte`.
Dataset load_mnist_dir(const std::string& dir, const std::string& prefix, Split split);

std::vector<std::uint8_t> read_file(const std::string& path);

// ---- CIFAR-10 binary ----------------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;

Dataset parse_cifar10_bin(std::span<const std::uint8_t> bytes, Split split = Split::Train);
std::vector<std::uint8_t> write_cifar10_bin(const Dataset& d);

// ---- synthetic -----------------------------------------------------------------

enum class SyntheticKind { TwoGaussians, TwoMoons };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::TwoGaussians;
    std::size_t n_per_class = 100;
    std::size_t dim = 2;
    double separation = 4.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
};

/// Raw class-0 / class-1 means for two-gaussians, before the affine map into [0,1].
struct SyntheticFrame {
    double offset = 0.5;
    double scale = 1.0;  // unit raw distance maps to `scale` in [0,1] coordinates
};

SyntheticFrame synthetic_frame(const SyntheticSpec& spec);

/// Two balanced classes mapped affinely into [0,1]^dim (values beyond the frame are clamped).
/// Two-gaussians puts the class means at ∓separation/2 on the first axis.
Dataset gen_synthetic(const SyntheticSpec& spec);

// ---- augmentation ------------------------------------------------------------------

struct AugmentConfig {
    std::size_t pad = 4;
    std::size_t crop = 32;
    bool horizontal_flip = true;

    static AugmentConfig cifar() { return {4, 32, true}; }
    static AugmentConfig mnist() { return {2, 28, false}; }
    static AugmentConfig identity(std::size_t size) { return {0, size, false}; }
};

/// Zero-pads a [C,H,W] image by cfg.pad, crops cfg.crop×cfg.crop at (top, left), optionally mirrors.
Tensor augment_at(const Tensor& image, const AugmentConfig& cfg, std::size_t top, std::size_t left, bool flip);

/// Random crop offset and coin flip drawn from `rng`.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace aetlab::data
