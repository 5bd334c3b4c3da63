#include <doctest.h>

#include <array>
#include <cmath>

#include "aetlab/data.hpp"
#include "aetlab/error.hpp"
#include "support.hpp"

using namespace aetlab;
using namespace aetlab::data;

namespace {

ParseErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ParseError& e) {
        return e.kind();
    }
    FAIL("expected a ParseError");
    return ParseErrorKind::BadFormat;
}

// Straight-line IDX reader written from the format description, used as an oracle.
struct RefIdx {
    std::vector<std::uint32_t> dims;
    std::vector<double> pixels;
};
RefIdx ref_read_idx(const std::vector<std::uint8_t>& b) {
    RefIdx r;
    const int nd = b[3];
    std::size_t pos = 4, count = 1;
    for (int i = 0; i < nd; ++i) {
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v = v * 256 + b[pos++];
        r.dims.push_back(v);
        count *= v;
    }
    for (std::size_t i = 0; i < count; ++i) r.pixels.push_back(b[pos + i] / 255.0);
    return r;
}

std::vector<std::uint8_t> random_bytes(std::size_t n, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, 255);
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = static_cast<std::uint8_t>(u(rng));
    return v;
}

std::vector<std::uint8_t> cifar_record(int label, std::uint8_t pixel) {
    std::vector<std::uint8_t> r(kCifarRecordBytes, pixel);
    r[0] = static_cast<std::uint8_t>(label);
    return r;
}

}  // namespace

TEST_CASE("IDX: random 3x28x28 stack survives write then parse") {
    std::mt19937_64 rng(4);
    IdxArray a{{3, 28, 28}, random_bytes(3 * 28 * 28, rng)};
    const auto back = parse_idx(write_idx(a));
    CHECK(back.dims == a.dims);
    CHECK(back.values == a.values);
}

TEST_CASE("IDX: 2x2x2 example agrees with an independent reader") {
    const std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 102, 153, 204, 255, 1, 254};
    const auto parsed = parse_idx(bytes);
    const auto images = idx_to_images(parsed);
    const auto ref = ref_read_idx(bytes);
    CHECK(images.shape == Shape{2, 1, 2, 2});
    CHECK(ref.dims == std::vector<std::uint32_t>{2, 2, 2});
    REQUIRE(images.numel() == ref.pixels.size());
    for (std::size_t i = 0; i < ref.pixels.size(); ++i) CHECK(images.data[i] == ref.pixels[i]);
    CHECK(images.data[5] == 1.0);
}

TEST_CASE("IDX: failures carry distinct error kinds") {
    const std::vector<std::uint8_t> good{0, 0, 8, 1, 0, 0, 0, 3, 7, 8, 9};
    auto short_payload = good;
    short_payload.pop_back();
    auto long_payload = good;
    long_payload.push_back(1);
    auto bad_magic = good;
    bad_magic[2] = 0x09;
    CHECK(kind_of([&] { parse_idx(short_payload); }) == ParseErrorKind::Truncated);
    CHECK(kind_of([&] { parse_idx(long_payload); }) == ParseErrorKind::DimensionMismatch);
    CHECK(kind_of([&] { parse_idx(bad_magic); }) == ParseErrorKind::BadMagic);
    CHECK(kind_of([&] { parse_idx(std::vector<std::uint8_t>{0, 0}); }) == ParseErrorKind::Truncated);
    CHECK(kind_of([&] { idx_to_images(parse_idx(good)); }) == ParseErrorKind::DimensionMismatch);

    // 2 images against 3 labels
    const IdxArray imgs{{2, 2, 2}, std::vector<std::uint8_t>(8, 0)};
    CHECK(kind_of([&] { load_mnist(write_idx(imgs), good, Split::Train); }) == ParseErrorKind::DimensionMismatch);
    const IdxArray labels{{2}, {3, 12}};
    CHECK(kind_of([&] { load_mnist(write_idx(imgs), write_idx(labels), Split::Train); }) == ParseErrorKind::BadLabel);
}

TEST_CASE("CIFAR-10: constant record, round trip and malformed inputs") {
    const auto one = parse_cifar10_bin(cifar_record(7, 255));
    REQUIRE(one.size() == 1);
    CHECK(one.labels[0] == 7);
    CHECK(one.images.shape == Shape{1, 3, 32, 32});
    for (double v : one.images.data) CHECK(v == 1.0);

    std::mt19937_64 rng(6);
    auto two = random_bytes(2 * kCifarRecordBytes, rng);
    two[0] = 3;
    two[kCifarRecordBytes] = 9;
    CHECK(write_cifar10_bin(parse_cifar10_bin(two)) == two);

    CHECK(kind_of([] { parse_cifar10_bin(std::vector<std::uint8_t>(3072, 0)); }) == ParseErrorKind::BadLength);
    CHECK(kind_of([] { parse_cifar10_bin(std::vector<std::uint8_t>{}); }) == ParseErrorKind::BadLength);
    CHECK(kind_of([] { parse_cifar10_bin(cifar_record(10, 0)); }) == ParseErrorKind::BadLabel);
}

TEST_CASE("CIFAR-10: channel-major layout, R then G then B") {
    auto rec = cifar_record(1, 0);
    rec[1] = 255;                // R(0,0)
    rec[1 + 1024 + 33] = 255;    // G(1,1)
    rec[1 + 2048 + 1023] = 255;  // B(31,31)
    const auto d = parse_cifar10_bin(rec);
    double total = 0.0;
    for (double v : d.images.data) total += v;
    CHECK(total == 3.0);
    CHECK(d.images.data[0] == 1.0);
    CHECK(d.images.data[1024 + 32 + 1] == 1.0);
    CHECK(d.images.data[2048 + 31 * 32 + 31] == 1.0);
}

TEST_CASE("loaders on random byte streams either succeed validly or raise typed errors") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> len(0, 64);
    int ok = 0;
    for (int trial = 0; trial < 3000; ++trial) {
        auto bytes = random_bytes(len(rng), rng);
        // bias half the streams towards a plausible header so the deeper paths are reached
        if (trial % 2 == 0 && bytes.size() >= 4) {
            bytes[0] = bytes[1] = 0;
            bytes[2] = 8;
            bytes[3] = static_cast<std::uint8_t>(1 + bytes[3] % 3);
            for (std::size_t i = 4; i < std::min<std::size_t>(bytes.size(), 16); ++i)
                if (i % 4 != 3) bytes[i] = 0;
                else bytes[i] %= 4;
        }
        try {
            const auto a = parse_idx(bytes);
            std::size_t n = 1;
            for (auto d : a.dims) n *= d;
            CHECK(a.values.size() == n);
            if (a.dims.size() == 3) {
                const auto img = idx_to_images(a);
                for (double v : img.data) CHECK((v >= 0.0 && v <= 1.0));
            }
            ++ok;
        } catch (const ParseError&) {
        }
    }
    CHECK(ok > 0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 3)(rng) * kCifarRecordBytes +
                              (trial % 3 == 0 ? std::uniform_int_distribution<std::size_t>(0, 5)(rng) : 0);
        auto bytes = random_bytes(n, rng);
        for (std::size_t r = 0; r + kCifarRecordBytes <= bytes.size(); r += kCifarRecordBytes)
            if (trial % 2 == 0) bytes[r] %= 10;
        try {
            parse_cifar10_bin(bytes).validate();
        } catch (const ParseError&) {
        }
    }
}

TEST_CASE("synthetic: determinism, balance, range and noise-free means") {
    SyntheticSpec s;
    s.n_per_class = 40;
    s.seed = 99;
    for (auto kind : {SyntheticKind::TwoGaussians, SyntheticKind::TwoMoons}) {
        s.kind = kind;
        const auto a = gen_synthetic(s), b = gen_synthetic(s);
        CHECK(a.images == b.images);
        CHECK(a.labels == b.labels);
        CHECK(a.size() == 80);
        CHECK(std::count(a.labels.begin(), a.labels.end(), 0) == 40);
        CHECK_NOTHROW(a.validate());
    }
    s.kind = SyntheticKind::TwoGaussians;
    s.noise = 0.0;
    s.dim = 3;
    const auto d = gen_synthetic(s);
    const auto f = synthetic_frame(s);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double sign = d.labels[i] == 0 ? -1.0 : 1.0;
        CHECK(d.images.data[i * 3] == doctest::Approx(f.offset + sign * f.scale * s.separation / 2).epsilon(1e-15));
        CHECK(d.images.data[i * 3 + 1] == 0.5);
        CHECK(d.images.data[i * 3 + 2] == 0.5);
    }
    s.noise = -1.0;
    CHECK_THROWS_AS(gen_synthetic(s), InvalidArgument);
    s.noise = 1.0;
    s.n_per_class = 0;
    CHECK_THROWS_AS(gen_synthetic(s), InvalidArgument);
}

TEST_CASE("synthetic: well separated gaussians are linearly separable (LDA)") {
    SyntheticSpec s;
    s.separation = 10.0;
    s.noise = 0.01;
    s.n_per_class = 200;
    s.seed = 5;
    const auto d = gen_synthetic(s);
    // class means and pooled 2x2 covariance
    std::array<std::array<double, 2>, 2> mu{};
    for (std::size_t i = 0; i < d.size(); ++i)
        for (int j = 0; j < 2; ++j) mu[d.labels[i]][j] += d.images.data[i * 2 + j] / 200.0;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double dx = d.images.data[i * 2] - mu[d.labels[i]][0], dy = d.images.data[i * 2 + 1] - mu[d.labels[i]][1];
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    const double det = sxx * syy - sxy * sxy;
    const double mx = mu[1][0] - mu[0][0], my = mu[1][1] - mu[0][1];
    const double wx = (syy * mx - sxy * my) / det, wy = (-sxy * mx + sxx * my) / det;
    const double thr = wx * (mu[0][0] + mu[1][0]) / 2 + wy * (mu[0][1] + mu[1][1]) / 2;
    int correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double score = wx * d.images.data[i * 2] + wy * d.images.data[i * 2 + 1];
        correct += (score > thr) == (d.labels[i] == 1);
    }
    CHECK(correct == 400);
}

TEST_CASE("stratified subsets are seeded, balanced and drawn from the source") {
    SyntheticSpec s;
    s.n_per_class = 30;
    const auto d = gen_synthetic(s);
    const auto a = stratified_subset(d, 7, 11), b = stratified_subset(d, 7, 11), c = stratified_subset(d, 7, 12);
    CHECK(a.images == b.images);
    CHECK_FALSE(a.images == c.images);
    CHECK(a.size() == 14);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 7);
    const auto t = stratified_subset_total(d, 15, 3);
    CHECK(t.size() == 15);
    CHECK(std::count(t.labels.begin(), t.labels.end(), 0) == 8);
}

TEST_CASE("augment: identity, flip involution and zero padding band") {
    std::mt19937_64 rng(10);
    const auto img = testing::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    CHECK(augment_at(img, AugmentConfig::identity(32), 0, 0, false) == img);
    std::mt19937_64 r2(1);
    CHECK(augment(img, AugmentConfig::identity(32), r2) == img);

    const AugmentConfig flip_only{0, 32, true};
    const auto once = augment_at(img, flip_only, 0, 0, true);
    CHECK_FALSE(once == img);
    CHECK(augment_at(once, flip_only, 0, 0, true) == img);

    const auto padded = augment_at(img, AugmentConfig::cifar(), 0, 0, false);
    CHECK(padded.shape == Shape{3, 32, 32});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 32; ++i)
            for (std::size_t j = 0; j < 32; ++j) {
                const double v = padded.data[(c * 32 + i) * 32 + j];
                // scripted padder: source pixel (i-4, j-4) or zero outside
                const double expect = (i < 4 || j < 4) ? 0.0 : img.data[(c * 32 + i - 4) * 32 + j - 4];
                CHECK(v == expect);
            }

    CHECK_THROWS_AS(augment(img, AugmentConfig{0, 33, false}, rng), InvalidArgument);
    CHECK_THROWS_AS(augment_at(img, AugmentConfig::cifar(), 9, 0, false), InvalidArgument);
}

TEST_CASE("augment: random draws keep the crop size and the [0,1] range") {
    std::mt19937_64 rng(12);
    const auto img = testing::random_tensor({1, 28, 28}, rng, 0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const auto out = augment(img, AugmentConfig::mnist(), rng);
        CHECK(out.shape == Shape{1, 28, 28});
        for (double v : out.data) REQUIRE((v >= 0.0 && v <= 1.0));
    }
}
