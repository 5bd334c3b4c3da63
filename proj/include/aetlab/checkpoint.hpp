#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aetlab/models.hpp"
#include "aetlab/optim.hpp"
#include "aetlab/regimes.hpp"
#include "aetlab/tensor.hpp"

namespace aetlab::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian byte writer/reader used by every binary artifact.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v);
    void bytes(const void* p, std::size_t n);
    void str(const std::string& s);
    void shape(const Shape& s);
    void tensor(const Tensor& t);
    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64();
    std::string str();
    std::string fixed(std::size_t n);
    Shape shape();
    Tensor tensor();
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n);
    const std::vector<std::uint8_t>& b_;
    std::string what_;
    std::size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

struct Checkpoint {
    models::ArchSpec arch;
    ParamList params;
    optim::AdamState opt;
    std::string rng_state;
    int epoch = 0;
};

Checkpoint capture(const regimes::TrainState& s);
/// Rebuilds a TrainState (reports empty) from a checkpoint.
regimes::TrainState restore(const Checkpoint& c);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// ---- trace artifacts -------------------------------------------------------------

struct ProbeSet {
    Tensor x;
    std::vector<int> labels;
};

struct RoundRecord {
    int epoch = 0;
    ParamList params;  // h_t
    Tensor adversarial;  // D_t on the probe set
    double risk = 0.0;   // R̂_t(h_t)
};

struct Snapshot {
    int epoch = 0;
    ParamList params;
};

void save_probe(const std::string& path, const ProbeSet& p);
ProbeSet load_probe(const std::string& path);
void save_round(const std::string& path, const RoundRecord& r);
RoundRecord load_round(const std::string& path);
void save_snapshot(const std::string& path, const Snapshot& s);
Snapshot load_snapshot(const std::string& path);

}  // namespace aetlab::io
