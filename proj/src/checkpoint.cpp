#include "aetlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "aetlab/data.hpp"
#include "aetlab/error.hpp"

namespace aetlab::io {

namespace {

constexpr char kCkptMagic[] = "AETLCKPT";
constexpr char kProbeMagic[] = "AETLPROB";
constexpr char kRoundMagic[] = "AETLROUN";
constexpr char kSnapMagic[] = "AETLSNAP";

void write_params(ByteWriter& w, const ParamList& params) {
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.shape(p.value.shape);
    }
    for (const auto& p : params)
        for (double v : p.value.data) w.f64(v);
}

ParamList read_params(ByteReader& r) {
    ParamList params(r.u32());
    for (auto& p : params) {
        p.name = r.str();
        p.value = Tensor(r.shape());
    }
    for (auto& p : params)
        for (double& v : p.value.data) v = r.f64();
    return params;
}

void write_arch(ByteWriter& w, const models::ArchSpec& a) {
    w.u8(static_cast<std::uint8_t>(a.kind));
    w.u8(static_cast<std::uint8_t>(a.activation));
    w.u64(a.num_classes);
    w.u64(a.init_seed);
    w.u32(static_cast<std::uint32_t>(a.widths.size()));
    for (auto v : a.widths) w.u64(v);
    w.shape(a.input_shape);
}

models::ArchSpec read_arch(ByteReader& r) {
    models::ArchSpec a;
    const auto kind = r.u8(), act = r.u8();
    if (kind > 1 || act > 1) throw ParseError(ParseErrorKind::BadFormat, "checkpoint: unknown architecture code");
    a.kind = static_cast<models::ArchKind>(kind);
    a.activation = static_cast<models::Activation>(act);
    a.num_classes = r.u64();
    a.init_seed = r.u64();
    a.widths.resize(r.u32());
    for (auto& v : a.widths) v = r.u64();
    a.input_shape = r.shape();
    return a;
}

void expect_magic(ByteReader& r, const char* magic, const std::string& what) {
    if (r.fixed(8) != std::string(magic, 8)) throw ParseError(ParseErrorKind::BadMagic, what + ": bad magic bytes");
}

std::vector<std::uint8_t> read_all(const std::string& path) { return data::read_file(path); }

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
}

void ByteWriter::bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
}

void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void ByteWriter::shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) u64(d);
}

void ByteWriter::tensor(const Tensor& t) {
    shape(t.shape);
    for (double v : t.data) f64(v);
}

void ByteReader::need(std::size_t n) {
    if (b_.size() - pos_ < n) throw ParseError(ParseErrorKind::Truncated, what_ + ": unexpected end of data");
}

std::uint8_t ByteReader::u8() {
    need(1);
    return b_[pos_++];
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
}

double ByteReader::f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::string ByteReader::str() {
    const auto n = u32();
    return fixed(n);
}

std::string ByteReader::fixed(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
}

Shape ByteReader::shape() {
    const auto rank = u32();
    if (rank > 8) throw ParseError(ParseErrorKind::BadFormat, what_ + ": implausible tensor rank");
    Shape s(rank);
    for (auto& d : s) d = u64();
    std::size_t n = 1;
    for (auto d : s) {
        if (d != 0 && n > (b_.size() / 8 + 1) / d) throw ParseError(ParseErrorKind::Truncated, what_ + ": shape exceeds data");
        n *= d;
    }
    return s;
}

Tensor ByteReader::tensor() {
    Tensor t(shape());
    need(t.numel() * 8);
    for (double& v : t.data) v = f64();
    return t;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path + "'");
}

Checkpoint capture(const regimes::TrainState& s) {
    Checkpoint c;
    c.arch = s.model.arch;
    c.params = s.model.params;
    c.opt = s.opt;
    std::ostringstream os;
    os << s.rng;
    c.rng_state = os.str();
    c.epoch = s.epoch;
    return c;
}

regimes::TrainState restore(const Checkpoint& c) {
    regimes::TrainState s;
    s.model = models::build_model(c.arch);
    if (s.model.params.size() != c.params.size())
        throw ParseError(ParseErrorKind::DimensionMismatch, "checkpoint parameter count does not match its architecture");
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        if (s.model.params[i].value.shape != c.params[i].value.shape)
            throw ParseError(ParseErrorKind::DimensionMismatch, "checkpoint shape mismatch for " + c.params[i].name);
        s.model.params[i].value = c.params[i].value;
    }
    s.opt = c.opt;
    std::istringstream is(c.rng_state);
    is >> s.rng;
    if (!is) throw ParseError(ParseErrorKind::BadFormat, "checkpoint rng state is unreadable");
    s.epoch = c.epoch;
    return s;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    ByteWriter w;
    w.bytes(kCkptMagic, 8);
    w.u32(kCheckpointVersion);
    write_arch(w, c.arch);
    write_params(w, c.params);
    const auto& h = c.opt.hyper;
    for (double v : {h.lr, h.beta1, h.beta2, h.eps, h.weight_decay}) w.f64(v);
    w.u64(c.opt.step);
    w.u32(static_cast<std::uint32_t>(c.opt.m.size()));
    for (std::size_t i = 0; i < c.opt.m.size(); ++i) {
        w.u64(c.opt.m[i].size());
        for (double v : c.opt.m[i]) w.f64(v);
        for (double v : c.opt.v[i]) w.f64(v);
    }
    w.str(c.rng_state);
    w.i32(c.epoch);
    return w.data();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "checkpoint");
    expect_magic(r, kCkptMagic, "checkpoint");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw ParseError(ParseErrorKind::BadFormat, "checkpoint format version " + std::to_string(v) + " is not supported");
    Checkpoint c;
    c.arch = read_arch(r);
    c.params = read_params(r);
    auto& h = c.opt.hyper;
    h.lr = r.f64();
    h.beta1 = r.f64();
    h.beta2 = r.f64();
    h.eps = r.f64();
    h.weight_decay = r.f64();
    c.opt.step = r.u64();
    const auto n = r.u32();
    if (n != c.params.size()) throw ParseError(ParseErrorKind::DimensionMismatch, "checkpoint optimizer state size mismatch");
    c.opt.m.resize(n);
    c.opt.v.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto len = r.u64();
        if (len != c.params[i].value.numel())
            throw ParseError(ParseErrorKind::DimensionMismatch, "checkpoint moment length mismatch for " + c.params[i].name);
        c.opt.m[i].resize(len);
        c.opt.v[i].resize(len);
        for (double& v : c.opt.m[i]) v = r.f64();
        for (double& v : c.opt.v[i]) v = r.f64();
    }
    c.rng_state = r.str();
    c.epoch = r.i32();
    if (!r.done()) throw ParseError(ParseErrorKind::DimensionMismatch, "checkpoint has trailing bytes");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_all(path)); }

void save_probe(const std::string& path, const ProbeSet& p) {
    ByteWriter w;
    w.bytes(kProbeMagic, 8);
    w.tensor(p.x);
    w.u32(static_cast<std::uint32_t>(p.labels.size()));
    for (int y : p.labels) w.i32(y);
    write_file(path, w.data());
}

ProbeSet load_probe(const std::string& path) {
    const auto bytes = read_all(path);
    ByteReader r(bytes, path);
    expect_magic(r, kProbeMagic, path);
    ProbeSet p;
    p.x = r.tensor();
    p.labels.resize(r.u32());
    for (int& y : p.labels) y = r.i32();
    if (p.x.rank() == 0 || p.x.dim(0) != p.labels.size())
        throw ParseError(ParseErrorKind::DimensionMismatch, path + ": probe labels do not match the images");
    return p;
}

void save_round(const std::string& path, const RoundRecord& rr) {
    ByteWriter w;
    w.bytes(kRoundMagic, 8);
    w.i32(rr.epoch);
    write_params(w, rr.params);
    w.tensor(rr.adversarial);
    w.f64(rr.risk);
    write_file(path, w.data());
}

RoundRecord load_round(const std::string& path) {
    const auto bytes = read_all(path);
    ByteReader r(bytes, path);
    expect_magic(r, kRoundMagic, path);
    RoundRecord rr;
    rr.epoch = r.i32();
    rr.params = read_params(r);
    rr.adversarial = r.tensor();
    rr.risk = r.f64();
    return rr;
}

void save_snapshot(const std::string& path, const Snapshot& s) {
    ByteWriter w;
    w.bytes(kSnapMagic, 8);
    w.i32(s.epoch);
    write_params(w, s.params);
    write_file(path, w.data());
}

Snapshot load_snapshot(const std::string& path) {
    const auto bytes = read_all(path);
    ByteReader r(bytes, path);
    expect_magic(r, kSnapMagic, path);
    Snapshot s;
    s.epoch = r.i32();
    s.params = read_params(r);
    return s;
}

}  // namespace aetlab::io
