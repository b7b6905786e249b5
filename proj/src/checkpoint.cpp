#include "val/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "val/errors.hpp"

namespace val::data {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'L', 'C'};
constexpr std::uint16_t kVersion = 1;

enum Kind : std::uint8_t { kTensor = 0, kU64 = 1, kF64 = 2, kString = 3, kVector = 4 };

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_doubles(std::vector<std::uint8_t>& b, const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &v[i], 8);
        put_u64(b, bits);
    }
}

struct Cursor {
    const std::uint8_t* p;
    std::size_t n;
    std::size_t pos = 0;

    const std::uint8_t* take(std::size_t k) {
        if (pos + k > n) throw LoadError(LoadError::Kind::Truncated, "checkpoint: truncated file");
        const auto* r = p + pos;
        pos += k;
        return r;
    }
    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        const auto* r = take(2);
        return static_cast<std::uint16_t>(r[0] | (r[1] << 8));
    }
    std::uint32_t u32() {
        const auto* r = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(r[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto* r = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(r[i]) << (8 * i);
        return v;
    }
};

}  // namespace

void CheckpointWriter::add_tensor(const std::string& name, const Tensor& t) {
    Section s;
    s.kind = kTensor;
    s.dims = t.shape;
    put_doubles(s.payload, t.values.data(), t.values.size());
    sections_[name] = std::move(s);
}

void CheckpointWriter::add_vector(const std::string& name, const std::vector<double>& v) {
    Section s;
    s.kind = kVector;
    s.dims = {static_cast<int>(v.size())};
    put_doubles(s.payload, v.data(), v.size());
    sections_[name] = std::move(s);
}

void CheckpointWriter::add_u64(const std::string& name, std::uint64_t v) {
    Section s;
    s.kind = kU64;
    put_u64(s.payload, v);
    sections_[name] = std::move(s);
}

void CheckpointWriter::add_f64(const std::string& name, double v) {
    Section s;
    s.kind = kF64;
    put_doubles(s.payload, &v, 1);
    sections_[name] = std::move(s);
}

void CheckpointWriter::add_string(const std::string& name, const std::string& v) {
    Section s;
    s.kind = kString;
    s.payload.assign(v.begin(), v.end());
    sections_[name] = std::move(s);
}

void CheckpointWriter::write(const std::string& path) const {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u16(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& [name, s] : sections_) {
        put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(s.kind);
        put_u16(buf, static_cast<std::uint16_t>(s.dims.size()));
        for (int d : s.dims) put_u32(buf, static_cast<std::uint32_t>(d));
        put_u64(buf, s.payload.size());
        buf.insert(buf.end(), s.payload.begin(), s.payload.end());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError(LoadError::Kind::Io, "checkpoint: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

CheckpointReader::CheckpointReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw LoadError(LoadError::Kind::Io, "checkpoint: cannot open " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(data.data()), size);
    if (data.size() < 10 || std::memcmp(data.data(), kMagic, 4) != 0)
        throw LoadError(LoadError::Kind::BadMagic, "checkpoint: bad magic in " + path);
    Cursor c{data.data() + 4, data.size() - 4};
    const std::uint16_t version = c.u16();
    if (version != kVersion)
        throw LoadError(LoadError::Kind::Version, "checkpoint: version " + std::to_string(version));
    const std::uint32_t count = c.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = c.u16();
        const auto* np = c.take(name_len);
        std::string name(reinterpret_cast<const char*>(np), name_len);
        Section s;
        s.kind = c.u8();
        const std::uint16_t ndims = c.u16();
        s.dims.resize(ndims);
        for (auto& d : s.dims) d = static_cast<int>(c.u32());
        const std::uint64_t payload = c.u64();
        const auto* pp = c.take(payload);
        s.payload.assign(pp, pp + payload);
        sections_[name] = std::move(s);
    }
}

bool CheckpointReader::has(const std::string& name) const { return sections_.count(name) > 0; }

const CheckpointReader::Section& CheckpointReader::section(const std::string& name, std::uint8_t kind) const {
    auto it = sections_.find(name);
    if (it == sections_.end())
        throw LoadError(LoadError::Kind::Architecture, "checkpoint: missing section '" + name + "'");
    if (it->second.kind != kind)
        throw LoadError(LoadError::Kind::Architecture, "checkpoint: section '" + name + "' has wrong kind");
    return it->second;
}

namespace {
void payload_to_doubles(const std::vector<std::uint8_t>& payload, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(payload[i * 8 + b]) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
}
}  // namespace

void CheckpointReader::read_tensor(const std::string& name, Tensor& t) const {
    const Section& s = section(name, kTensor);
    if (s.dims != t.shape)
        throw LoadError(LoadError::Kind::Architecture, "checkpoint: tensor '" + name + "' has shape " +
                                                           shape_str(s.dims) + ", expected " + shape_str(t.shape));
    payload_to_doubles(s.payload, t.values.data(), t.values.size());
}

void CheckpointReader::read_vector(const std::string& name, std::vector<double>& v) const {
    const Section& s = section(name, kVector);
    if (s.dims.at(0) != static_cast<int>(v.size()))
        throw LoadError(LoadError::Kind::Architecture, "checkpoint: vector '" + name + "' has length " +
                                                           std::to_string(s.dims.at(0)) + ", expected " +
                                                           std::to_string(v.size()));
    payload_to_doubles(s.payload, v.data(), v.size());
}

std::uint64_t CheckpointReader::u64(const std::string& name) const {
    const Section& s = section(name, kU64);
    Cursor c{s.payload.data(), s.payload.size()};
    return c.u64();
}

double CheckpointReader::f64(const std::string& name) const {
    const Section& s = section(name, kF64);
    double v;
    payload_to_doubles(s.payload, &v, 1);
    return v;
}

std::string CheckpointReader::str(const std::string& name) const {
    const Section& s = section(name, kString);
    return std::string(s.payload.begin(), s.payload.end());
}

}  // namespace val::data
