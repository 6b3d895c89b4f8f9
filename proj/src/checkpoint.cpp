#include "uaplab/checkpoint.hpp"

#include <cstring>

#include "uaplab/errors.hpp"
#include "uaplab/hash.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

namespace {

void push_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void push_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void push_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    const unsigned char* take(std::size_t n) {
        if (pos_ + n > size_) throw CorruptCheckpoint("checkpoint truncated");
        const unsigned char* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::uint16_t u16() {
        const unsigned char* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const unsigned char* p = take(4);
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
               (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    std::size_t pos() const { return pos_; }

private:
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const ClassifierModel& model, const std::string& path) {
    std::vector<unsigned char> out;
    out.insert(out.end(), {'U', 'A', 'P', 'M'});
    push_u16(out, kCheckpointVersion);
    const std::string& arch = model.arch_id();
    push_u16(out, static_cast<std::uint16_t>(arch.size()));
    out.insert(out.end(), arch.begin(), arch.end());
    push_u32(out, static_cast<std::uint32_t>(model.num_classes()));
    Shape shape = model.input_shape();
    push_u32(out, static_cast<std::uint32_t>(shape.c));
    push_u32(out, static_cast<std::uint32_t>(shape.h));
    push_u32(out, static_cast<std::uint32_t>(shape.w));
    auto params = model.parameters();
    push_u64(out, params.size());
    std::size_t payload_at = out.size();
    out.resize(out.size() + params.size() * sizeof(float));
    std::memcpy(out.data() + payload_at, params.data(), params.size() * sizeof(float));
    push_u32(out, crc32_of(out.data(), out.size()));
    write_file_atomic(path, out.data(), out.size());
}

ClassifierModel load_checkpoint(const std::string& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 2 + 2 + 4 + 12 + 8 + 4)
        throw CorruptCheckpoint(path + ": file too short");
    std::uint32_t stored_crc = std::uint32_t(bytes[bytes.size() - 4]) |
                               (std::uint32_t(bytes[bytes.size() - 3]) << 8) |
                               (std::uint32_t(bytes[bytes.size() - 2]) << 16) |
                               (std::uint32_t(bytes[bytes.size() - 1]) << 24);
    if (crc32_of(bytes.data(), bytes.size() - 4) != stored_crc)
        throw CorruptCheckpoint(path + ": checksum failure");

    Reader r(bytes.data(), bytes.size() - 4);
    if (std::memcmp(r.take(4), "UAPM", 4) != 0)
        throw CorruptCheckpoint(path + ": bad magic");
    std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw VersionMismatch(path + ": checkpoint version " + std::to_string(version));
    std::uint16_t arch_len = r.u16();
    const unsigned char* arch_bytes = r.take(arch_len);
    std::string arch(reinterpret_cast<const char*>(arch_bytes), arch_len);
    int num_classes = static_cast<int>(r.u32());
    Shape shape;
    shape.c = static_cast<int>(r.u32());
    shape.h = static_cast<int>(r.u32());
    shape.w = static_cast<int>(r.u32());
    std::uint64_t count = r.u64();
    const unsigned char* payload = r.take(count * sizeof(float));

    // rebuild the architecture, then overwrite its parameters
    ClassifierModel model = build_model(arch, num_classes, shape, 0);
    if (model.parameters().size() != count)
        throw CorruptCheckpoint(path + ": parameter count does not match architecture");
    std::memcpy(model.parameters_mut().data(), payload, count * sizeof(float));
    return model;
}

} // namespace uaplab
