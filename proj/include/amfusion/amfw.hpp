#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "amfusion/nn.hpp"
#include "amfusion/tensor.hpp"

// AMFW weight checkpoint format:
//   magic "AMFW", version byte 1,
//   c0 (u32 LE), reduction (u32 LE),
//   tensor count (u32 LE),
//   per tensor: name length (u32 LE), UTF-8 name, rank (u32 LE),
//               dims (u32 LE each), raw f32 LE values row-major,
//   trailing CRC32 (u32 LE) of all preceding bytes.

namespace amfusion {
namespace amfw {

inline constexpr char kMagic[4] = {'A', 'M', 'F', 'W'};
inline constexpr std::uint8_t kVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::uint8_t u8() {
        if (pos + 1 > buf.size()) throw IoError("AMFW: truncated file");
        return buf[pos++];
    }
    std::uint32_t u32() {
        if (pos + 4 > buf.size()) throw IoError("AMFW: truncated file");
        std::uint32_t v = buf[pos] | (buf[pos + 1] << 8) | (buf[pos + 2] << 16) |
                          (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n) {
        if (pos + n > buf.size()) throw IoError("AMFW: truncated file");
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
    void floats(float* dst, std::size_t n) {
        if (pos + 4 * n > buf.size()) throw IoError("AMFW: truncated file");
        std::memcpy(dst, buf.data() + pos, 4 * n);  // little-endian host assumed
        pos += 4 * n;
    }
};

} // namespace detail

inline void save(const ModelParams& params, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(kVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(params.config.c0));
    detail::put_u32(buf, static_cast<std::uint32_t>(params.config.reduction));
    detail::put_u32(buf, static_cast<std::uint32_t>(params.names().size()));
    for (const auto& name : params.names()) {
        const Tensor& t = params.get(name);
        detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t i = 0; i < t.rank(); ++i)
            detail::put_u32(buf, static_cast<std::uint32_t>(t.dim(i)));
        const std::size_t off = buf.size();
        buf.resize(off + 4 * t.numel());
        std::memcpy(buf.data() + off, t.values().data(), 4 * t.numel());
    }
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    detail::put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path);
}

inline ModelParams load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 4 + 1 + 4 + 4 + 4 + 4) throw IoError("AMFW: file too small");

    const std::uint32_t stored_crc = buf[buf.size() - 4] |
                                     (buf[buf.size() - 3] << 8) |
                                     (buf[buf.size() - 2] << 16) |
                                     (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc) throw IoError("AMFW: CRC mismatch, file corrupted");

    detail::Reader r{buf};
    if (r.str(4) != std::string(kMagic, 4)) throw IoError("AMFW: bad magic");
    if (r.u8() != kVersion) throw IoError("AMFW: unsupported format version");
    ArchConfig cfg;
    cfg.c0 = static_cast<int>(r.u32());
    cfg.reduction = static_cast<int>(r.u32());
    cfg.validate();

    // reference instance pins the closed name set and the expected shapes
    ModelParams expected = init_params(cfg, 0);
    ModelParams out;
    out.config = cfg;

    const std::uint32_t count = r.u32();
    if (count != expected.names().size())
        throw IoError("AMFW: tensor count " + std::to_string(count) + " does not match " +
                      std::to_string(expected.names().size()) + " for this ArchConfig");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        if (name != expected.names()[i])
            throw IoError("AMFW: unexpected tensor '" + name + "' (expected '" +
                          expected.names()[i] + "')");
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        if (shape != expected.get(name).shape())
            throw IoError("AMFW: shape mismatch for tensor '" + name + "'");
        Tensor t = Tensor::zeros(shape);
        r.floats(t.mutable_values().data(), t.numel());
        out.add(name, std::move(t));
    }
    if (r.pos != buf.size() - 4) throw IoError("AMFW: trailing bytes after tensor data");
    return out;
}

} // namespace amfw
} // namespace amfusion
