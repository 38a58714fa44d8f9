#pragma once

// On-disk formats.
//
// LTEN (one tensor): magic "LTEN", u16 version (=1), u8 dtype (0=F32, 1=F64),
// u8 rank, rank x u64 dims, raw little-endian element data.
//
// LCKP (named container): magic "LCKP", u16 version (=1), u32 entry count,
// then per entry: u16 name length, UTF-8 name, u64 payload length, payload
// bytes. Tensor entries embed an LTEN blob; "*.json" entries hold raw UTF-8
// JSON text (the length prefix is what makes those parseable).
//
// All files are written atomically: temp file in the target directory, then
// rename.

#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "liera/error.hpp"
#include "liera/tensor.hpp"

namespace liera::io {

using Bytes = std::vector<std::uint8_t>;

inline void put_u16(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xFF));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(Bytes& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    std::uint8_t u8() { return take(1)[0]; }

    std::uint16_t u16() {
        const std::uint8_t* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    const std::uint8_t* take(std::size_t n) {
        if (size_ - pos_ < n) throw IoError(what_ + ": truncated payload");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    std::size_t remaining() const { return size_ - pos_; }
    std::size_t pos() const { return pos_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline constexpr std::uint8_t kLtenMagic[4] = {0x4C, 0x54, 0x45, 0x4E}; // "LTEN"
inline constexpr std::uint8_t kLckpMagic[4] = {0x4C, 0x43, 0x4B, 0x50}; // "LCKP"
inline constexpr std::uint16_t kFormatVersion = 1;

template <typename S>
void encode_lten(Bytes& out, const Tensor<S>& t) {
    out.insert(out.end(), kLtenMagic, kLtenMagic + 4);
    put_u16(out, kFormatVersion);
    out.push_back(static_cast<std::uint8_t>(Tensor<S>::dtype()));
    out.push_back(static_cast<std::uint8_t>(t.shape().rank()));
    for (std::int64_t d : t.shape().dims()) put_u64(out, static_cast<std::uint64_t>(d));
    for (std::uint64_t i = 0; i < t.numel(); ++i) {
        const S entry = t[i];
        if constexpr (std::is_same_v<S, float>) {
            std::uint32_t bits;
            std::memcpy(&bits, &entry, 4);
            put_u32(out, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &entry, 8);
            put_u64(out, bits);
        }
    }
}

inline void decode_lten_header(Reader& r, DType& dtype, Shape& shape) {
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, kLtenMagic, 4) != 0) throw IoError("LTEN: bad magic");
    const std::uint16_t version = r.u16();
    if (version != kFormatVersion) throw IoError("LTEN: bad version " + std::to_string(version));
    const std::uint8_t dt = r.u8();
    if (dt > 1) throw IoError("LTEN: unknown dtype tag " + std::to_string(dt));
    dtype = static_cast<DType>(dt);
    const std::uint8_t rank = r.u8();
    if (rank > 4) throw IoError("LTEN: rank " + std::to_string(rank) + " exceeds 4");
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) {
        const std::uint64_t v = r.u64();
        if (v == 0 || v > static_cast<std::uint64_t>(INT64_MAX)) throw IoError("LTEN: invalid extent");
        d = static_cast<std::int64_t>(v);
    }
    shape = Shape(std::move(dims));
}

template <typename S>
Tensor<S> decode_lten(Reader& r) {
    DType dtype{};
    Shape shape;
    decode_lten_header(r, dtype, shape);
    if (dtype != Tensor<S>::dtype())
        throw IoError(std::string("LTEN: dtype is ") + dtype_name(dtype) + ", expected " +
                      dtype_name(Tensor<S>::dtype()));
    Tensor<S> t(shape);
    for (std::uint64_t i = 0; i < t.numel(); ++i) {
        if constexpr (std::is_same_v<S, float>) {
            const std::uint32_t bits = r.u32();
            std::memcpy(&t[i], &bits, 4);
        } else {
            const std::uint64_t bits = r.u64();
            std::memcpy(&t[i], &bits, 8);
        }
    }
    return t;
}

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return b;
}

inline void atomic_write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path tmp = dir / (path.filename().string() + ".tmp." + std::to_string(::getpid()));
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        f.flush();
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename to " + path.string() + " failed");
    }
}

inline void atomic_write_file(const std::filesystem::path& path, const Bytes& bytes) {
    atomic_write_file(path, bytes.data(), bytes.size());
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
    atomic_write_file(path, text.data(), text.size());
}

template <typename S>
void save_lten(const std::filesystem::path& path, const Tensor<S>& t) {
    Bytes b;
    encode_lten(b, t);
    atomic_write_file(path, b);
}

template <typename S>
Tensor<S> load_lten(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    Reader r(b.data(), b.size(), "LTEN");
    Tensor<S> t = decode_lten<S>(r);
    if (r.remaining() != 0) throw IoError("LTEN: trailing bytes after payload");
    return t;
}

inline DType peek_lten_dtype(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    Reader r(b.data(), b.size(), "LTEN");
    DType dtype{};
    Shape shape;
    decode_lten_header(r, dtype, shape);
    return dtype;
}

// One named payload inside an LCKP container.
struct LckpEntry {
    std::string name;
    Bytes payload;
};

class Lckp {
public:
    void put_bytes(const std::string& name, Bytes payload) {
        for (auto& e : entries_) {
            if (e.name == name) {
                e.payload = std::move(payload);
                return;
            }
        }
        entries_.push_back({name, std::move(payload)});
    }

    template <typename S>
    void put_tensor(const std::string& name, const Tensor<S>& t) {
        Bytes b;
        encode_lten(b, t);
        put_bytes(name, std::move(b));
    }

    void put_text(const std::string& name, const std::string& text) {
        put_bytes(name, Bytes(text.begin(), text.end()));
    }

    bool has(const std::string& name) const { return find(name) != nullptr; }

    const LckpEntry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    template <typename S>
    Tensor<S> get_tensor(const std::string& name) const {
        const LckpEntry* e = find(name);
        if (!e) throw IoError("LCKP: missing entry \"" + name + "\"");
        Reader r(e->payload.data(), e->payload.size(), "LCKP entry \"" + name + "\"");
        Tensor<S> t = decode_lten<S>(r);
        if (r.remaining() != 0) throw IoError("LCKP entry \"" + name + "\": trailing bytes");
        return t;
    }

    std::string get_text(const std::string& name) const {
        const LckpEntry* e = find(name);
        if (!e) throw IoError("LCKP: missing entry \"" + name + "\"");
        return std::string(e->payload.begin(), e->payload.end());
    }

    const std::vector<LckpEntry>& entries() const { return entries_; }

    Bytes encode() const {
        Bytes out;
        out.insert(out.end(), kLckpMagic, kLckpMagic + 4);
        put_u16(out, kFormatVersion);
        put_u32(out, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            if (e.name.size() > UINT16_MAX) throw IoError("LCKP: entry name too long");
            put_u16(out, static_cast<std::uint16_t>(e.name.size()));
            out.insert(out.end(), e.name.begin(), e.name.end());
            put_u64(out, e.payload.size());
            out.insert(out.end(), e.payload.begin(), e.payload.end());
        }
        return out;
    }

    static Lckp decode(const Bytes& bytes) {
        Reader r(bytes.data(), bytes.size(), "LCKP");
        const std::uint8_t* magic = r.take(4);
        if (std::memcmp(magic, kLckpMagic, 4) != 0) throw IoError("LCKP: bad magic");
        const std::uint16_t version = r.u16();
        if (version != kFormatVersion) throw IoError("LCKP: bad version " + std::to_string(version));
        const std::uint32_t count = r.u32();
        Lckp c;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint16_t name_len = r.u16();
            const std::uint8_t* name = r.take(name_len);
            const std::uint64_t payload_len = r.u64();
            const std::uint8_t* payload = r.take(payload_len);
            c.entries_.push_back({std::string(name, name + name_len), Bytes(payload, payload + payload_len)});
        }
        if (r.remaining() != 0) throw IoError("LCKP: trailing bytes after last entry");
        return c;
    }

    void save(const std::filesystem::path& path) const { atomic_write_file(path, encode()); }

    static Lckp load(const std::filesystem::path& path) { return decode(read_file(path)); }

private:
    std::vector<LckpEntry> entries_;
};

} // namespace liera::io
