#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pc4d/optim.hpp"
#include "pc4d/tensor.hpp"

// Checkpoint container: little-endian binary, one (name, group, shape, f64
// data) record per parameter, preceded by a version header and the run
// configuration text. Layout documented in README.md.

namespace pc4d {

namespace detail {

constexpr char kCkptMagic[8] = {'P', 'C', '4', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_str(std::istream& is) {
    std::uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace detail

struct CheckpointEntry {
    std::string name;
    std::string group;
    Shape shape;
    std::vector<double> data;
};

struct Checkpoint {
    std::string config_text;
    std::vector<CheckpointEntry> entries;
};

inline void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& config_text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    detail::put_bytes(os, detail::kCkptMagic, 8);
    detail::put_u32(os, detail::kCkptVersion);
    detail::put_str(os, config_text);
    detail::put_u32(os, static_cast<std::uint32_t>(params.all().size()));
    for (const auto& p : params.all()) {
        detail::put_str(os, p.name);
        detail::put_str(os, p.group);
        detail::put_u32(os, static_cast<std::uint32_t>(p.tensor.shape().size()));
        for (std::size_t d : p.tensor.shape()) detail::put_u64(os, d);
        for (double x : p.tensor.data()) detail::put_f64(os, x);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || !std::equal(magic, magic + 8, detail::kCkptMagic))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != detail::kCkptVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config_text = detail::get_str(is);
    std::uint32_t n = detail::get_u32(is);
    ck.entries.resize(n);
    for (auto& e : ck.entries) {
        e.name = detail::get_str(is);
        e.group = detail::get_str(is);
        std::uint32_t nd = detail::get_u32(is);
        e.shape.resize(nd);
        for (auto& d : e.shape) d = detail::get_u64(is);
        e.data.resize(shape_numel(e.shape));
        for (double& x : e.data) x = detail::get_f64(is);
    }
    return ck;
}

// Copy checkpoint values into an already-built store; every name and shape
// must match exactly.
inline void load_into(const Checkpoint& ck, ParamStore& params) {
    if (ck.entries.size() != params.all().size())
        throw std::runtime_error("checkpoint: has " + std::to_string(ck.entries.size()) + " entries, model expects " +
                                 std::to_string(params.all().size()));
    for (const auto& e : ck.entries) {
        const ParamStore::Param* p = params.find(e.name);
        if (!p) throw std::runtime_error("checkpoint: model has no parameter named " + e.name);
        if (p->tensor.shape() != e.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + e.name + ": file " + shape_str(e.shape) +
                                     " vs model " + shape_str(p->tensor.shape()));
        const_cast<ParamStore::Param*>(p)->tensor.data() = e.data;
    }
}

}  // namespace pc4d
