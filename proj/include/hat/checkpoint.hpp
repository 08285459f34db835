#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hat/supernet.hpp"

namespace hat {
namespace io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }
inline void write_f32(std::ostream& os, float v) { write_bytes(os, &v, 4); }
inline void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }
inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw IoError("truncated file: " + path);
}
inline std::uint8_t read_u8(std::istream& is, const std::string& path) {
    std::uint8_t v;
    read_bytes(is, &v, 1, path);
    return v;
}
inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v;
    read_bytes(is, &v, 4, path);
    return v;
}
inline std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v;
    read_bytes(is, &v, 8, path);
    return v;
}
inline float read_f32(std::istream& is, const std::string& path) {
    float v;
    read_bytes(is, &v, 4, path);
    return v;
}
inline double read_f64(std::istream& is, const std::string& path) {
    double v;
    read_bytes(is, &v, 8, path);
    return v;
}
inline std::string read_str(std::istream& is, const std::string& path) {
    const std::uint32_t n = read_u32(is, path);
    std::string s(n, '\0');
    read_bytes(is, s.data(), n, path);
    return s;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}
inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return is;
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& path) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic)
        throw IoError("bad magic in " + path + " (expected \"" + magic + "\")");
}

}  // namespace io

// Checkpoint container: magic "HATCKPT", one format-version byte, the design
// space as JSON, then named parameter blocks as (name length, name, rank,
// dims, raw little-endian values). Dense checkpoints store values as 32-bit
// floats; they are loaded back into 64-bit.
inline constexpr char kCheckpointMagic[] = "HATCKPT";
inline constexpr std::uint8_t kCheckpointVersionDense = 1;
inline constexpr std::uint8_t kCheckpointVersionQuantized = 2;

namespace io {

inline void write_block_header(std::ostream& os, const std::string& name, const Tensor& t) {
    write_str(os, name);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) write_u64(os, d);
}

inline std::pair<std::string, std::vector<std::size_t>> read_block_header(std::istream& is, const std::string& path) {
    std::string name = read_str(is, path);
    const std::uint32_t rank = read_u32(is, path);
    if (rank == 0 || rank > 2) throw IoError("bad block rank in " + path);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::size_t>(read_u64(is, path));
    return {std::move(name), std::move(dims)};
}

}  // namespace io

inline void save_blocks_f32(const std::string& path, const DesignSpace& space,
                            const std::map<std::string, Tensor>& blocks) {
    auto os = io::open_out(path);
    io::write_bytes(os, kCheckpointMagic, 7);
    io::write_u8(os, kCheckpointVersionDense);
    io::write_str(os, json(space).dump());
    io::write_u32(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, t] : blocks) {
        io::write_block_header(os, name, t);
        for (double v : t.data) io::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("write failed: " + path);
}

inline std::pair<DesignSpace, std::map<std::string, Tensor>> load_blocks_f32(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kCheckpointMagic, path);
    const std::uint8_t version = io::read_u8(is, path);
    if (version != kCheckpointVersionDense)
        throw IoError("unsupported checkpoint version in " + path + " (expected dense v1)");
    DesignSpace space = json::parse(io::read_str(is, path)).get<DesignSpace>();
    const std::uint32_t n_blocks = io::read_u32(is, path);
    std::map<std::string, Tensor> blocks;
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        auto [name, dims] = io::read_block_header(is, path);
        Tensor t = Tensor::zeros(dims);
        for (double& v : t.data) v = static_cast<double>(io::read_f32(is, path));
        blocks.emplace(std::move(name), std::move(t));
    }
    return {std::move(space), std::move(blocks)};
}

inline void save_supernet(const std::string& path, const SuperWeights& sw) {
    save_blocks_f32(path, sw.space(), sw.blocks());
}

inline SuperWeights load_supernet(const std::string& path) {
    auto [space, blocks] = load_blocks_f32(path);
    space.validate();
    SuperWeights sw(std::move(space), std::move(blocks));
    for (const BlockSpec& spec : super_block_specs(sw.space()))
        if (sw.block(spec.name).shape != spec.dims) throw IoError("block shape mismatch in " + path + ": " + spec.name);
    return sw;
}

// Standalone SubTransformer weights: same container; the blocks carry the
// sliced shapes and the matching ArchConfig travels separately as JSON.
inline void save_sub_weights(const std::string& path, const SlicedWeights& w) {
    save_blocks_f32(path, w.space, w.blocks);
}

inline SlicedWeights load_sub_weights(const std::string& path, const ArchConfig& arch) {
    auto [space, blocks] = load_blocks_f32(path);
    space.validate();
    SlicedWeights w{std::move(space), arch, std::move(blocks)};
    for (const BlockSpec& spec : sub_block_specs(w.space, arch)) {
        auto it = w.blocks.find(spec.name);
        if (it == w.blocks.end()) throw IoError("missing block in " + path + ": " + spec.name);
        if (it->second.shape != spec.dims)
            throw IoError("block shape mismatch in " + path + ": " + spec.name + " (arch does not match weights)");
    }
    return w;
}

}  // namespace hat
