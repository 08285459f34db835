#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hat/checkpoint.hpp"
#include "hat/supernet.hpp"
#include "hat/trainer.hpp"

namespace hat {

struct QuantizedBlock {
    std::vector<std::size_t> shape;
    int bits = 0;
    std::vector<double> codebook;      // <= 2^bits centroids
    std::vector<std::uint8_t> codes;   // one index per entry

    std::size_t entry_count() const { return Tensor::count(shape); }
};

namespace detail {

inline std::size_t nearest_centroid(double v, const std::vector<double>& centroids) {
    std::size_t best = 0;
    double best_d = std::abs(v - centroids[0]);
    for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double d = std::abs(v - centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// For a sorted codebook the nearest centroid is found from the midpoint
// boundaries; exact midpoint ties go to the lower index. 1-D Lloyd updates
// keep an initially sorted codebook sorted, so this is the hot path.
inline std::size_t nearest_centroid_sorted(double v, const std::vector<double>& centroids) {
    std::size_t lo = 0, hi = centroids.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (v <= 0.5 * (centroids[mid] + centroids[mid + 1]))
            hi = mid;
        else
            lo = mid + 1;
    }
    return lo;
}

}  // namespace detail

// 1-D k-means over the flattened entries with k = 2^bits. Centroids start at
// evenly spaced points over [min, max] inclusive; assignment and update
// alternate until assignments stabilize or max_iters. Empty clusters keep
// their previous centroid. When the matrix has at most k distinct values the
// codebook is just those values (exact reconstruction).
inline QuantizedBlock kmeans_quantize(const Tensor& m, int bits, int max_iters = 300,
                                      std::vector<double>* objective_trace = nullptr) {
    if (bits < 1 || bits > 8) throw ValidationError("kmeans_quantize: bits must be in [1, 8]");
    if (m.size() == 0) throw ValidationError("kmeans_quantize: empty matrix");
    const std::size_t k = static_cast<std::size_t>(1) << bits;
    QuantizedBlock out;
    out.shape = m.shape;
    out.bits = bits;
    out.codes.resize(m.size());

    std::set<double> distinct(m.data.begin(), m.data.end());
    if (distinct.size() <= k) {
        out.codebook.assign(distinct.begin(), distinct.end());
        for (std::size_t i = 0; i < m.size(); ++i)
            out.codes[i] = static_cast<std::uint8_t>(detail::nearest_centroid(m.data[i], out.codebook));
        if (objective_trace) objective_trace->push_back(0.0);
        return out;
    }

    const auto [mn_it, mx_it] = std::minmax_element(m.data.begin(), m.data.end());
    const double mn = *mn_it, mx = *mx_it;
    out.codebook.resize(k);
    for (std::size_t c = 0; c < k; ++c)
        out.codebook[c] = k == 1 ? 0.5 * (mn + mx)
                                 : mn + static_cast<double>(c) * (mx - mn) / static_cast<double>(k - 1);

    std::vector<std::uint8_t> prev_codes;
    std::vector<double> sums(k);
    std::vector<std::size_t> counts(k);
    for (int iter = 0; iter < max_iters; ++iter) {
        const bool sorted = std::is_sorted(out.codebook.begin(), out.codebook.end());
        for (std::size_t i = 0; i < m.size(); ++i)
            out.codes[i] = static_cast<std::uint8_t>(sorted ? detail::nearest_centroid_sorted(m.data[i], out.codebook)
                                                            : detail::nearest_centroid(m.data[i], out.codebook));
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < m.size(); ++i) {
            sums[out.codes[i]] += m.data[i];
            counts[out.codes[i]] += 1;
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0) out.codebook[c] = sums[c] / static_cast<double>(counts[c]);
        if (objective_trace) {
            double obj = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i) {
                const double d = m.data[i] - out.codebook[out.codes[i]];
                obj += d * d;
            }
            objective_trace->push_back(obj);
        }
        if (out.codes == prev_codes) break;
        prev_codes = out.codes;
    }
    // codes always reflect the final codebook, so the reconstruction error
    // equals the k-means objective at termination
    const bool sorted = std::is_sorted(out.codebook.begin(), out.codebook.end());
    for (std::size_t i = 0; i < m.size(); ++i)
        out.codes[i] = static_cast<std::uint8_t>(sorted ? detail::nearest_centroid_sorted(m.data[i], out.codebook)
                                                        : detail::nearest_centroid(m.data[i], out.codebook));
    return out;
}

inline Tensor dequantize(const QuantizedBlock& b) {
    Tensor t = Tensor::zeros(b.shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (b.codes[i] >= b.codebook.size()) throw ValidationError("dequantize: code out of codebook range");
        t.data[i] = b.codebook[b.codes[i]];
    }
    return t;
}

// Rank-2 blocks (projections, FFN weights, embeddings) are quantized; rank-1
// blocks (biases, layer-norm gains/biases) stay full precision.
struct QuantizedModel {
    DesignSpace space;
    ArchConfig arch;
    int bits = 0;
    std::map<std::string, QuantizedBlock> qblocks;
    std::map<std::string, Tensor> raw_blocks;
};

inline QuantizedModel quantize_model(const SlicedWeights& w, int bits, int max_iters = 300) {
    QuantizedModel qm;
    qm.space = w.space;
    qm.arch = w.arch;
    qm.bits = bits;
    for (const auto& [name, t] : w.blocks) {
        if (t.rank() == 2)
            qm.qblocks.emplace(name, kmeans_quantize(t, bits, max_iters));
        else
            qm.raw_blocks.emplace(name, t);
    }
    return qm;
}

inline SlicedWeights dequantize_model(const QuantizedModel& qm) {
    SlicedWeights w;
    w.space = qm.space;
    w.arch = qm.arch;
    for (const auto& [name, b] : qm.qblocks) w.blocks.emplace(name, dequantize(b));
    for (const auto& [name, t] : qm.raw_blocks) w.blocks.emplace(name, t);
    return w;
}

// ---- size accounting ----
// Sizes mirror the serialized layout: per-block header (name, rank, dims,
// kind byte), then either 4-byte values or (bits, codebook length, float32
// codebook, bit-packed codes).

namespace detail {

inline std::size_t block_header_bytes(const std::string& name, std::size_t rank) {
    return 4 + name.size() + 4 + 8 * rank + 1;
}

inline std::size_t packed_code_bytes(std::size_t entries, int bits) {
    return (entries * static_cast<std::size_t>(bits) + 7) / 8;
}

}  // namespace detail

inline std::size_t baseline_size_bytes(const SlicedWeights& w) {
    std::size_t total = 0;
    for (const auto& [name, t] : w.blocks) total += detail::block_header_bytes(name, t.rank()) + 4 * t.size();
    return total;
}

inline std::size_t quantized_size_bytes(const QuantizedModel& qm) {
    std::size_t total = 0;
    for (const auto& [name, b] : qm.qblocks)
        total += detail::block_header_bytes(name, b.shape.size()) + 1 + 4 + 4 * b.codebook.size() +
                 detail::packed_code_bytes(b.entry_count(), b.bits);
    for (const auto& [name, t] : qm.raw_blocks) total += detail::block_header_bytes(name, t.rank()) + 4 * t.size();
    return total;
}

// Bytes spent on the quantized weight values themselves: packed codes vs the
// 32-bit baseline of the same entries.
inline std::size_t weight_payload_bytes_quantized(const QuantizedModel& qm) {
    std::size_t total = 0;
    for (const auto& [name, b] : qm.qblocks) total += detail::packed_code_bytes(b.entry_count(), b.bits);
    return total;
}

inline std::size_t weight_payload_bytes_fp32(const QuantizedModel& qm) {
    std::size_t total = 0;
    for (const auto& [name, b] : qm.qblocks) total += 4 * b.entry_count();
    return total;
}

struct QuantReport {
    int bits = 0;
    double val_loss_before = 0.0;
    double val_loss_after = 0.0;
    std::size_t baseline_bytes = 0;
    std::size_t quantized_bytes = 0;
    double storage_ratio = 0.0;   // whole-model bytes, codebooks and headers included
    double payload_ratio = 0.0;   // weight-value payload only
};

inline QuantReport quantize_with_report(const SlicedWeights& w, int bits, const Corpus& corpus, QuantizedModel* out,
                                        int max_iters = 300) {
    QuantizedModel qm = quantize_model(w, bits, max_iters);
    QuantReport rep;
    rep.bits = bits;
    rep.val_loss_before = validate(w, corpus.valid);
    rep.val_loss_after = validate(dequantize_model(qm), corpus.valid);
    rep.baseline_bytes = baseline_size_bytes(w);
    rep.quantized_bytes = quantized_size_bytes(qm);
    rep.storage_ratio = static_cast<double>(rep.baseline_bytes) / static_cast<double>(rep.quantized_bytes);
    rep.payload_ratio = static_cast<double>(weight_payload_bytes_fp32(qm)) /
                        static_cast<double>(weight_payload_bytes_quantized(qm));
    if (out) *out = std::move(qm);
    return rep;
}

// ---- quantized checkpoint ----
// Same container as the dense checkpoint; per block a kind byte selects raw
// float32 values or (bits, codebook, packed codes).

inline void save_quantized(const std::string& path, const QuantizedModel& qm) {
    auto os = io::open_out(path);
    io::write_bytes(os, kCheckpointMagic, 7);
    io::write_u8(os, kCheckpointVersionQuantized);
    json header{{"space", qm.space}, {"arch", qm.arch}, {"bits", qm.bits}};
    io::write_str(os, header.dump());
    io::write_u32(os, static_cast<std::uint32_t>(qm.qblocks.size() + qm.raw_blocks.size()));
    for (const auto& [name, t] : qm.raw_blocks) {
        io::write_str(os, name);
        io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) io::write_u64(os, d);
        io::write_u8(os, 0);  // raw
        for (double v : t.data) io::write_f32(os, static_cast<float>(v));
    }
    for (const auto& [name, b] : qm.qblocks) {
        io::write_str(os, name);
        io::write_u32(os, static_cast<std::uint32_t>(b.shape.size()));
        for (std::size_t d : b.shape) io::write_u64(os, d);
        io::write_u8(os, 1);  // quantized
        io::write_u8(os, static_cast<std::uint8_t>(b.bits));
        io::write_u32(os, static_cast<std::uint32_t>(b.codebook.size()));
        for (double c : b.codebook) io::write_f32(os, static_cast<float>(c));
        std::vector<std::uint8_t> packed(detail::packed_code_bytes(b.entry_count(), b.bits), 0);
        for (std::size_t i = 0; i < b.codes.size(); ++i) {
            const std::size_t bit = i * static_cast<std::size_t>(b.bits);
            for (int k = 0; k < b.bits; ++k)
                if (b.codes[i] & (1u << k)) packed[(bit + static_cast<std::size_t>(k)) / 8] |=
                    static_cast<std::uint8_t>(1u << ((bit + static_cast<std::size_t>(k)) % 8));
        }
        io::write_bytes(os, packed.data(), packed.size());
    }
    if (!os) throw IoError("write failed: " + path);
}

inline QuantizedModel load_quantized(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kCheckpointMagic, path);
    if (io::read_u8(is, path) != kCheckpointVersionQuantized)
        throw IoError("unsupported checkpoint version in " + path + " (expected quantized v2)");
    const json header = json::parse(io::read_str(is, path));
    QuantizedModel qm;
    header.at("space").get_to(qm.space);
    header.at("arch").get_to(qm.arch);
    header.at("bits").get_to(qm.bits);
    const std::uint32_t n_blocks = io::read_u32(is, path);
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        std::string name = io::read_str(is, path);
        const std::uint32_t rank = io::read_u32(is, path);
        if (rank == 0 || rank > 2) throw IoError("bad block rank in " + path);
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = static_cast<std::size_t>(io::read_u64(is, path));
        const std::uint8_t kind = io::read_u8(is, path);
        if (kind == 0) {
            Tensor t = Tensor::zeros(dims);
            for (double& v : t.data) v = static_cast<double>(io::read_f32(is, path));
            qm.raw_blocks.emplace(std::move(name), std::move(t));
        } else if (kind == 1) {
            QuantizedBlock b;
            b.shape = dims;
            b.bits = io::read_u8(is, path);
            b.codebook.resize(io::read_u32(is, path));
            for (double& c : b.codebook) c = static_cast<double>(io::read_f32(is, path));
            std::vector<std::uint8_t> packed(detail::packed_code_bytes(b.entry_count(), b.bits));
            io::read_bytes(is, packed.data(), packed.size(), path);
            b.codes.resize(b.entry_count());
            for (std::size_t e = 0; e < b.codes.size(); ++e) {
                const std::size_t bit = e * static_cast<std::size_t>(b.bits);
                std::uint8_t v = 0;
                for (int k = 0; k < b.bits; ++k)
                    if (packed[(bit + static_cast<std::size_t>(k)) / 8] &
                        (1u << ((bit + static_cast<std::size_t>(k)) % 8)))
                        v |= static_cast<std::uint8_t>(1u << k);
                b.codes[e] = v;
            }
            qm.qblocks.emplace(std::move(name), std::move(b));
        } else {
            throw IoError("bad block kind in " + path);
        }
    }
    return qm;
}

}  // namespace hat
