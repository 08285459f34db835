#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "hat/checkpoint.hpp"
#include "hat/supernet.hpp"

namespace hat {

// Synthetic sequence-to-sequence tasks standing in for a translation corpus.
enum class TaskKind { kCopy, kReverse, kSort };

inline std::string task_name(TaskKind t) {
    switch (t) {
        case TaskKind::kCopy: return "copy";
        case TaskKind::kReverse: return "reverse";
        case TaskKind::kSort: return "sort";
    }
    throw ValidationError("unknown task");
}

inline TaskKind task_from_name(const std::string& s) {
    if (s == "copy") return TaskKind::kCopy;
    if (s == "reverse") return TaskKind::kReverse;
    if (s == "sort") return TaskKind::kSort;
    throw ValidationError("unknown task: " + s + " (expected copy|reverse|sort)");
}

struct SeqPair {
    std::vector<int> src, tgt;  // both end with eos
};

struct Corpus {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kFirstToken = 3;

    TaskKind task = TaskKind::kReverse;
    std::uint64_t seed = 0;
    int vocab_size = 0;
    int min_len = 0, max_len = 0;
    std::vector<SeqPair> train, valid, test;
};

inline std::vector<int> apply_task(TaskKind task, const std::vector<int>& src) {
    std::vector<int> tgt = src;
    switch (task) {
        case TaskKind::kCopy: break;
        case TaskKind::kReverse: std::reverse(tgt.begin(), tgt.end()); break;
        case TaskKind::kSort: std::sort(tgt.begin(), tgt.end()); break;
    }
    return tgt;
}

// Deterministic under seed; the three splits are disjoint by source sequence.
inline Corpus generate_corpus(TaskKind task, int n_train, int n_valid, int n_test, int min_len, int max_len,
                              int vocab_size, std::uint64_t seed) {
    if (min_len < 1 || max_len < min_len) throw ValidationError("generate_corpus: bad length range");
    if (vocab_size <= Corpus::kFirstToken) throw ValidationError("generate_corpus: vocab too small");
    if (n_train < 0 || n_valid < 0 || n_test < 0 || n_train + n_valid + n_test < 1)
        throw ValidationError("generate_corpus: bad split sizes");

    Corpus c;
    c.task = task;
    c.seed = seed;
    c.vocab_size = vocab_size;
    c.min_len = min_len;
    c.max_len = max_len;

    Rng rng = derive_rng(seed, "corpus");
    std::set<std::vector<int>> seen;
    const int total = n_train + n_valid + n_test;
    for (int k = 0; k < total; ++k) {
        std::vector<int> src;
        for (int attempt = 0;; ++attempt) {
            if (attempt > 100000) throw ValidationError("generate_corpus: cannot draw enough distinct sources");
            const int len = rng.uniform_int(min_len, max_len);
            src.assign(static_cast<std::size_t>(len), 0);
            for (int& t : src) t = rng.uniform_int(Corpus::kFirstToken, vocab_size - 1);
            if (seen.insert(src).second) break;
        }
        std::vector<int> tgt = apply_task(task, src);
        src.push_back(Corpus::kEos);
        tgt.push_back(Corpus::kEos);
        SeqPair pair{std::move(src), std::move(tgt)};
        if (k < n_train)
            c.train.push_back(std::move(pair));
        else if (k < n_train + n_valid)
            c.valid.push_back(std::move(pair));
        else
            c.test.push_back(std::move(pair));
    }
    return c;
}

// Packs pairs into one teacher-forced batch: decoder input is bos followed by
// the target without its eos; gold is the target including eos.
inline Batch make_batch(const std::vector<SeqPair>& pairs, const std::vector<std::size_t>& indices) {
    Batch b;
    for (std::size_t idx : indices) {
        const SeqPair& p = pairs.at(idx);
        b.src_ids.insert(b.src_ids.end(), p.src.begin(), p.src.end());
        b.src_spans.push(p.src.size());
        b.tgt_in.push_back(Corpus::kBos);
        b.tgt_in.insert(b.tgt_in.end(), p.tgt.begin(), p.tgt.end() - 1);
        b.tgt_gold.insert(b.tgt_gold.end(), p.tgt.begin(), p.tgt.end());
        b.tgt_spans.push(p.tgt.size());
    }
    return b;
}

inline Batch make_batch_range(const std::vector<SeqPair>& pairs, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    return make_batch(pairs, idx);
}

// ---- corpus file ----
// Header (task, seed, sizes) plus the id sequences; regenerating from the
// header reproduces the file bitwise.

inline constexpr char kCorpusMagic[] = "HATCORP";
inline constexpr std::uint8_t kCorpusVersion = 1;

inline void save_corpus(const std::string& path, const Corpus& c) {
    auto os = io::open_out(path);
    io::write_bytes(os, kCorpusMagic, 7);
    io::write_u8(os, kCorpusVersion);
    io::write_str(os, task_name(c.task));
    io::write_u64(os, c.seed);
    io::write_u32(os, static_cast<std::uint32_t>(c.train.size()));
    io::write_u32(os, static_cast<std::uint32_t>(c.valid.size()));
    io::write_u32(os, static_cast<std::uint32_t>(c.test.size()));
    io::write_u32(os, static_cast<std::uint32_t>(c.vocab_size));
    io::write_u32(os, static_cast<std::uint32_t>(c.min_len));
    io::write_u32(os, static_cast<std::uint32_t>(c.max_len));
    auto write_split = [&](const std::vector<SeqPair>& split) {
        for (const SeqPair& p : split) {
            io::write_u32(os, static_cast<std::uint32_t>(p.src.size()));
            for (int t : p.src) io::write_u32(os, static_cast<std::uint32_t>(t));
            io::write_u32(os, static_cast<std::uint32_t>(p.tgt.size()));
            for (int t : p.tgt) io::write_u32(os, static_cast<std::uint32_t>(t));
        }
    };
    write_split(c.train);
    write_split(c.valid);
    write_split(c.test);
    if (!os) throw IoError("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kCorpusMagic, path);
    if (io::read_u8(is, path) != kCorpusVersion) throw IoError("unsupported corpus version in " + path);
    Corpus c;
    c.task = task_from_name(io::read_str(is, path));
    c.seed = io::read_u64(is, path);
    const auto n_train = io::read_u32(is, path);
    const auto n_valid = io::read_u32(is, path);
    const auto n_test = io::read_u32(is, path);
    c.vocab_size = static_cast<int>(io::read_u32(is, path));
    c.min_len = static_cast<int>(io::read_u32(is, path));
    c.max_len = static_cast<int>(io::read_u32(is, path));
    auto read_split = [&](std::vector<SeqPair>& split, std::uint32_t n) {
        split.resize(n);
        for (SeqPair& p : split) {
            p.src.resize(io::read_u32(is, path));
            for (int& t : p.src) t = static_cast<int>(io::read_u32(is, path));
            p.tgt.resize(io::read_u32(is, path));
            for (int& t : p.tgt) t = static_cast<int>(io::read_u32(is, path));
        }
    };
    read_split(c.train, n_train);
    read_split(c.valid, n_valid);
    read_split(c.test, n_test);
    return c;
}

}  // namespace hat
