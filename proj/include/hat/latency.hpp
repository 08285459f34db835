#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "hat/decode.hpp"
#include "hat/supernet.hpp"

namespace hat {

// Sort, drop floor(trim * n) samples from each end, average the rest.
inline double robust_mean(std::vector<double> values, double trim) {
    if (values.empty()) throw ValidationError("robust_mean: empty input");
    if (trim < 0.0 || trim >= 0.5) throw ValidationError("robust_mean: trim must be in [0, 0.5)");
    std::sort(values.begin(), values.end());
    const auto drop = static_cast<std::size_t>(trim * static_cast<double>(values.size()));
    double sum = 0.0;
    for (std::size_t i = drop; i < values.size() - drop; ++i) sum += values[i];
    return sum / static_cast<double>(values.size() - 2 * drop);
}

struct MeasureParams {
    int src_len = 16;   // content tokens; eos is appended
    int tgt_len = 16;   // forced decode steps
    int n_runs = 300;
    int warmup_runs = 20;
    double trim = 0.1;
};

struct LatencyMeasurement {
    double latency_ms = 0.0;
    bool timer_warn = false;  // clock resolution coarser than 1% of the value
};

namespace detail {

inline double steady_clock_resolution_ms() {
    static const double res = [] {
        using clock = std::chrono::steady_clock;
        double best = 1e9;
        for (int i = 0; i < 2000; ++i) {
            const auto a = clock::now();
            auto b = clock::now();
            while (b == a) b = clock::now();
            best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
        }
        return best;
    }();
    return res;
}

}  // namespace detail

// Wall-clock time of a full greedy autoregressive decode: tgt_len forced
// steps given a src_len source (token values are irrelevant and fixed).
// warmup_runs decodes run untimed first; the timed samples are reduced with
// robust_mean.
inline LatencyMeasurement measure_latency(const SlicedWeights& w, const MeasureParams& p) {
    if (p.src_len < 1 || p.tgt_len < 1 || p.n_runs < 1) throw ValidationError("measure_latency: bad parameters");
    std::vector<int> src(static_cast<std::size_t>(p.src_len), Corpus::kFirstToken);
    src.push_back(Corpus::kEos);
    IncrementalDecoder dec(w);
    auto decode_once = [&] {
        dec.encode(src);
        auto st = dec.initial_state();
        int tok = Corpus::kBos;
        for (int t = 0; t < p.tgt_len; ++t) tok = argmax_token(dec.step(st, tok));
        return tok;
    };
    volatile int sink = 0;
    for (int i = 0; i < p.warmup_runs; ++i) sink = sink + decode_once();
    std::vector<double> samples(static_cast<std::size_t>(p.n_runs));
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < p.n_runs; ++i) {
        const auto t0 = clock::now();
        sink = sink + decode_once();
        const auto t1 = clock::now();
        samples[static_cast<std::size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    (void)sink;
    LatencyMeasurement m;
    m.latency_ms = robust_mean(samples, p.trim);
    m.timer_warn = detail::steady_clock_resolution_ms() > 0.01 * m.latency_ms;
    return m;
}

inline LatencyMeasurement measure_latency(const SuperWeights& super, const ArchConfig& arch, const MeasureParams& p) {
    return measure_latency(extract_sub(super, arch), p);
}

struct LatencyRecord {
    ArchConfig arch;
    FeatureVector features{};
    double latency_ms = 0.0;
    int n_runs = 0;
    std::string host;
    std::string split;  // train|valid|test
    bool timer_warn = false;
};

struct LatencyDataset {
    std::vector<LatencyRecord> records;

    std::vector<const LatencyRecord*> split(const std::string& name) const {
        std::vector<const LatencyRecord*> out;
        for (const auto& r : records)
            if (r.split == name) out.push_back(&r);
        return out;
    }
};

// Uniformly sampled architectures, measured on this host. The architecture
// list and the 8:1:1 split assignment are deterministic under the seed; the
// latencies themselves are physical.
inline LatencyDataset collect_dataset(const SuperWeights& super, int n_samples, const MeasureParams& p,
                                      const std::string& host, std::uint64_t seed) {
    if (n_samples < 1) throw ValidationError("collect_dataset: n_samples must be >= 1");
    Rng rng_arch = derive_rng(seed, "latency-arch");
    Rng rng_split = derive_rng(seed, "latency-split");
    const auto n = static_cast<std::size_t>(n_samples);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng_split.next_below(i))]);
    const auto n_train = static_cast<std::size_t>(0.8 * static_cast<double>(n));
    const auto n_valid = static_cast<std::size_t>(0.9 * static_cast<double>(n)) - n_train;
    std::vector<std::string> splits(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rank = order[i];
        splits[i] = rank < n_train ? "train" : (rank < n_train + n_valid ? "valid" : "test");
    }

    LatencyDataset ds;
    ds.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        LatencyRecord r;
        r.arch = sample_uniform(super.space(), rng_arch);
        r.features = encode_features(r.arch);
        const LatencyMeasurement m = measure_latency(super, r.arch, p);
        r.latency_ms = m.latency_ms;
        r.timer_warn = m.timer_warn;
        r.n_runs = p.n_runs;
        r.host = host;
        r.split = splits[i];
        ds.records.push_back(std::move(r));
    }
    return ds;
}

// ---- dataset file: one JSON record per line ----

inline json record_to_json(const LatencyRecord& r) {
    json j{{"arch", r.arch},
           {"features", std::vector<double>(r.features.begin(), r.features.end())},
           {"latency_ms", r.latency_ms},
           {"n_runs", r.n_runs},
           {"host", r.host},
           {"split", r.split}};
    if (r.timer_warn) j["timer_warn"] = true;
    return j;
}

inline LatencyRecord record_from_json(const json& j) {
    LatencyRecord r;
    j.at("arch").get_to(r.arch);
    std::vector<double> f = j.at("features").get<std::vector<double>>();
    if (f.size() != r.features.size()) throw IoError("latency record: feature vector must have 10 entries");
    std::copy(f.begin(), f.end(), r.features.begin());
    j.at("latency_ms").get_to(r.latency_ms);
    j.at("n_runs").get_to(r.n_runs);
    j.at("host").get_to(r.host);
    j.at("split").get_to(r.split);
    r.timer_warn = j.value("timer_warn", false);
    return r;
}

inline void save_latency_dataset(const std::string& path, const LatencyDataset& ds) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const auto& r : ds.records) os << record_to_json(r).dump() << "\n";
    if (!os) throw IoError("write failed: " + path);
}

inline LatencyDataset load_latency_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    LatencyDataset ds;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ds.records.push_back(record_from_json(json::parse(line)));
    }
    return ds;
}

}  // namespace hat
