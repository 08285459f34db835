#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hat/decode.hpp"
#include "hat/trainer.hpp"

namespace hat {

// Kendall rank correlation with tie correction (tau-b). Fully tied inputs
// have an undefined tau; 0 is returned for that degenerate case.
inline double kendall_tau_b(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("kendall_tau_b: length mismatch");
    if (xs.empty()) throw ValidationError("kendall_tau_b: empty input");
    const std::size_t n = xs.size();
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
            if (dx == 0.0 && dy == 0.0) {
                ++ties_x;
                ++ties_y;
            } else if (dx == 0.0) {
                ++ties_x;
            } else if (dy == 0.0) {
                ++ties_y;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const auto n0 = static_cast<long long>(n * (n - 1) / 2);
    const double denom = std::sqrt(static_cast<double>(n0 - ties_x)) * std::sqrt(static_cast<double>(n0 - ties_y));
    if (denom == 0.0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

struct ProxyRow {
    ArchConfig arch;
    double inherited_val_loss = 0.0;
    double scratch_val_loss = 0.0;
    double scratch_token_acc = 0.0;
};

struct ProxyReport {
    std::vector<ProxyRow> rows;
    double kendall_tau = 0.0;  // inherited loss vs from-scratch loss
};

inline ArchConfig minimal_arch(const DesignSpace& s) {
    ArchConfig a = detail::empty_arch(s);
    detail::for_each_gene(a, s, [](int& v, const std::vector<int>& choices) { v = choices.front(); });
    return a;
}

inline ArchConfig maximal_arch(const DesignSpace& s) {
    ArchConfig a = detail::empty_arch(s);
    detail::for_each_gene(a, s, [](int& v, const std::vector<int>& choices) { v = choices.back(); });
    return a;
}

// Compares the inherited-weights loss ordering against from-scratch training:
// the smallest and largest architectures plus uniform samples, each trained
// from scratch with scratch_cfg (per-architecture derived seeds).
inline ProxyReport run_proxy_study(const SuperWeights& super, const Corpus& corpus, int n_archs,
                                   const TrainConfig& scratch_cfg, std::uint64_t seed) {
    if (n_archs < 2) throw ValidationError("run_proxy_study: need at least two architectures");
    scratch_cfg.validate();
    const DesignSpace& space = super.space();
    std::vector<ArchConfig> archs{minimal_arch(space), maximal_arch(space)};
    Rng rng = derive_rng(seed, "proxy-archs");
    while (static_cast<int>(archs.size()) < n_archs) archs.push_back(sample_uniform(space, rng));

    ProxyReport report;
    for (std::size_t i = 0; i < archs.size(); ++i) {
        ProxyRow row;
        row.arch = archs[i];
        row.inherited_val_loss = validate(super, row.arch, corpus.valid);
        TrainConfig cfg = scratch_cfg;
        cfg.seed = splitmix64(seed ^ fnv1a64("proxy-scratch") ^ (0x9e3779b97f4a7c15ull * (i + 1)));
        SubTrainResult r = train_sub(space, row.arch, corpus, cfg);
        row.scratch_val_loss = r.final_val_loss;
        row.scratch_token_acc =
            sequence_accuracy(r.weights, corpus.test, /*beam=*/1, /*length_penalty=*/0.0, space.max_seq_len).token_acc;
        report.rows.push_back(std::move(row));
    }
    std::vector<double> inherited, scratch;
    for (const auto& r : report.rows) {
        inherited.push_back(r.inherited_val_loss);
        scratch.push_back(r.scratch_val_loss);
    }
    report.kendall_tau = kendall_tau_b(inherited, scratch);
    return report;
}

inline json proxy_report_to_json(const ProxyReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back(json{{"arch", row.arch},
                            {"inherited_val_loss", row.inherited_val_loss},
                            {"scratch_val_loss", row.scratch_val_loss},
                            {"scratch_token_acc", row.scratch_token_acc}});
    return json{{"rows", rows}, {"kendall_tau", r.kendall_tau}};
}

inline ProxyReport proxy_report_from_json(const json& j) {
    ProxyReport r;
    for (const auto& jr : j.at("rows")) {
        ProxyRow row;
        jr.at("arch").get_to(row.arch);
        jr.at("inherited_val_loss").get_to(row.inherited_val_loss);
        jr.at("scratch_val_loss").get_to(row.scratch_val_loss);
        jr.at("scratch_token_acc").get_to(row.scratch_token_acc);
        r.rows.push_back(std::move(row));
    }
    j.at("kendall_tau").get_to(r.kendall_tau);
    return r;
}

}  // namespace hat
