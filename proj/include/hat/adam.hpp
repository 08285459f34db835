#pragma once

#include <cmath>
#include <cstdint>

#include "hat/tensor.hpp"

namespace hat {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// Moments and step counts are kept per entry: when only a slice of a shared
// parameter block is touched, the untouched entries' moments and bias
// corrections do not advance.
struct AdamState {
    Tensor m, v;
    std::vector<std::uint32_t> t;

    static AdamState like(const Tensor& p) {
        AdamState s;
        s.m = Tensor::zeros(p.shape);
        s.v = Tensor::zeros(p.shape);
        s.t.assign(p.size(), 0);
        return s;
    }
};

// Updates the leading rows x cols region of `p` ([R,C] row-major; rank-1
// tensors are treated as [n,1]). `g` is the compact [rows,cols] gradient of
// that region.
inline void adam_step_region(Tensor& p, const Tensor& g, AdamState& s, const AdamConfig& cfg, std::size_t rows,
                             std::size_t cols) {
    if (g.size() != rows * cols) throw DimensionError("adam_step_region: gradient size mismatch");
    if (rows > p.rows() || cols > p.cols()) throw DimensionError("adam_step_region: region exceeds parameter");
    const std::size_t stride = p.cols();
    // consecutive entries almost always share a step count; cache the
    // bias-correction terms for the last one seen
    std::uint32_t cached_t = 0;
    double corr1 = 1.0, corr2 = 1.0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t pi = i * stride + j;
            const double gv = g.data[i * cols + j];
            const std::uint32_t t = ++s.t[pi];
            double mv = s.m.data[pi] = cfg.beta1 * s.m.data[pi] + (1.0 - cfg.beta1) * gv;
            double vv = s.v.data[pi] = cfg.beta2 * s.v.data[pi] + (1.0 - cfg.beta2) * gv * gv;
            if (t != cached_t) {
                cached_t = t;
                corr1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
                corr2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
            }
            const double mhat = mv / corr1;
            const double vhat = vv / corr2;
            p.data[pi] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

inline void adam_step(Tensor& p, const Tensor& g, AdamState& s, const AdamConfig& cfg) {
    adam_step_region(p, g, s, cfg, p.rows(), p.cols());
}

}  // namespace hat
