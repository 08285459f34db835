#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hat/adam.hpp"
#include "hat/checkpoint.hpp"
#include "hat/graph.hpp"
#include "hat/latency.hpp"

namespace hat {

// Latency regressor: 10 -> 400 -> 400 -> 1 MLP with ReLU hidden activations.
// Features and latency are min-max normalized with training-split statistics,
// which are stored with the model.
struct LatencyPredictor {
    static constexpr std::size_t kInput = 10;
    static constexpr std::size_t kHidden = 400;

    Tensor w1, b1, w2, b2, w3, b3;
    std::array<double, kInput> feat_min{}, feat_max{};
    double lat_min = 0.0, lat_max = 0.0;

    std::array<double, kInput> normalize(const FeatureVector& f) const {
        std::array<double, kInput> out{};
        for (std::size_t i = 0; i < kInput; ++i) {
            const double range = feat_max[i] - feat_min[i];
            out[i] = range > 0.0 ? (f[i] - feat_min[i]) / range : 0.0;  // degenerate feature maps to 0
        }
        return out;
    }

    double denormalize_latency(double y) const {
        const double range = lat_max - lat_min;
        return lat_min + (range > 0.0 ? y * range : 0.0);
    }

    // Forward pass, denormalized to milliseconds and clamped at >= 0.
    double predict(const FeatureVector& f) const {
        const auto x = normalize(f);
        std::array<double, kHidden> h1{}, h2{};
        for (std::size_t j = 0; j < kHidden; ++j) {
            double acc = b1.data[j];
            for (std::size_t i = 0; i < kInput; ++i) acc += x[i] * w1.data[i * kHidden + j];
            h1[j] = acc > 0.0 ? acc : 0.0;
        }
        for (std::size_t j = 0; j < kHidden; ++j) {
            double acc = b2.data[j];
            for (std::size_t i = 0; i < kHidden; ++i) acc += h1[i] * w2.data[i * kHidden + j];
            h2[j] = acc > 0.0 ? acc : 0.0;
        }
        double y = b3.data[0];
        for (std::size_t i = 0; i < kHidden; ++i) y += h2[i] * w3.data[i];
        const double ms = denormalize_latency(y);
        return ms > 0.0 ? ms : 0.0;
    }
};

inline double rmse(const LatencyPredictor& p, const std::vector<const LatencyRecord*>& records) {
    if (records.empty()) throw ValidationError("rmse: empty record list");
    double acc = 0.0;
    for (const LatencyRecord* r : records) {
        const double d = p.predict(r->features) - r->latency_ms;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(records.size()));
}

struct PredictorMetrics {
    double train_rmse_ms = 0.0, valid_rmse_ms = 0.0, test_rmse_ms = 0.0;
    double mean_latency_ms = 0.0;
    int best_epoch = -1;
    std::vector<int> degenerate_features;  // constant on the training split
};

// Full-batch Adam on mean squared error in normalized space; the epoch with
// the best validation RMSE is kept.
inline LatencyPredictor train_predictor(const LatencyDataset& ds, int epochs, double lr, std::uint64_t seed,
                                        PredictorMetrics* metrics_out = nullptr) {
    const auto train = ds.split("train");
    const auto valid = ds.split("valid");
    const auto test = ds.split("test");
    if (train.empty() || valid.empty()) throw ValidationError("train_predictor: dataset must have train and valid splits");
    if (epochs < 1) throw ValidationError("train_predictor: epochs must be >= 1");

    LatencyPredictor p;
    for (std::size_t i = 0; i < LatencyPredictor::kInput; ++i) {
        p.feat_min[i] = train[0]->features[i];
        p.feat_max[i] = train[0]->features[i];
    }
    p.lat_min = p.lat_max = train[0]->latency_ms;
    for (const LatencyRecord* r : train) {
        for (std::size_t i = 0; i < LatencyPredictor::kInput; ++i) {
            p.feat_min[i] = std::min(p.feat_min[i], r->features[i]);
            p.feat_max[i] = std::max(p.feat_max[i], r->features[i]);
        }
        p.lat_min = std::min(p.lat_min, r->latency_ms);
        p.lat_max = std::max(p.lat_max, r->latency_ms);
    }

    PredictorMetrics metrics;
    for (std::size_t i = 0; i < LatencyPredictor::kInput; ++i)
        if (!(p.feat_max[i] - p.feat_min[i] > 0.0)) metrics.degenerate_features.push_back(static_cast<int>(i));

    const std::size_t n = train.size();
    Tensor x = Tensor::zeros({n, LatencyPredictor::kInput});
    Tensor y = Tensor::zeros({n, 1});
    const double lat_range = p.lat_max - p.lat_min;
    for (std::size_t r = 0; r < n; ++r) {
        const auto f = p.normalize(train[r]->features);
        for (std::size_t c = 0; c < LatencyPredictor::kInput; ++c) x.data[r * LatencyPredictor::kInput + c] = f[c];
        y.data[r] = lat_range > 0.0 ? (train[r]->latency_ms - p.lat_min) / lat_range : 0.0;
    }

    Rng rng = derive_rng(seed, "predictor-init");
    auto uniform_init = [&rng](std::vector<std::size_t> dims) {
        Tensor t = Tensor::zeros(std::move(dims));
        const double bound = 1.0 / std::sqrt(static_cast<double>(t.rows()));
        for (double& v : t.data) v = rng.uniform_range(-bound, bound);
        return t;
    };
    p.w1 = uniform_init({LatencyPredictor::kInput, LatencyPredictor::kHidden});
    p.b1 = Tensor::zeros({LatencyPredictor::kHidden});
    p.w2 = uniform_init({LatencyPredictor::kHidden, LatencyPredictor::kHidden});
    p.b2 = Tensor::zeros({LatencyPredictor::kHidden});
    p.w3 = uniform_init({LatencyPredictor::kHidden, 1});
    p.b3 = Tensor::zeros({1});

    AdamConfig acfg{lr, 0.9, 0.999, 1e-8};
    std::map<std::string, AdamState> opt;
    std::map<std::string, Tensor*> params{{"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2},
                                          {"b2", &p.b2}, {"w3", &p.w3}, {"b3", &p.b3}};
    for (auto& [name, t] : params) opt.emplace(name, AdamState::like(*t));

    LatencyPredictor best = p;
    double best_valid = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Graph g;
        std::map<std::string, Node*> leaves;
        for (auto& [name, t] : params) leaves[name] = g.leaf(*t);
        Node* xin = g.constant(x);
        Node* h1 = g.relu(g.add_bias(g.matmul(xin, leaves["w1"]), leaves["b1"]));
        Node* h2 = g.relu(g.add_bias(g.matmul(h1, leaves["w2"]), leaves["b2"]));
        Node* pred = g.add_bias(g.matmul(h2, leaves["w3"]), leaves["b3"]);
        Node* loss = g.mse_loss(pred, y);
        if (!std::isfinite(loss->val.data[0])) throw DivergenceError("train_predictor: non-finite loss");
        g.backward(loss);
        for (auto& [name, t] : params) adam_step(*t, leaves[name]->grad, opt.at(name), acfg);
        const double v = rmse(p, valid);
        if (v < best_valid) {
            best_valid = v;
            best = p;
            metrics.best_epoch = epoch;
        }
    }

    metrics.train_rmse_ms = rmse(best, train);
    metrics.valid_rmse_ms = best_valid;
    if (!test.empty()) metrics.test_rmse_ms = rmse(best, test);
    double mean = 0.0;
    for (const auto& r : ds.records) mean += r.latency_ms;
    metrics.mean_latency_ms = mean / static_cast<double>(ds.records.size());
    if (metrics_out) *metrics_out = metrics;
    return best;
}

// ---- predictor file ----
// Same container conventions as the checkpoint (named blocks with dims), with
// 64-bit values so a saved predictor reproduces its predictions exactly.

inline constexpr char kPredictorMagic[] = "HATPRED";
inline constexpr std::uint8_t kPredictorVersion = 1;

inline void save_predictor(const std::string& path, const LatencyPredictor& p) {
    auto os = io::open_out(path);
    io::write_bytes(os, kPredictorMagic, 7);
    io::write_u8(os, kPredictorVersion);
    json stats{{"feat_min", std::vector<double>(p.feat_min.begin(), p.feat_min.end())},
               {"feat_max", std::vector<double>(p.feat_max.begin(), p.feat_max.end())},
               {"lat_min", p.lat_min},
               {"lat_max", p.lat_max}};
    io::write_str(os, stats.dump());
    const std::vector<std::pair<std::string, const Tensor*>> blocks{{"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2},
                                                                    {"b2", &p.b2}, {"w3", &p.w3}, {"b3", &p.b3}};
    io::write_u32(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, t] : blocks) {
        io::write_block_header(os, name, *t);
        for (double v : t->data) io::write_f64(os, v);
    }
    if (!os) throw IoError("write failed: " + path);
}

inline LatencyPredictor load_predictor(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kPredictorMagic, path);
    if (io::read_u8(is, path) != kPredictorVersion) throw IoError("unsupported predictor version in " + path);
    const json stats = json::parse(io::read_str(is, path));
    LatencyPredictor p;
    const auto fmin = stats.at("feat_min").get<std::vector<double>>();
    const auto fmax = stats.at("feat_max").get<std::vector<double>>();
    if (fmin.size() != p.feat_min.size() || fmax.size() != p.feat_max.size())
        throw IoError("bad normalization stats in " + path);
    std::copy(fmin.begin(), fmin.end(), p.feat_min.begin());
    std::copy(fmax.begin(), fmax.end(), p.feat_max.begin());
    stats.at("lat_min").get_to(p.lat_min);
    stats.at("lat_max").get_to(p.lat_max);
    std::map<std::string, Tensor*> params{{"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2},
                                          {"b2", &p.b2}, {"w3", &p.w3}, {"b3", &p.b3}};
    const std::uint32_t n_blocks = io::read_u32(is, path);
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        auto [name, dims] = io::read_block_header(is, path);
        auto it = params.find(name);
        if (it == params.end()) throw IoError("unknown predictor block in " + path + ": " + name);
        Tensor t = Tensor::zeros(dims);
        for (double& v : t.data) v = io::read_f64(is, path);
        *it->second = std::move(t);
    }
    if (p.w1.size() != LatencyPredictor::kInput * LatencyPredictor::kHidden)
        throw IoError("predictor layer shapes wrong in " + path);
    return p;
}

}  // namespace hat
