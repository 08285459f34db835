#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hat/adam.hpp"
#include "hat/decode.hpp"
#include "hat/supernet.hpp"
#include "hat/task.hpp"

namespace hat {

enum class Schedule { kCosine, kInvSqrt };

inline std::string schedule_name(Schedule s) { return s == Schedule::kCosine ? "cosine" : "inv_sqrt"; }
inline Schedule schedule_from_name(const std::string& s) {
    if (s == "cosine") return Schedule::kCosine;
    if (s == "inv_sqrt") return Schedule::kInvSqrt;
    throw ValidationError("unknown schedule: " + s + " (expected cosine|inv_sqrt)");
}

struct TrainConfig {
    int total_steps = 8000;
    int warmup_steps = 400;
    double lr_max = 1e-3;
    double lr_min = 1e-7;
    Schedule schedule = Schedule::kCosine;
    int batch_size = 64;
    double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;
    std::uint64_t seed = 1;
    double label_smoothing = 0.1;

    void validate() const {
        if (total_steps < 1) throw ValidationError("TrainConfig: total_steps must be >= 1");
        if (warmup_steps < 0 || warmup_steps >= total_steps)
            throw ValidationError("TrainConfig: warmup_steps must be in [0, total_steps)");
        if (lr_min > lr_max) throw ValidationError("TrainConfig: lr_min must be <= lr_max");
        if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ValidationError("TrainConfig: label_smoothing must be in [0, 1)");
    }
};

// Linear warmup from lr_min to lr_max over warmup_steps, then either cosine
// annealing back to lr_min over the remaining steps or inverse-square-root
// decay from lr_max.
inline double lr_at(int step, const TrainConfig& cfg) {
    cfg.validate();
    if (step < 0 || step > cfg.total_steps) throw ValidationError("lr_at: step out of range");
    if (step <= cfg.warmup_steps) {
        if (cfg.warmup_steps == 0) return cfg.lr_max;
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * static_cast<double>(step) / cfg.warmup_steps;
    }
    if (cfg.schedule == Schedule::kCosine) {
        constexpr double kPi = 3.14159265358979323846;
        const double progress =
            static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
        return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(kPi * progress));
    }
    const double w = cfg.warmup_steps > 0 ? cfg.warmup_steps : 1.0;
    return cfg.lr_max * std::sqrt(w / static_cast<double>(step));
}

struct TraceRow {
    int step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fprintf(f, "step,lr,train_loss,val_loss\n");
    for (const TraceRow& r : rows) {
        std::fprintf(f, "%d,%.17g,%.17g,", r.step, r.lr, r.train_loss);
        if (r.val_loss) std::fprintf(f, "%.17g", *r.val_loss);
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

// ---- validation ----

// Mean teacher-forced cross-entropy over a split, without label smoothing.
// Read-only; deterministic for fixed weights and split.
inline double validate(const SlicedWeights& w, const std::vector<SeqPair>& split, std::size_t chunk = 128) {
    if (split.empty()) return 0.0;
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    for (std::size_t begin = 0; begin < split.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, split.size());
        Batch b = make_batch_range(split, begin, end);
        Graph g;
        ForwardGraph fg = build_forward(g, w, b, /*trainable=*/false);
        Node* loss = g.cross_entropy(fg.logits, b.tgt_gold, Corpus::kPad, 0.0);
        const std::size_t tokens = b.tgt_gold.size();
        loss_sum += loss->val.data[0] * static_cast<double>(tokens);
        token_sum += tokens;
    }
    return loss_sum / static_cast<double>(token_sum);
}

inline double validate(const SuperWeights& super, const ArchConfig& arch, const std::vector<SeqPair>& split) {
    return validate(extract_sub(super, arch), split);
}

// ---- knowledge distillation ----

// Per position: the teacher's top-k classes, probabilities renormalized over
// those k; everything else zero.
inline Tensor topk_renormalized(const Tensor& teacher_logits, int k) {
    const std::size_t t = teacher_logits.rows(), v = teacher_logits.cols();
    if (k < 1 || static_cast<std::size_t>(k) > v) throw ValidationError("topk_renormalized: bad k");
    Tensor target = Tensor::zeros({t, v});
    std::vector<std::pair<double, std::size_t>> order(v);
    for (std::size_t i = 0; i < t; ++i) {
        const double* row = teacher_logits.data.data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < v; ++j) order[j] = {std::exp(row[j] - mx) / sum, j};
        std::stable_sort(order.begin(), order.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        double topk_mass = 0.0;
        for (int j = 0; j < k; ++j) topk_mass += order[static_cast<std::size_t>(j)].first;
        for (int j = 0; j < k; ++j)
            target.data[i * v + order[static_cast<std::size_t>(j)].second] =
                order[static_cast<std::size_t>(j)].first / topk_mass;
    }
    return target;
}

// lambda * soft cross-entropy against the teacher's renormalized top-k
// distribution + (1 - lambda) * hard cross-entropy against gold.
inline Node* kd_loss(Graph& g, Node* student_logits, const Tensor& teacher_logits, const std::vector<int>& gold,
                     int k, double lambda, int pad_id = Corpus::kPad) {
    if (lambda < 0.0 || lambda > 1.0) throw ValidationError("kd_loss: lambda out of range");
    Tensor target = topk_renormalized(teacher_logits, k);
    std::vector<char> mask(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) mask[i] = gold[i] != pad_id;
    Node* soft = g.soft_cross_entropy(student_logits, std::move(target), std::move(mask));
    Node* hard = g.cross_entropy(student_logits, gold, pad_id, 0.0);
    return g.add(g.scale(soft, lambda), g.scale(hard, 1.0 - lambda));
}

struct KdTeacher {
    SlicedWeights weights;
    double lambda = 0.5;
    int topk = 5;
};

// ---- training loops ----

namespace detail {

inline std::vector<std::size_t> draw_batch_indices(Rng& rng, std::size_t n, int batch_size) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) i = static_cast<std::size_t>(rng.next_below(n));
    return idx;
}

inline void check_finite_loss(double loss, int step) {
    if (!std::isfinite(loss))
        throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step));
}

}  // namespace detail

struct SuperTrainResult {
    std::vector<TraceRow> trace;
};

// One uniformly sampled SubTransformer per step; forward/backward runs
// through its slices and Adam touches only those entries (moments and step
// counts of untouched entries do not advance).
inline SuperTrainResult train_supernet(SuperWeights& super, const Corpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.train.empty()) throw ValidationError("train_supernet: empty training split");
    if (corpus.max_len + 2 > super.space().max_seq_len)
        throw ValidationError("train_supernet: corpus length exceeds the space's max_seq_len");
    Rng rng_arch = derive_rng(cfg.seed, "arch");
    Rng rng_batch = derive_rng(cfg.seed, "batch");
    std::map<std::string, AdamState> opt;
    for (const auto& [name, t] : super.blocks()) opt.emplace(name, AdamState::like(t));

    SuperTrainResult result;
    result.trace.reserve(static_cast<std::size_t>(cfg.total_steps));
    for (int step = 0; step < cfg.total_steps; ++step) {
        const ArchConfig arch = sample_uniform(super.space(), rng_arch);
        const auto idx = detail::draw_batch_indices(rng_batch, corpus.train.size(), cfg.batch_size);
        const Batch batch = make_batch(corpus.train, idx);
        const SlicedWeights sliced = extract_sub(super, arch);
        Graph g;
        ForwardGraph fg = build_forward(g, sliced, batch, /*trainable=*/true);
        Node* loss = g.cross_entropy(fg.logits, batch.tgt_gold, Corpus::kPad, cfg.label_smoothing);
        detail::check_finite_loss(loss->val.data[0], step);
        g.backward(loss);
        AdamConfig acfg{lr_at(step, cfg), cfg.beta1, cfg.beta2, cfg.eps};
        for (const auto& [name, leaf] : fg.leaves) {
            Tensor& param = super.mutable_blocks().at(name);
            adam_step_region(param, leaf->grad, opt.at(name), acfg, leaf->grad.rows(), leaf->grad.cols());
        }
        result.trace.push_back(TraceRow{step, acfg.lr, loss->val.data[0], std::nullopt});
    }
    return result;
}

struct SubTrainResult {
    SlicedWeights weights;
    std::vector<TraceRow> trace;
    double final_val_loss = 0.0;
};

// Standalone training of one architecture. With `init` null the weights are
// freshly initialized (from-scratch); passing extracted supernet slices gives
// inherit-finetune. The optional teacher mixes in top-k soft labels.
inline SubTrainResult train_sub(const DesignSpace& space, const ArchConfig& arch, const Corpus& corpus,
                                const TrainConfig& cfg, const SlicedWeights* init = nullptr,
                                const KdTeacher* teacher = nullptr) {
    cfg.validate();
    validate_arch(space, arch);
    if (corpus.train.empty()) throw ValidationError("train_sub: empty training split");
    if (corpus.max_len + 2 > space.max_seq_len)
        throw ValidationError("train_sub: corpus length exceeds the space's max_seq_len");
    SubTrainResult result;
    if (init) {
        if (init->arch != arch) throw ValidationError("train_sub: init weights built for a different arch");
        result.weights = *init;
    } else {
        Rng rng_init = derive_rng(cfg.seed, "init");
        result.weights = init_sub(space, arch, rng_init);
    }
    if (teacher) validate_arch(teacher->weights.space, teacher->weights.arch);

    Rng rng_batch = derive_rng(cfg.seed, "batch");
    std::map<std::string, AdamState> opt;
    for (const auto& [name, t] : result.weights.blocks) opt.emplace(name, AdamState::like(t));

    result.trace.reserve(static_cast<std::size_t>(cfg.total_steps));
    for (int step = 0; step < cfg.total_steps; ++step) {
        const auto idx = detail::draw_batch_indices(rng_batch, corpus.train.size(), cfg.batch_size);
        const Batch batch = make_batch(corpus.train, idx);
        Graph g;
        ForwardGraph fg = build_forward(g, result.weights, batch, /*trainable=*/true);
        Node* loss = nullptr;
        if (teacher) {
            Graph tg;
            ForwardGraph tfg = build_forward(tg, teacher->weights, batch, /*trainable=*/false);
            loss = kd_loss(g, fg.logits, tfg.logits->val, batch.tgt_gold, teacher->topk, teacher->lambda);
        } else {
            loss = g.cross_entropy(fg.logits, batch.tgt_gold, Corpus::kPad, cfg.label_smoothing);
        }
        detail::check_finite_loss(loss->val.data[0], step);
        g.backward(loss);
        AdamConfig acfg{lr_at(step, cfg), cfg.beta1, cfg.beta2, cfg.eps};
        for (const auto& [name, leaf] : fg.leaves) {
            Tensor& param = result.weights.blocks.at(name);
            adam_step_region(param, leaf->grad, opt.at(name), acfg, param.rows(), param.cols());
        }
        result.trace.push_back(TraceRow{step, acfg.lr, loss->val.data[0], std::nullopt});
    }
    result.final_val_loss = validate(result.weights, corpus.valid);
    return result;
}

inline SubTrainResult finetune_inherited(const SuperWeights& super, const ArchConfig& arch, const Corpus& corpus,
                                         const TrainConfig& cfg_short, const KdTeacher* teacher = nullptr) {
    const SlicedWeights inherited = extract_sub(super, arch);
    return train_sub(super.space(), arch, corpus, cfg_short, &inherited, teacher);
}

}  // namespace hat
