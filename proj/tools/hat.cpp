// hat: one binary driving the whole pipeline. Stages read and write the
// artifact files documented in the README; every numeric knob has a flag,
// with optional defaults from a JSON run-config (flag > HAT_SEED/config >
// built-in default).

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <unistd.h>

#include "hat/hat.hpp"

namespace {

using hat::json;

bool g_quiet = false;

void logline(const std::string& kv) {
    if (!g_quiet) std::printf("%s\n", kv.c_str());
}

void result_line(const std::string& kv) { std::printf("%s\n", kv.c_str()); }

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw hat::IoError("cannot open: " + path);
    return json::parse(is);
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw hat::IoError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
    if (!os) throw hat::IoError("write failed: " + path);
}

// dotted-path lookup into the run config, e.g. "train_supernet.total_steps"
const json* config_find(const json& cfg, const std::string& dotted) {
    const json* cur = &cfg;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', pos);
        const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string::npos) return cur;
        pos = dot + 1;
    }
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 1;
    bool seed_from_flag = false;
    json cfg = json::object();

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run-config JSON providing defaults for any flag");
        cmd->add_option("--seed", seed, "global stage seed")->each([this](const std::string&) { seed_from_flag = true; });
        cmd->add_flag("--quiet", g_quiet, "suppress progress lines");
    }

    void finalize() {
        if (!config_path.empty()) cfg = load_json_file(config_path);
        if (!seed_from_flag) {
            if (const char* env = std::getenv("HAT_SEED")) {
                seed = std::strtoull(env, nullptr, 10);
            } else if (const json* j = config_find(cfg, "seed")) {
                seed = j->get<std::uint64_t>();
            }
        }
    }

    template <class T>
    void fallback(CLI::App* cmd, const std::string& flag, const std::string& key, T& value) const {
        if (cmd->count(flag) > 0) return;
        if (const json* j = config_find(cfg, key)) value = j->get<T>();
    }
};

hat::DesignSpace resolve_space(const Common& common, const std::string& space_path) {
    if (!space_path.empty()) return load_json_file(space_path).get<hat::DesignSpace>();
    if (const json* j = config_find(common.cfg, "space")) return j->get<hat::DesignSpace>();
    return hat::DesignSpace::desk_default();
}

hat::ArchConfig load_arch_or_report(const std::string& path) {
    const json j = load_json_file(path);
    if (j.contains("evolution") && j["evolution"].contains("best_arch"))
        return j["evolution"]["best_arch"].get<hat::ArchConfig>();
    if (j.contains("best_arch")) return j["best_arch"].get<hat::ArchConfig>();
    return j.get<hat::ArchConfig>();
}

// dense or quantized sub-weights file
hat::SlicedWeights load_weights_any(const std::string& path, const hat::ArchConfig& arch) {
    auto is = hat::io::open_in(path);
    hat::io::expect_magic(is, hat::kCheckpointMagic, path);
    const std::uint8_t version = hat::io::read_u8(is, path);
    is.close();
    if (version == hat::kCheckpointVersionQuantized) {
        hat::QuantizedModel qm = hat::load_quantized(path);
        if (!(qm.arch == arch)) throw hat::ValidationError("arch JSON does not match the quantized checkpoint");
        return hat::dequantize_model(qm);
    }
    return hat::load_sub_weights(path, arch);
}

std::string host_name() {
    char buf[256] = {0};
    if (gethostname(buf, sizeof(buf) - 1) == 0 && buf[0]) return buf;
    return "unknown-host";
}

hat::TrainConfig train_config_from(const Common& common, CLI::App* cmd, const std::string& section, int steps,
                                   int warmup, const std::string& schedule, double lr_max, double lr_min, int batch,
                                   double label_smoothing) {
    hat::TrainConfig cfg;
    cfg.total_steps = steps;
    cfg.warmup_steps = warmup;
    cfg.schedule = hat::schedule_from_name(schedule);
    cfg.lr_max = lr_max;
    cfg.lr_min = lr_min;
    cfg.batch_size = batch;
    cfg.label_smoothing = label_smoothing;
    cfg.seed = common.seed;
    (void)cmd;
    (void)section;
    return cfg;
}

void add_train_flags(CLI::App* cmd, int& steps, int& warmup, std::string& schedule, double& lr_max, double& lr_min,
                     int& batch, double& label_smoothing) {
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--warmup", warmup, "linear warmup steps");
    cmd->add_option("--schedule", schedule, "cosine|inv_sqrt");
    cmd->add_option("--lr-max", lr_max, "peak learning rate");
    cmd->add_option("--lr-min", lr_min, "initial/final learning rate");
    cmd->add_option("--batch", batch, "sequences per step");
    cmd->add_option("--label-smoothing", label_smoothing, "training label smoothing");
}

void maybe_write_trace(const std::string& path, const std::vector<hat::TraceRow>& trace) {
    if (!path.empty()) {
        hat::write_trace_csv(path, trace);
        logline("trace=" + path);
    }
}

int run(int argc, char** argv) {
    CLI::App app{"hat: hardware-aware transformer architecture search toolkit"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic seq2seq corpus");
    Common gen_common;
    gen_common.attach(gen);
    std::string gen_task = "reverse", gen_out;
    int gen_train = 20000, gen_valid = 1000, gen_test = 1000, gen_min = 4, gen_max = 16, gen_vocab = 32;
    gen->add_option("--task", gen_task, "copy|reverse|sort");
    gen->add_option("--n-train", gen_train);
    gen->add_option("--n-valid", gen_valid);
    gen->add_option("--n-test", gen_test);
    gen->add_option("--min-len", gen_min);
    gen->add_option("--max-len", gen_max);
    gen->add_option("--vocab", gen_vocab);
    gen->add_option("--out", gen_out, "corpus file")->required();
    gen->callback([&] {
        gen_common.finalize();
        gen_common.fallback(gen, "--task", "data.task", gen_task);
        gen_common.fallback(gen, "--n-train", "data.n_train", gen_train);
        gen_common.fallback(gen, "--n-valid", "data.n_valid", gen_valid);
        gen_common.fallback(gen, "--n-test", "data.n_test", gen_test);
        gen_common.fallback(gen, "--min-len", "data.min_len", gen_min);
        gen_common.fallback(gen, "--max-len", "data.max_len", gen_max);
        gen_common.fallback(gen, "--vocab", "data.vocab_size", gen_vocab);
        hat::Corpus c = hat::generate_corpus(hat::task_from_name(gen_task), gen_train, gen_valid, gen_test, gen_min,
                                             gen_max, gen_vocab, gen_common.seed);
        hat::save_corpus(gen_out, c);
        result_line("stage=gen-data task=" + gen_task + " out=" + gen_out +
                    " train=" + std::to_string(c.train.size()) + " valid=" + std::to_string(c.valid.size()) +
                    " test=" + std::to_string(c.test.size()));
    });

    // ---- train-supernet ----
    auto* ts = app.add_subcommand("train-supernet", "train the weight-shared supernet with uniform sampling");
    Common ts_common;
    ts_common.attach(ts);
    std::string ts_corpus, ts_out, ts_space, ts_trace, ts_schedule = "cosine";
    int ts_steps = 8000, ts_warmup = 400, ts_batch = 64;
    double ts_lr_max = 1e-3, ts_lr_min = 1e-7, ts_ls = 0.1;
    ts->add_option("--corpus", ts_corpus)->required();
    ts->add_option("--out", ts_out, "checkpoint file")->required();
    ts->add_option("--space", ts_space, "design-space JSON (default: built-in desk space)");
    ts->add_option("--trace-csv", ts_trace, "loss trace CSV");
    add_train_flags(ts, ts_steps, ts_warmup, ts_schedule, ts_lr_max, ts_lr_min, ts_batch, ts_ls);
    ts->callback([&] {
        ts_common.finalize();
        ts_common.fallback(ts, "--steps", "train_supernet.total_steps", ts_steps);
        ts_common.fallback(ts, "--warmup", "train_supernet.warmup_steps", ts_warmup);
        ts_common.fallback(ts, "--schedule", "train_supernet.schedule", ts_schedule);
        ts_common.fallback(ts, "--lr-max", "train_supernet.lr_max", ts_lr_max);
        ts_common.fallback(ts, "--lr-min", "train_supernet.lr_min", ts_lr_min);
        ts_common.fallback(ts, "--batch", "train_supernet.batch_size", ts_batch);
        ts_common.fallback(ts, "--label-smoothing", "train_supernet.label_smoothing", ts_ls);
        const hat::DesignSpace space = resolve_space(ts_common, ts_space);
        const hat::Corpus corpus = hat::load_corpus(ts_corpus);
        hat::TrainConfig cfg = train_config_from(ts_common, ts, "train_supernet", ts_steps, ts_warmup, ts_schedule,
                                                 ts_lr_max, ts_lr_min, ts_batch, ts_ls);
        hat::Rng rng_init = hat::derive_rng(cfg.seed, "init");
        hat::SuperWeights super = hat::SuperWeights::init(space, rng_init);
        logline("stage=train-supernet steps=" + std::to_string(cfg.total_steps) +
                " batch=" + std::to_string(cfg.batch_size) + " seed=" + std::to_string(cfg.seed));
        hat::SuperTrainResult r = hat::train_supernet(super, corpus, cfg);
        if (!g_quiet)
            for (std::size_t i = 0; i < r.trace.size(); i += 500)
                logline("step=" + std::to_string(r.trace[i].step) + " lr=" + std::to_string(r.trace[i].lr) +
                        " loss=" + std::to_string(r.trace[i].train_loss));
        hat::save_supernet(ts_out, super);
        maybe_write_trace(ts_trace, r.trace);
        result_line("stage=train-supernet out=" + ts_out + " final_loss=" + std::to_string(r.trace.back().train_loss));
    });

    // ---- collect-latency ----
    auto* cl = app.add_subcommand("collect-latency", "measure decode latency of sampled architectures on this host");
    Common cl_common;
    cl_common.attach(cl);
    std::string cl_ckpt, cl_out, cl_host = host_name();
    int cl_n = 2000, cl_src = 16, cl_tgt = 16, cl_runs = 300, cl_warm = 20;
    double cl_trim = 0.1;
    cl->add_option("--checkpoint", cl_ckpt)->required();
    cl->add_option("--n", cl_n, "number of sampled architectures");
    cl->add_option("--out", cl_out, "dataset file (JSON lines)")->required();
    cl->add_option("--src-len", cl_src);
    cl->add_option("--tgt-len", cl_tgt);
    cl->add_option("--runs", cl_runs, "timed decodes per architecture");
    cl->add_option("--warmup-runs", cl_warm, "untimed decodes before measuring");
    cl->add_option("--trim", cl_trim, "fraction trimmed from each end");
    cl->add_option("--host", cl_host, "host tag stored in the records");
    cl->callback([&] {
        cl_common.finalize();
        cl_common.fallback(cl, "--n", "measure.n_samples", cl_n);
        cl_common.fallback(cl, "--src-len", "measure.src_len", cl_src);
        cl_common.fallback(cl, "--tgt-len", "measure.tgt_len", cl_tgt);
        cl_common.fallback(cl, "--runs", "measure.n_runs", cl_runs);
        cl_common.fallback(cl, "--warmup-runs", "measure.warmup_runs", cl_warm);
        cl_common.fallback(cl, "--trim", "measure.trim", cl_trim);
        const hat::SuperWeights super = hat::load_supernet(cl_ckpt);
        hat::MeasureParams p;
        p.src_len = cl_src;
        p.tgt_len = cl_tgt;
        p.n_runs = cl_runs;
        p.warmup_runs = cl_warm;
        p.trim = cl_trim;
        logline("stage=collect-latency n=" + std::to_string(cl_n) + " runs=" + std::to_string(cl_runs) +
                " host=" + cl_host);
        const hat::LatencyDataset ds = hat::collect_dataset(super, cl_n, p, cl_host, cl_common.seed);
        hat::save_latency_dataset(cl_out, ds);
        double mean = 0;
        for (const auto& r : ds.records) mean += r.latency_ms;
        mean /= static_cast<double>(ds.records.size());
        result_line("stage=collect-latency out=" + cl_out + " records=" + std::to_string(ds.records.size()) +
                    " mean_ms=" + std::to_string(mean));
    });

    // ---- train-predictor ----
    auto* tp = app.add_subcommand("train-predictor", "fit the latency predictor MLP on a collected dataset");
    Common tp_common;
    tp_common.attach(tp);
    std::string tp_ds, tp_out;
    int tp_epochs = 400;
    double tp_lr = 1e-3;
    tp->add_option("--dataset", tp_ds)->required();
    tp->add_option("--out", tp_out, "predictor file")->required();
    tp->add_option("--epochs", tp_epochs);
    tp->add_option("--lr", tp_lr);
    tp->callback([&] {
        tp_common.finalize();
        tp_common.fallback(tp, "--epochs", "predictor.epochs", tp_epochs);
        tp_common.fallback(tp, "--lr", "predictor.lr", tp_lr);
        const hat::LatencyDataset ds = hat::load_latency_dataset(tp_ds);
        hat::PredictorMetrics m;
        const hat::LatencyPredictor p = hat::train_predictor(ds, tp_epochs, tp_lr, tp_common.seed, &m);
        for (int f : m.degenerate_features)
            std::fprintf(stderr, "warning: feature %d is constant on the training split; it normalizes to 0\n", f);
        hat::save_predictor(tp_out, p);
        result_line("stage=train-predictor out=" + tp_out + " test_rmse_ms=" + std::to_string(m.test_rmse_ms) +
                    " valid_rmse_ms=" + std::to_string(m.valid_rmse_ms) +
                    " mean_latency_ms=" + std::to_string(m.mean_latency_ms) +
                    " best_epoch=" + std::to_string(m.best_epoch));
    });

    // ---- evo-search ----
    auto* es = app.add_subcommand("evo-search",
                                  "latency-constrained evolutionary search plus a budget-matched random baseline");
    Common es_common;
    es_common.attach(es);
    std::string es_ckpt, es_pred, es_corpus, es_out;
    hat::EvoParams es_params;
    es->add_option("--checkpoint", es_ckpt)->required();
    es->add_option("--predictor", es_pred)->required();
    es->add_option("--corpus", es_corpus)->required();
    es->add_option("--constraint-ms", es_params.latency_constraint_ms, "predicted-latency upper bound")->required();
    es->add_option("--iterations", es_params.iterations);
    es->add_option("--population", es_params.population);
    es->add_option("--parents", es_params.parents);
    es->add_option("--mutation-size", es_params.mutation_size);
    es->add_option("--mutation-prob", es_params.mutation_prob);
    es->add_option("--crossover-size", es_params.crossover_size);
    es->add_option("--out-report", es_out)->required();
    es->callback([&] {
        es_common.finalize();
        es_common.fallback(es, "--iterations", "evolution.iterations", es_params.iterations);
        es_common.fallback(es, "--population", "evolution.population", es_params.population);
        es_common.fallback(es, "--parents", "evolution.parents", es_params.parents);
        es_common.fallback(es, "--mutation-size", "evolution.mutation_size", es_params.mutation_size);
        es_common.fallback(es, "--mutation-prob", "evolution.mutation_prob", es_params.mutation_prob);
        es_common.fallback(es, "--crossover-size", "evolution.crossover_size", es_params.crossover_size);
        es_params.seed = es_common.seed;
        const hat::SuperWeights super = hat::load_supernet(es_ckpt);
        const hat::LatencyPredictor pred = hat::load_predictor(es_pred);
        const hat::Corpus corpus = hat::load_corpus(es_corpus);
        logline("stage=evo-search constraint_ms=" + std::to_string(es_params.latency_constraint_ms) +
                " budget=" + std::to_string(hat::evo_eval_budget(es_params)));
        hat::MemoFitness evo_fitness = hat::make_fitness(super, corpus);
        const hat::SearchResult evo = hat::evolutionary_search(es_params, super.space(), pred, evo_fitness);
        const int budget = hat::evo_eval_budget(es_params);
        hat::MemoFitness rnd_fitness = hat::make_fitness(super, corpus);
        const hat::SearchResult rnd = hat::random_search(budget, super.space(), pred, rnd_fitness,
                                                         es_params.latency_constraint_ms, es_params.seed);
        write_json_file(es_out, hat::make_search_report(es_params, evo, rnd, budget));
        result_line("stage=evo-search out=" + es_out + " evo_best_loss=" + std::to_string(evo.best_loss) +
                    " random_best_loss=" + std::to_string(rnd.best_loss) +
                    " evo_pred_ms=" + std::to_string(evo.best_predicted_latency_ms));
    });

    // ---- train-sub ----
    auto* tb = app.add_subcommand("train-sub", "train one architecture from scratch or finetune inherited weights");
    Common tb_common;
    tb_common.attach(tb);
    std::string tb_arch, tb_mode = "scratch", tb_ckpt, tb_space, tb_corpus, tb_out, tb_trace, tb_schedule = "cosine";
    std::string tb_teacher, tb_teacher_arch;
    int tb_steps = 8000, tb_warmup = 400, tb_batch = 64, tb_kd_topk = 5;
    double tb_lr_max = 1e-3, tb_lr_min = 1e-7, tb_ls = 0.1, tb_kd_lambda = 0.5;
    tb->add_option("--arch", tb_arch, "ArchConfig JSON or a search report")->required();
    tb->add_option("--mode", tb_mode, "scratch|finetune");
    tb->add_option("--checkpoint", tb_ckpt, "supernet checkpoint (required for finetune; provides the space)");
    tb->add_option("--space", tb_space, "design-space JSON (scratch mode without --checkpoint)");
    tb->add_option("--corpus", tb_corpus)->required();
    tb->add_option("--out", tb_out, "sub-weights checkpoint")->required();
    tb->add_option("--trace-csv", tb_trace);
    tb->add_option("--teacher", tb_teacher, "teacher weights for top-k soft-label distillation");
    tb->add_option("--teacher-arch", tb_teacher_arch, "teacher ArchConfig JSON");
    tb->add_option("--kd-lambda", tb_kd_lambda, "soft-label mixing weight");
    tb->add_option("--kd-topk", tb_kd_topk, "teacher classes kept per position");
    add_train_flags(tb, tb_steps, tb_warmup, tb_schedule, tb_lr_max, tb_lr_min, tb_batch, tb_ls);
    tb->callback([&] {
        tb_common.finalize();
        const std::string section = tb_mode == "finetune" ? "finetune" : "train_sub";
        tb_common.fallback(tb, "--steps", section + ".total_steps", tb_steps);
        tb_common.fallback(tb, "--warmup", section + ".warmup_steps", tb_warmup);
        tb_common.fallback(tb, "--schedule", section + ".schedule", tb_schedule);
        tb_common.fallback(tb, "--lr-max", section + ".lr_max", tb_lr_max);
        tb_common.fallback(tb, "--lr-min", section + ".lr_min", tb_lr_min);
        tb_common.fallback(tb, "--batch", section + ".batch_size", tb_batch);
        tb_common.fallback(tb, "--label-smoothing", section + ".label_smoothing", tb_ls);
        if (tb_mode == "finetune" && tb_steps == 8000) tb_steps = 2000;  // quarter of from-scratch
        const hat::ArchConfig arch = load_arch_or_report(tb_arch);
        const hat::Corpus corpus = hat::load_corpus(tb_corpus);
        hat::TrainConfig cfg = train_config_from(tb_common, tb, section, tb_steps, tb_warmup, tb_schedule, tb_lr_max,
                                                 tb_lr_min, tb_batch, tb_ls);
        std::optional<hat::KdTeacher> teacher;
        if (!tb_teacher.empty()) {
            if (tb_teacher_arch.empty()) throw hat::ValidationError("--teacher requires --teacher-arch");
            teacher = hat::KdTeacher{load_weights_any(tb_teacher, load_arch_or_report(tb_teacher_arch)), tb_kd_lambda,
                                     tb_kd_topk};
        }
        hat::SubTrainResult r;
        if (tb_mode == "finetune") {
            if (tb_ckpt.empty()) throw hat::ValidationError("finetune mode requires --checkpoint");
            const hat::SuperWeights super = hat::load_supernet(tb_ckpt);
            logline("stage=train-sub mode=finetune steps=" + std::to_string(cfg.total_steps));
            r = hat::finetune_inherited(super, arch, corpus, cfg, teacher ? &*teacher : nullptr);
        } else if (tb_mode == "scratch") {
            hat::DesignSpace space;
            if (!tb_ckpt.empty())
                space = hat::load_supernet(tb_ckpt).space();
            else
                space = resolve_space(tb_common, tb_space);
            logline("stage=train-sub mode=scratch steps=" + std::to_string(cfg.total_steps));
            r = hat::train_sub(space, arch, corpus, cfg, nullptr, teacher ? &*teacher : nullptr);
        } else {
            throw hat::ValidationError("unknown mode: " + tb_mode + " (expected scratch|finetune)");
        }
        hat::save_sub_weights(tb_out, r.weights);
        maybe_write_trace(tb_trace, r.trace);
        const hat::Accuracy acc = hat::sequence_accuracy(r.weights, corpus.test, 1, 0.0, r.weights.space.max_seq_len);
        result_line("stage=train-sub mode=" + tb_mode + " out=" + tb_out +
                    " val_loss=" + std::to_string(r.final_val_loss) + " token_acc=" + std::to_string(acc.token_acc) +
                    " exact_match=" + std::to_string(acc.exact_match));
    });

    // ---- quantize ----
    auto* qz = app.add_subcommand("quantize", "k-means codebook quantization of a weights file");
    Common qz_common;
    qz_common.attach(qz);
    std::string qz_weights, qz_out, qz_arch, qz_corpus, qz_report;
    int qz_bits = 4, qz_iters = 300;
    qz->add_option("--weights", qz_weights, "dense sub-weights checkpoint")->required();
    qz->add_option("--bits", qz_bits, "codebook bits in [1, 8]");
    qz->add_option("--max-iters", qz_iters);
    qz->add_option("--arch", qz_arch, "ArchConfig JSON of the weights")->required();
    qz->add_option("--out", qz_out, "quantized checkpoint")->required();
    qz->add_option("--corpus", qz_corpus, "corpus for the before/after quality report");
    qz->add_option("--report-out", qz_report, "write the quality report as JSON");
    qz->callback([&] {
        qz_common.finalize();
        const hat::ArchConfig arch = load_arch_or_report(qz_arch);
        const hat::SlicedWeights w = hat::load_sub_weights(qz_weights, arch);
        if (!qz_corpus.empty()) {
            const hat::Corpus corpus = hat::load_corpus(qz_corpus);
            hat::QuantizedModel qm;
            const hat::QuantReport rep = hat::quantize_with_report(w, qz_bits, corpus, &qm, qz_iters);
            hat::save_quantized(qz_out, qm);
            const json jrep{{"bits", rep.bits},
                            {"val_loss_before", rep.val_loss_before},
                            {"val_loss_after", rep.val_loss_after},
                            {"baseline_bytes", rep.baseline_bytes},
                            {"quantized_bytes", rep.quantized_bytes},
                            {"storage_ratio", rep.storage_ratio},
                            {"payload_ratio", rep.payload_ratio}};
            if (!qz_report.empty()) write_json_file(qz_report, jrep);
            result_line("stage=quantize out=" + qz_out + " bits=" + std::to_string(qz_bits) +
                        " storage_ratio=" + std::to_string(rep.storage_ratio) +
                        " val_loss_before=" + std::to_string(rep.val_loss_before) +
                        " val_loss_after=" + std::to_string(rep.val_loss_after));
        } else {
            const hat::QuantizedModel qm = hat::quantize_model(w, qz_bits, qz_iters);
            hat::save_quantized(qz_out, qm);
            const double ratio = static_cast<double>(hat::baseline_size_bytes(w)) /
                                 static_cast<double>(hat::quantized_size_bytes(qm));
            result_line("stage=quantize out=" + qz_out + " bits=" + std::to_string(qz_bits) +
                        " storage_ratio=" + std::to_string(ratio));
        }
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "decode a split and report token accuracy, exact match and loss");
    Common ev_common;
    ev_common.attach(ev);
    std::string ev_weights, ev_arch, ev_corpus, ev_split = "test";
    int ev_beam = 4;
    double ev_lp = 0.6;
    ev->add_option("--weights", ev_weights, "dense or quantized sub-weights")->required();
    ev->add_option("--arch", ev_arch)->required();
    ev->add_option("--corpus", ev_corpus)->required();
    ev->add_option("--split", ev_split, "train|valid|test");
    ev->add_option("--beam", ev_beam);
    ev->add_option("--length-penalty", ev_lp);
    ev->callback([&] {
        ev_common.finalize();
        const hat::ArchConfig arch = load_arch_or_report(ev_arch);
        const hat::SlicedWeights w = load_weights_any(ev_weights, arch);
        const hat::Corpus corpus = hat::load_corpus(ev_corpus);
        const std::vector<hat::SeqPair>* split = nullptr;
        if (ev_split == "train") split = &corpus.train;
        else if (ev_split == "valid") split = &corpus.valid;
        else if (ev_split == "test") split = &corpus.test;
        else throw hat::ValidationError("unknown split: " + ev_split);
        const hat::Accuracy acc = hat::sequence_accuracy(w, *split, ev_beam, ev_lp, w.space.max_seq_len);
        const double loss = hat::validate(w, *split);
        result_line("stage=eval split=" + ev_split + " beam=" + std::to_string(ev_beam) +
                    " length_penalty=" + std::to_string(ev_lp) + " token_acc=" + std::to_string(acc.token_acc) +
                    " exact_match=" + std::to_string(acc.exact_match) + " val_loss=" + std::to_string(loss));
    });

    // ---- proxy-study ----
    auto* ps = app.add_subcommand("proxy-study",
                                  "inherited-loss vs from-scratch ordering over architectures spanning the space");
    Common ps_common;
    ps_common.attach(ps);
    std::string ps_ckpt, ps_corpus, ps_out, ps_schedule = "cosine";
    int ps_n = 5, ps_steps = 8000, ps_warmup = 400, ps_batch = 64;
    double ps_lr_max = 1e-3, ps_lr_min = 1e-7, ps_ls = 0.1;
    ps->add_option("--checkpoint", ps_ckpt)->required();
    ps->add_option("--corpus", ps_corpus)->required();
    ps->add_option("--n", ps_n, "architectures in the study");
    ps->add_option("--scratch-steps", ps_steps, "from-scratch steps per architecture");
    ps->add_option("--scratch-warmup", ps_warmup);
    ps->add_option("--batch", ps_batch);
    ps->add_option("--out-report", ps_out)->required();
    ps->callback([&] {
        ps_common.finalize();
        ps_common.fallback(ps, "--n", "proxy.n_archs", ps_n);
        ps_common.fallback(ps, "--scratch-steps", "proxy.scratch_steps", ps_steps);
        const hat::SuperWeights super = hat::load_supernet(ps_ckpt);
        const hat::Corpus corpus = hat::load_corpus(ps_corpus);
        hat::TrainConfig cfg = train_config_from(ps_common, ps, "proxy", ps_steps, ps_warmup, ps_schedule, ps_lr_max,
                                                 ps_lr_min, ps_batch, ps_ls);
        logline("stage=proxy-study n=" + std::to_string(ps_n) + " scratch_steps=" + std::to_string(ps_steps));
        const hat::ProxyReport rep = hat::run_proxy_study(super, corpus, ps_n, cfg, ps_common.seed);
        write_json_file(ps_out, hat::proxy_report_to_json(rep));
        result_line("stage=proxy-study out=" + ps_out + " kendall_tau=" + std::to_string(rep.kendall_tau));
    });

    // ---- report ----
    auto* rp = app.add_subcommand("report", "pretty-print a search or proxy report");
    std::string rp_in;
    rp->add_option("--in", rp_in)->required();
    rp->callback([&] {
        const json j = load_json_file(rp_in);
        std::printf("%s\n", j.dump(2).c_str());
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hat::Error& e) {
        std::fprintf(stderr, "error msg=\"%s\"\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error msg=\"%s\"\n", e.what());
        return 2;
    }
}
