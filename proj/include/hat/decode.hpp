#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "hat/supernet.hpp"
#include "hat/task.hpp"

namespace hat {

namespace infer {

// Plain-Eigen mirrors of the graph ops, for inference without a tape. Must
// stay semantically identical to the training-path builders.

inline void layer_norm_rows(RowMat& x, const Tensor& gain, const Tensor& bias) {
    const auto n = x.cols();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) mu += x(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + Graph::kLayerNormEps);
        for (Eigen::Index j = 0; j < n; ++j)
            x(i, j) = gain.data[static_cast<std::size_t>(j)] * (x(i, j) - mu) * inv +
                      bias.data[static_cast<std::size_t>(j)];
    }
}

// Multi-head attention with queries `q` [tq, width] against keys/values
// packed in `kv` [tk, 2*width]; writes [tq, width].
inline RowMat attention_rows(const RowMat& q, const RowMat& kv, int heads, bool causal) {
    const Eigen::Index tq = q.rows(), tk = kv.rows(), width = q.cols();
    const Eigen::Index d = width / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(d));
    RowMat out = RowMat::Zero(tq, width);
    std::vector<double> p(static_cast<std::size_t>(tk));
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index hc = static_cast<Eigen::Index>(h) * d;
        for (Eigen::Index i = 0; i < tq; ++i) {
            const Eigen::Index kmax = causal ? std::min<Eigen::Index>(i + 1, tk) : tk;
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < kmax; ++j) {
                double s = 0.0;
                for (Eigen::Index c = 0; c < d; ++c) s += q(i, hc + c) * kv(j, hc + c);
                s *= alpha;
                p[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            double sum = 0.0;
            for (Eigen::Index j = 0; j < kmax; ++j) {
                p[static_cast<std::size_t>(j)] = std::exp(p[static_cast<std::size_t>(j)] - mx);
                sum += p[static_cast<std::size_t>(j)];
            }
            for (Eigen::Index j = 0; j < kmax; ++j) {
                const double w = p[static_cast<std::size_t>(j)] / sum;
                for (Eigen::Index c = 0; c < d; ++c) out(i, hc + c) += w * kv(j, width + hc + c);
            }
        }
    }
    return out;
}

inline RowMat sinusoid_table(std::size_t rows, std::size_t e) {
    const Tensor full = sinusoid_rows(RowSpans::single(rows), e);
    RowMat out(rows, e);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < e; ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = full.data[i * e + j];
    return out;
}

}  // namespace infer

// Autoregressive decoder with per-layer key/value caches. encode() fixes the
// source; step() consumes one token and returns the next-token logits. A
// State is a value and may be copied to fork hypotheses.
class IncrementalDecoder {
  public:
    explicit IncrementalDecoder(const SlicedWeights& w) : w_(&w) {
        validate_arch(w.space, w.arch);
        q_ = static_cast<std::size_t>(w.space.qkv_dim);
        ee_ = static_cast<std::size_t>(w.arch.encoder_embed_dim);
        ed_ = static_cast<std::size_t>(w.arch.decoder_embed_dim);
        const auto max_len = static_cast<std::size_t>(w.space.max_seq_len);
        enc_pos_ = infer::sinusoid_table(max_len, ee_);
        dec_pos_ = infer::sinusoid_table(max_len, ed_);
    }

    void encode(const std::vector<int>& src) {
        const ArchConfig& a = w_->arch;
        const std::size_t s = src.size();
        if (s == 0 || s > static_cast<std::size_t>(w_->space.max_seq_len))
            throw ValidationError("encode: bad source length");
        const Tensor& embed = block("embed");
        RowMat x(s, ee_);
        const double scale = std::sqrt(static_cast<double>(ee_));
        for (std::size_t i = 0; i < s; ++i) {
            const int tok = src[i];
            if (tok < 0 || tok >= w_->space.vocab_size) throw ValidationError("encode: token id out of vocabulary");
            for (std::size_t j = 0; j < ee_; ++j)
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    embed.at(static_cast<std::size_t>(tok), j) * scale;
        }
        x += enc_pos_.topRows(static_cast<Eigen::Index>(s));

        std::vector<RowMat> outputs;
        for (int l = 0; l < a.encoder_layers; ++l) {
            const std::string p = "enc" + std::to_string(l);
            RowMat h = x;
            infer::layer_norm_rows(h, block(p + ".ln1_g"), block(p + ".ln1_b"));
            RowMat qkv = h * cmap(block(p + ".self_qkv"));
            RowMat attn =
                infer::attention_rows(qkv.leftCols(static_cast<Eigen::Index>(q_)),
                                      qkv.rightCols(static_cast<Eigen::Index>(2 * q_)),
                                      a.enc_heads[static_cast<std::size_t>(l)], false);
            x += attn * cmap(block(p + ".self_out"));
            RowMat h2 = x;
            infer::layer_norm_rows(h2, block(p + ".ln2_g"), block(p + ".ln2_b"));
            RowMat f = h2 * cmap(block(p + ".ffn1"));
            addRowVector(f, block(p + ".ffn1_b"));
            f = f.cwiseMax(0.0);
            f = f * cmap(block(p + ".ffn2"));
            addRowVector(f, block(p + ".ffn2_b"));
            x += f;
            outputs.push_back(x);
        }
        infer::layer_norm_rows(outputs.back(), block("enc_ln_g"), block("enc_ln_b"));

        const int n_enc = a.encoder_layers;
        std::vector<RowMat> adapted(static_cast<std::size_t>(n_enc));
        for (int i = n_enc - a.max_active_span(); i < n_enc; ++i)
            adapted[static_cast<std::size_t>(i)] = outputs[static_cast<std::size_t>(i)] * cmap(block("adapter"));

        ende_k_.assign(static_cast<std::size_t>(a.decoder_layers), RowMat());
        ende_v_.assign(static_cast<std::size_t>(a.decoder_layers), RowMat());
        for (int l = 0; l < a.decoder_layers; ++l) {
            const int span = a.attend_spans[static_cast<std::size_t>(l)];
            RowMat mem(static_cast<Eigen::Index>(span) * static_cast<Eigen::Index>(s), ed_);
            for (int k = 0; k < span; ++k)
                mem.middleRows(static_cast<Eigen::Index>(k) * static_cast<Eigen::Index>(s),
                               static_cast<Eigen::Index>(s)) = adapted[static_cast<std::size_t>(n_enc - span + k)];
            RowMat kv = mem * cmap(block("dec" + std::to_string(l) + ".ende_kv"));
            ende_k_[static_cast<std::size_t>(l)] = kv.leftCols(static_cast<Eigen::Index>(q_));
            ende_v_[static_cast<std::size_t>(l)] = kv.rightCols(static_cast<Eigen::Index>(q_));
        }
    }

    struct State {
        // per decoder layer, one row of q_ values per generated position
        std::vector<std::vector<double>> self_k, self_v;
        int pos = 0;
    };

    State initial_state() const {
        State st;
        st.self_k.assign(static_cast<std::size_t>(w_->arch.decoder_layers), {});
        st.self_v.assign(static_cast<std::size_t>(w_->arch.decoder_layers), {});
        return st;
    }

    // Feeds one token, returns logits over the vocabulary.
    std::vector<double> step(State& st, int token) const {
        const ArchConfig& a = w_->arch;
        if (ende_k_.size() != static_cast<std::size_t>(a.decoder_layers))
            throw ValidationError("step: encode() must run first");
        if (token < 0 || token >= w_->space.vocab_size) throw ValidationError("step: token id out of vocabulary");
        const Tensor& embed = block("embed");
        RowMat x(1, ed_);
        const double scale = std::sqrt(static_cast<double>(ed_));
        for (std::size_t j = 0; j < ed_; ++j)
            x(0, static_cast<Eigen::Index>(j)) = embed.at(static_cast<std::size_t>(token), j) * scale;
        if (st.pos >= w_->space.max_seq_len) throw ValidationError("step: position beyond max_seq_len");
        x += dec_pos_.row(st.pos);
        st.pos += 1;

        for (int l = 0; l < a.decoder_layers; ++l) {
            const std::string p = "dec" + std::to_string(l);
            const std::size_t li = static_cast<std::size_t>(l);
            RowMat h = x;
            infer::layer_norm_rows(h, block(p + ".ln1_g"), block(p + ".ln1_b"));
            RowMat qkv = h * cmap(block(p + ".self_qkv"));
            for (std::size_t c = 0; c < q_; ++c) {
                st.self_k[li].push_back(qkv(0, static_cast<Eigen::Index>(q_ + c)));
                st.self_v[li].push_back(qkv(0, static_cast<Eigen::Index>(2 * q_ + c)));
            }
            const Eigen::Index t = static_cast<Eigen::Index>(st.self_k[li].size() / q_);
            CMapRM kc(st.self_k[li].data(), t, static_cast<Eigen::Index>(q_));
            CMapRM vc(st.self_v[li].data(), t, static_cast<Eigen::Index>(q_));
            RowMat attn = attend_cache(qkv.leftCols(static_cast<Eigen::Index>(q_)), kc, vc,
                                       a.dec_heads[li]);
            x += attn * cmap(block(p + ".self_out"));

            RowMat h2 = x;
            infer::layer_norm_rows(h2, block(p + ".ln2_g"), block(p + ".ln2_b"));
            RowMat qrow = h2 * cmap(block(p + ".ende_q"));
            RowMat cx = attend_cache(qrow, ende_k_[li], ende_v_[li], a.ende_heads[li]);
            x += cx * cmap(block(p + ".ende_out"));

            RowMat h3 = x;
            infer::layer_norm_rows(h3, block(p + ".ln3_g"), block(p + ".ln3_b"));
            RowMat f = h3 * cmap(block(p + ".ffn1"));
            addRowVector(f, block(p + ".ffn1_b"));
            f = f.cwiseMax(0.0);
            f = f * cmap(block(p + ".ffn2"));
            addRowVector(f, block(p + ".ffn2_b"));
            x += f;
        }
        infer::layer_norm_rows(x, block("dec_ln_g"), block("dec_ln_b"));

        const std::size_t v = static_cast<std::size_t>(w_->space.vocab_size);
        std::vector<double> logits(v, 0.0);
        const std::size_t em = embed.cols();
        for (std::size_t r = 0; r < v; ++r) {
            double acc = 0.0;
            const double* row = embed.data.data() + r * em;
            for (std::size_t j = 0; j < ed_; ++j) acc += x(0, static_cast<Eigen::Index>(j)) * row[j];
            logits[r] = acc;
        }
        return logits;
    }

  private:
    const Tensor& block(const std::string& name) const {
        auto it = w_->blocks.find(name);
        if (it == w_->blocks.end()) throw ValidationError("IncrementalDecoder: missing block " + name);
        return it->second;
    }

    static void addRowVector(RowMat& m, const Tensor& bias) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += bias.data[static_cast<std::size_t>(j)];
    }

    template <class K, class V>
    RowMat attend_cache(const RowMat& qrow, const K& keys, const V& values, int heads) const {
        const Eigen::Index d = static_cast<Eigen::Index>(q_) / heads;
        const double alpha = 1.0 / std::sqrt(static_cast<double>(d));
        const Eigen::Index tk = keys.rows();
        RowMat out = RowMat::Zero(1, static_cast<Eigen::Index>(q_));
        std::vector<double> p(static_cast<std::size_t>(tk));
        for (int h = 0; h < heads; ++h) {
            const Eigen::Index hc = static_cast<Eigen::Index>(h) * d;
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < tk; ++j) {
                double s = 0.0;
                for (Eigen::Index c = 0; c < d; ++c) s += qrow(0, hc + c) * keys(j, hc + c);
                s *= alpha;
                p[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            double sum = 0.0;
            for (Eigen::Index j = 0; j < tk; ++j) {
                p[static_cast<std::size_t>(j)] = std::exp(p[static_cast<std::size_t>(j)] - mx);
                sum += p[static_cast<std::size_t>(j)];
            }
            for (Eigen::Index j = 0; j < tk; ++j) {
                const double w = p[static_cast<std::size_t>(j)] / sum;
                for (Eigen::Index c = 0; c < d; ++c) out(0, hc + c) += w * values(j, hc + c);
            }
        }
        return out;
    }

    const SlicedWeights* w_;
    std::size_t q_ = 0, ee_ = 0, ed_ = 0;
    RowMat enc_pos_, dec_pos_;
    std::vector<RowMat> ende_k_, ende_v_;
};

// ---- greedy / beam search ----

inline int argmax_token(const std::vector<double>& logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
    return best;
}

// Emits up to max_len tokens, stopping after eos; the returned sequence
// includes the eos when reached.
inline std::vector<int> greedy_decode(const SlicedWeights& w, const std::vector<int>& src, int max_len) {
    IncrementalDecoder dec(w);
    dec.encode(src);
    auto st = dec.initial_state();
    std::vector<int> out;
    int tok = Corpus::kBos;
    for (int t = 0; t < max_len; ++t) {
        const int next = argmax_token(dec.step(st, tok));
        out.push_back(next);
        if (next == Corpus::kEos) break;
        tok = next;
    }
    return out;
}

struct BeamResult {
    std::vector<int> ids;
    double score = 0.0;     // summed log-prob / len^length_penalty
    double sum_logp = 0.0;
};

namespace detail {

inline void log_softmax_inplace(std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : logits) v -= lse;
}

template <class State, class StepF>
BeamResult beam_core(const State& init, int eos, int beam, double length_penalty, int max_len, StepF&& step,
                     const BeamResult* greedy_candidate);

// Standard beam search: hypotheses are ranked by cumulative log-prob while
// alive; finished hypotheses are scored by log-prob / len^penalty. Returns
// the best finished hypothesis, or the best unfinished one at max_len. The
// greedy rollout is always kept as a candidate, so a wider beam never
// returns a worse-scoring sequence than greedy.
template <class State, class StepF>
BeamResult beam_core(const State& init, int eos, int beam, double length_penalty, int max_len, StepF&& step) {
    if (beam < 1) throw ValidationError("beam_decode: beam must be >= 1");
    if (beam > 1) {
        State greedy_state = init;
        BeamResult greedy = beam_core(greedy_state, eos, 1, length_penalty, max_len, step);
        BeamResult wide = beam_core(init, eos, beam, length_penalty, max_len, step, &greedy);
        return wide;
    }
    return beam_core(init, eos, beam, length_penalty, max_len, step, nullptr);
}

template <class State, class StepF>
BeamResult beam_core(const State& init, int eos, int beam, double length_penalty, int max_len, StepF&& step,
                     const BeamResult* greedy_candidate) {
    struct Hyp {
        State st;
        std::vector<int> ids;
        double logp = 0.0;
    };
    auto penalized = [length_penalty](double logp, std::size_t len) {
        return logp / std::pow(static_cast<double>(len), length_penalty);
    };
    std::vector<Hyp> live;
    live.push_back(Hyp{init, {}, 0.0});
    std::optional<BeamResult> best_done;
    for (int t = 0; t < max_len && !live.empty(); ++t) {
        struct Cand {
            std::size_t hyp;
            int tok;
            double logp;
        };
        std::vector<Cand> cands;
        for (std::size_t i = 0; i < live.size(); ++i) {
            const int feed = live[i].ids.empty() ? Corpus::kBos : live[i].ids.back();
            std::vector<double> logits = step(live[i].st, feed);
            log_softmax_inplace(logits);
            for (int v = 0; v < static_cast<int>(logits.size()); ++v)
                cands.push_back(Cand{i, v, live[i].logp + logits[static_cast<std::size_t>(v)]});
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
        std::vector<Hyp> next;
        for (const Cand& c : cands) {
            if (static_cast<int>(next.size()) >= beam) break;
            if (c.tok == eos) {
                std::vector<int> ids = live[c.hyp].ids;
                ids.push_back(eos);
                const double score = penalized(c.logp, ids.size());
                if (!best_done || score > best_done->score) best_done = BeamResult{std::move(ids), score, c.logp};
            } else {
                Hyp h;
                h.st = live[c.hyp].st;
                h.ids = live[c.hyp].ids;
                h.ids.push_back(c.tok);
                h.logp = c.logp;
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }
    BeamResult best;
    bool have_best = false;
    if (best_done) {
        best = *best_done;
        have_best = true;
    } else {
        // best unfinished under the same scoring rule
        for (const Hyp& h : live) {
            const double score = penalized(h.logp, h.ids.size());
            if (!have_best || score > best.score) {
                best = BeamResult{h.ids, score, h.logp};
                have_best = true;
            }
        }
    }
    if (greedy_candidate && (!have_best || greedy_candidate->score > best.score)) return *greedy_candidate;
    if (!have_best) throw ValidationError("beam_decode: no hypothesis produced");
    return best;
}

}  // namespace detail

inline BeamResult beam_decode(const SlicedWeights& w, const std::vector<int>& src, int beam, double length_penalty,
                              int max_len) {
    IncrementalDecoder dec(w);
    dec.encode(src);
    return detail::beam_core(dec.initial_state(), Corpus::kEos, beam, length_penalty, max_len,
                             [&dec](IncrementalDecoder::State& st, int tok) { return dec.step(st, tok); });
}

// Beam search over an arbitrary next-token distribution: `next_logits` maps
// the emitted prefix to the logits of the next token. Used for decode-rule
// tests against enumerable toy distributions.
inline BeamResult beam_decode_fn(const std::function<std::vector<double>(const std::vector<int>&)>& next_logits,
                                 int eos, int beam, double length_penalty, int max_len) {
    struct PrefixState {
        std::vector<int> emitted;
        bool started = false;
    };
    return detail::beam_core(PrefixState{}, eos, beam, length_penalty, max_len,
                             [&next_logits](PrefixState& st, int tok) {
                                 if (st.started) st.emitted.push_back(tok);
                                 st.started = true;
                                 return next_logits(st.emitted);
                             });
}

// ---- accuracy metrics ----

struct Accuracy {
    double token_acc = 0.0;
    double exact_match = 0.0;
};

// token_acc compares decoded and gold tokens position by position, cut at the
// shorter length, over all non-pad gold positions; exact_match requires the
// whole sequence (including eos) to match.
template <class DecodeFn>
Accuracy sequence_accuracy_fn(const std::vector<SeqPair>& split, DecodeFn&& decode) {
    if (split.empty()) return {};
    std::size_t tokens = 0, hits = 0, exact = 0;
    for (const SeqPair& p : split) {
        const std::vector<int> pred = decode(p.src);
        const std::size_t n = std::min(pred.size(), p.tgt.size());
        for (std::size_t i = 0; i < p.tgt.size(); ++i) {
            if (p.tgt[i] == Corpus::kPad) continue;
            ++tokens;
            if (i < n && pred[i] == p.tgt[i]) ++hits;
        }
        if (pred == p.tgt) ++exact;
    }
    Accuracy a;
    a.token_acc = tokens ? static_cast<double>(hits) / static_cast<double>(tokens) : 0.0;
    a.exact_match = static_cast<double>(exact) / static_cast<double>(split.size());
    return a;
}

inline Accuracy sequence_accuracy(const SlicedWeights& w, const std::vector<SeqPair>& split, int beam,
                                  double length_penalty, int max_len) {
    if (beam <= 1)
        return sequence_accuracy_fn(split, [&](const std::vector<int>& src) { return greedy_decode(w, src, max_len); });
    return sequence_accuracy_fn(
        split, [&](const std::vector<int>& src) { return beam_decode(w, src, beam, length_penalty, max_len).ids; });
}

}  // namespace hat
