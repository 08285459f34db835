#pragma once

#include <map>
#include <string>
#include <vector>

#include "hat/design_space.hpp"
#include "hat/graph.hpp"

namespace hat {

// ---- parameter block inventory ----

struct BlockSpec {
    enum Kind { kMatrix, kBias, kLnGain, kLnBias };
    std::string name;
    std::vector<std::size_t> dims;  // rank 1 or 2
    Kind kind = kMatrix;
    bool fan_in_cols = false;  // embedding table: fan-in is the embed dim
};

namespace detail {

inline void layer_blocks(std::vector<BlockSpec>& out, const std::string& prefix, std::size_t embed, std::size_t hidden,
                         std::size_t q, bool decoder) {
    out.push_back({prefix + ".self_qkv", {embed, 3 * q}, BlockSpec::kMatrix, false});
    out.push_back({prefix + ".self_out", {q, embed}, BlockSpec::kMatrix, false});
    if (decoder) {
        out.push_back({prefix + ".ende_q", {embed, q}, BlockSpec::kMatrix, false});
        out.push_back({prefix + ".ende_kv", {embed, 2 * q}, BlockSpec::kMatrix, false});
        out.push_back({prefix + ".ende_out", {q, embed}, BlockSpec::kMatrix, false});
    }
    out.push_back({prefix + ".ffn1", {embed, hidden}, BlockSpec::kMatrix, false});
    out.push_back({prefix + ".ffn1_b", {hidden}, BlockSpec::kBias, false});
    out.push_back({prefix + ".ffn2", {hidden, embed}, BlockSpec::kMatrix, false});
    out.push_back({prefix + ".ffn2_b", {embed}, BlockSpec::kBias, false});
    const int n_ln = decoder ? 3 : 2;
    for (int i = 1; i <= n_ln; ++i) {
        out.push_back({prefix + ".ln" + std::to_string(i) + "_g", {embed}, BlockSpec::kLnGain, false});
        out.push_back({prefix + ".ln" + std::to_string(i) + "_b", {embed}, BlockSpec::kLnBias, false});
    }
}

}  // namespace detail

// Blocks of the maximal model; every SubTransformer is a leading slice of
// these.
inline std::vector<BlockSpec> super_block_specs(const DesignSpace& s) {
    const auto e = static_cast<std::size_t>(s.max_embed());
    const auto h = static_cast<std::size_t>(s.max_hidden());
    const auto q = static_cast<std::size_t>(s.qkv_dim);
    std::vector<BlockSpec> out;
    out.push_back({"embed", {static_cast<std::size_t>(s.vocab_size), e}, BlockSpec::kMatrix, true});
    out.push_back({"adapter", {e, e}, BlockSpec::kMatrix, false});
    for (int i = 0; i < s.encoder_layer_count; ++i)
        detail::layer_blocks(out, "enc" + std::to_string(i), e, h, q, false);
    out.push_back({"enc_ln_g", {e}, BlockSpec::kLnGain, false});
    out.push_back({"enc_ln_b", {e}, BlockSpec::kLnBias, false});
    for (int l = 0; l < s.max_decoder_layers(); ++l)
        detail::layer_blocks(out, "dec" + std::to_string(l), e, h, q, true);
    out.push_back({"dec_ln_g", {e}, BlockSpec::kLnGain, false});
    out.push_back({"dec_ln_b", {e}, BlockSpec::kLnBias, false});
    return out;
}

// Active-slice dims of every block a given config touches. Inactive decoder
// layers have no entry. The shared embedding serves the encoder, the decoder
// and the tied output projection, so its slice is the wider of the two
// embed dims.
inline std::vector<BlockSpec> sub_block_specs(const DesignSpace& s, const ArchConfig& a) {
    validate_arch(s, a);
    const auto ee = static_cast<std::size_t>(a.encoder_embed_dim);
    const auto ed = static_cast<std::size_t>(a.decoder_embed_dim);
    const auto q = static_cast<std::size_t>(s.qkv_dim);
    std::vector<BlockSpec> out;
    out.push_back({"embed", {static_cast<std::size_t>(s.vocab_size), std::max(ee, ed)}, BlockSpec::kMatrix, true});
    out.push_back({"adapter", {ee, ed}, BlockSpec::kMatrix, false});
    for (int i = 0; i < s.encoder_layer_count; ++i)
        detail::layer_blocks(out, "enc" + std::to_string(i), ee,
                             static_cast<std::size_t>(a.enc_hidden[static_cast<std::size_t>(i)]), q, false);
    out.push_back({"enc_ln_g", {ee}, BlockSpec::kLnGain, false});
    out.push_back({"enc_ln_b", {ee}, BlockSpec::kLnBias, false});
    for (int l = 0; l < a.decoder_layers; ++l)
        detail::layer_blocks(out, "dec" + std::to_string(l), ed,
                             static_cast<std::size_t>(a.dec_hidden[static_cast<std::size_t>(l)]), q, true);
    out.push_back({"dec_ln_g", {ed}, BlockSpec::kLnGain, false});
    out.push_back({"dec_ln_b", {ed}, BlockSpec::kLnBias, false});
    return out;
}

namespace detail {

inline Tensor init_block(const BlockSpec& spec, Rng& rng) {
    Tensor t = Tensor::zeros(spec.dims);
    switch (spec.kind) {
        case BlockSpec::kMatrix: {
            const std::size_t fan_in = spec.fan_in_cols ? spec.dims[1] : spec.dims[0];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.data) v = rng.uniform_range(-bound, bound);
            break;
        }
        case BlockSpec::kLnGain:
            t.fill(1.0);
            break;
        case BlockSpec::kBias:
        case BlockSpec::kLnBias:
            break;  // zeros
    }
    return t;
}

}  // namespace detail

// The maximal shared parameter store.
class SuperWeights {
  public:
    SuperWeights() = default;
    SuperWeights(DesignSpace space, std::map<std::string, Tensor> blocks)
        : space_(std::move(space)), blocks_(std::move(blocks)) {}

    static SuperWeights init(const DesignSpace& space, Rng& rng) {
        space.validate();
        std::map<std::string, Tensor> blocks;
        for (const BlockSpec& spec : super_block_specs(space)) blocks.emplace(spec.name, detail::init_block(spec, rng));
        return SuperWeights(space, std::move(blocks));
    }

    const DesignSpace& space() const { return space_; }
    const std::map<std::string, Tensor>& blocks() const { return blocks_; }
    std::map<std::string, Tensor>& mutable_blocks() { return blocks_; }

    const Tensor& block(const std::string& name) const {
        auto it = blocks_.find(name);
        if (it == blocks_.end()) throw ValidationError("SuperWeights: unknown block " + name);
        return it->second;
    }

  private:
    DesignSpace space_;
    std::map<std::string, Tensor> blocks_;
};

// A config plus the leading-slice extents it activates in every block.
struct SubView {
    ArchConfig arch;
    std::map<std::string, std::vector<std::size_t>> extents;
};

inline SubView slice_view(const SuperWeights& super, const ArchConfig& arch) {
    SubView v;
    v.arch = arch;
    for (const BlockSpec& spec : sub_block_specs(super.space(), arch)) v.extents.emplace(spec.name, spec.dims);
    return v;
}

// Standalone dense weights of one SubTransformer. `space` is carried so the
// checkpoint format and the model builder know qkv width, vocabulary and
// sequence limits.
struct SlicedWeights {
    DesignSpace space;
    ArchConfig arch;
    std::map<std::string, Tensor> blocks;
};

inline Tensor copy_region(const Tensor& src, const std::vector<std::size_t>& dims) {
    Tensor out = Tensor::zeros(dims);
    const std::size_t r = out.rows(), c = out.cols(), stride = src.cols();
    if (r > src.rows() || c > stride) throw DimensionError("copy_region: extent exceeds source");
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(src.data.data() + i * stride, c, out.data.data() + i * c);
    return out;
}

inline SlicedWeights materialize(const SuperWeights& super, const SubView& view) {
    SlicedWeights w;
    w.space = super.space();
    w.arch = view.arch;
    for (const auto& [name, dims] : view.extents) w.blocks.emplace(name, copy_region(super.block(name), dims));
    return w;
}

inline SlicedWeights extract_sub(const SuperWeights& super, const ArchConfig& arch) {
    return materialize(super, slice_view(super, arch));
}

// Fresh initialization of a standalone SubTransformer (from-scratch training).
inline SlicedWeights init_sub(const DesignSpace& space, const ArchConfig& arch, Rng& rng) {
    SlicedWeights w;
    w.space = space;
    w.arch = arch;
    for (const BlockSpec& spec : sub_block_specs(space, arch)) w.blocks.emplace(spec.name, detail::init_block(spec, rng));
    return w;
}

inline std::size_t param_count(const SlicedWeights& w) {
    std::size_t n = 0;
    for (const auto& [name, t] : w.blocks) n += t.size();
    return n;
}

// ---- forward pass ----

// Token ids of a batch packed back to back; spans mark per-sequence rows.
struct Batch {
    std::vector<int> src_ids, tgt_in, tgt_gold;
    RowSpans src_spans, tgt_spans;
};

// Fixed sinusoidal position rows for the given embed width.
inline Tensor sinusoid_rows(const RowSpans& spans, std::size_t e) {
    std::vector<double> freqs((e + 1) / 2);
    for (std::size_t i = 0; i < freqs.size(); ++i)
        freqs[i] = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(e));
    Tensor out = Tensor::zeros({spans.total(), e});
    std::size_t row = 0;
    for (std::size_t b = 0; b < spans.count(); ++b) {
        for (std::size_t p = 0; p < spans.len(b); ++p, ++row) {
            for (std::size_t i = 0; 2 * i < e; ++i) {
                const double x = static_cast<double>(p) * freqs[i];
                out.data[row * e + 2 * i] = std::sin(x);
                if (2 * i + 1 < e) out.data[row * e + 2 * i + 1] = std::cos(x);
            }
        }
    }
    return out;
}

struct ForwardGraph {
    Node* logits = nullptr;                // [total tgt rows, vocab]
    std::map<std::string, Node*> leaves;   // trainable leaves by block name
};

// Builds the full encoder-decoder graph for one packed batch. With
// trainable=false the weights enter as constants (no gradient buffers), which
// is what validation and teacher passes use.
inline ForwardGraph build_forward(Graph& g, const SlicedWeights& w, const Batch& batch, bool trainable = true) {
    const DesignSpace& s = w.space;
    const ArchConfig& a = w.arch;
    validate_arch(s, a);
    const auto q = static_cast<std::size_t>(s.qkv_dim);
    const auto ee = static_cast<std::size_t>(a.encoder_embed_dim);
    const auto ed = static_cast<std::size_t>(a.decoder_embed_dim);

    for (std::size_t b = 0; b < batch.src_spans.count(); ++b) {
        if (batch.src_spans.len(b) > static_cast<std::size_t>(s.max_seq_len) ||
            batch.tgt_spans.len(b) > static_cast<std::size_t>(s.max_seq_len))
            throw ValidationError("build_forward: sequence exceeds max_seq_len");
    }

    ForwardGraph fg;
    auto leaf = [&](const std::string& name) -> Node* {
        auto it = w.blocks.find(name);
        if (it == w.blocks.end()) throw ValidationError("build_forward: missing weight block " + name);
        if (!trainable) return g.constant(it->second);
        Node* n = g.leaf(it->second);
        fg.leaves[name] = n;
        return n;
    };

    Node* embed = leaf("embed");
    const std::size_t em = embed->val.cols();
    Node* enc_table = (em == ee) ? embed : g.slice_cols(embed, 0, ee);
    Node* dec_table = (em == ed) ? embed : g.slice_cols(embed, 0, ed);

    // encoder
    Node* x = g.scale(g.embedding_lookup(enc_table, batch.src_ids), std::sqrt(static_cast<double>(ee)));
    x = g.add(x, g.constant(sinusoid_rows(batch.src_spans, ee)));
    std::vector<Node*> enc_outputs;
    for (int i = 0; i < a.encoder_layers; ++i) {
        const std::string p = "enc" + std::to_string(i);
        const int heads = a.enc_heads[static_cast<std::size_t>(i)];
        Node* h = g.layer_norm(x, leaf(p + ".ln1_g"), leaf(p + ".ln1_b"));
        Node* attn = g.self_attention(g.matmul(h, leaf(p + ".self_qkv")), heads, batch.src_spans, false);
        x = g.add(x, g.matmul(attn, leaf(p + ".self_out")));
        Node* h2 = g.layer_norm(x, leaf(p + ".ln2_g"), leaf(p + ".ln2_b"));
        Node* f = g.relu(g.add_bias(g.matmul(h2, leaf(p + ".ffn1")), leaf(p + ".ffn1_b")));
        f = g.add_bias(g.matmul(f, leaf(p + ".ffn2")), leaf(p + ".ffn2_b"));
        x = g.add(x, f);
        enc_outputs.push_back(x);
    }
    // the final layer's memory view is the normalized encoder output
    enc_outputs.back() = g.layer_norm(enc_outputs.back(), leaf("enc_ln_g"), leaf("enc_ln_b"));

    // encoder-memory adapter, applied once per attended layer
    Node* adapter = leaf("adapter");
    const int n_enc = a.encoder_layers;
    std::vector<Node*> adapted(static_cast<std::size_t>(n_enc), nullptr);
    for (int i = n_enc - a.max_active_span(); i < n_enc; ++i)
        adapted[static_cast<std::size_t>(i)] = g.matmul(enc_outputs[static_cast<std::size_t>(i)], adapter);

    // per-span concatenated memories, shared by decoder layers with equal span
    std::map<int, std::pair<Node*, RowSpans>> memories;
    auto memory_for = [&](int span) -> std::pair<Node*, RowSpans>& {
        auto it = memories.find(span);
        if (it == memories.end()) {
            RowSpans mem_spans;
            Node* mem = g.span_concat(adapted, batch.src_spans, span, &mem_spans);
            it = memories.emplace(span, std::make_pair(mem, mem_spans)).first;
        }
        return it->second;
    };

    // decoder
    Node* y = g.scale(g.embedding_lookup(dec_table, batch.tgt_in), std::sqrt(static_cast<double>(ed)));
    y = g.add(y, g.constant(sinusoid_rows(batch.tgt_spans, ed)));
    for (int l = 0; l < a.decoder_layers; ++l) {
        const std::string p = "dec" + std::to_string(l);
        const int self_heads = a.dec_heads[static_cast<std::size_t>(l)];
        const int ende_heads = a.ende_heads[static_cast<std::size_t>(l)];
        const int span = a.attend_spans[static_cast<std::size_t>(l)];
        Node* h = g.layer_norm(y, leaf(p + ".ln1_g"), leaf(p + ".ln1_b"));
        Node* attn = g.self_attention(g.matmul(h, leaf(p + ".self_qkv")), self_heads, batch.tgt_spans, true);
        y = g.add(y, g.matmul(attn, leaf(p + ".self_out")));

        Node* h2 = g.layer_norm(y, leaf(p + ".ln2_g"), leaf(p + ".ln2_b"));
        auto& [mem, mem_spans] = memory_for(span);
        Node* qn = g.matmul(h2, leaf(p + ".ende_q"));
        Node* kv = g.matmul(mem, leaf(p + ".ende_kv"));
        Node* cx = g.cross_attention(qn, kv, ende_heads, batch.tgt_spans, mem_spans);
        y = g.add(y, g.matmul(cx, leaf(p + ".ende_out")));

        Node* h3 = g.layer_norm(y, leaf(p + ".ln3_g"), leaf(p + ".ln3_b"));
        Node* f = g.relu(g.add_bias(g.matmul(h3, leaf(p + ".ffn1")), leaf(p + ".ffn1_b")));
        f = g.add_bias(g.matmul(f, leaf(p + ".ffn2")), leaf(p + ".ffn2_b"));
        y = g.add(y, f);
    }
    y = g.layer_norm(y, leaf("dec_ln_g"), leaf("dec_ln_b"));
    fg.logits = g.matmul_nt(y, dec_table);
    (void)q;
    return fg;
}

// Op-level arbitrary encoder-decoder attention: keys/values come from the
// concatenation (along sequence length) of the last `span` encoder layer
// outputs; no parameters beyond the single K/V projection pair plus the
// shared width adapter.
inline Node* arbitrary_ende_attention(Graph& g, Node* decoder_hidden, const std::vector<Node*>& encoder_outputs,
                                      int span, int heads, Node* adapter, Node* w_q, Node* w_kv, Node* w_out,
                                      const RowSpans& tgt_spans, const RowSpans& src_spans) {
    const int n = static_cast<int>(encoder_outputs.size());
    if (span < 1 || span > n) throw ValidationError("arbitrary_ende_attention: span out of range");
    std::vector<Node*> adapted(encoder_outputs.size(), nullptr);
    for (int i = n - span; i < n; ++i)
        adapted[static_cast<std::size_t>(i)] = g.matmul(encoder_outputs[static_cast<std::size_t>(i)], adapter);
    RowSpans mem_spans;
    Node* mem = g.span_concat(adapted, src_spans, span, &mem_spans);
    Node* qn = g.matmul(decoder_hidden, w_q);
    Node* kv = g.matmul(mem, w_kv);
    Node* cx = g.cross_attention(qn, kv, heads, tgt_spans, mem_spans);
    return g.matmul(cx, w_out);
}

}  // namespace hat
