#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hat/common.hpp"

namespace hat {

using json = nlohmann::json;

// The elastic encoder-decoder search space. Encoder depth and the total
// Q/K/V projection width are fixed; everything else is a per-model or
// per-layer choice.
struct DesignSpace {
    std::vector<int> embed_choices;
    std::vector<int> hidden_choices;
    std::vector<int> head_choices;
    std::vector<int> decoder_layer_choices;
    int encoder_layer_count = 0;
    std::vector<int> attend_span_choices;
    int qkv_dim = 0;
    int vocab_size = 0;
    int max_seq_len = 0;

    int max_embed() const { return embed_choices.back(); }
    int max_hidden() const { return hidden_choices.back(); }
    int max_decoder_layers() const { return decoder_layer_choices.back(); }

    void validate() const {
        auto check_list = [](const std::vector<int>& v, const char* what) {
            if (v.empty()) throw ValidationError(std::string("DesignSpace: empty choice list: ") + what);
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] <= 0) throw ValidationError(std::string("DesignSpace: non-positive choice in ") + what);
                if (i > 0 && v[i] <= v[i - 1])
                    throw ValidationError(std::string("DesignSpace: choices must be ascending and duplicate-free: ") + what);
            }
        };
        check_list(embed_choices, "embed_choices");
        check_list(hidden_choices, "hidden_choices");
        check_list(head_choices, "head_choices");
        check_list(decoder_layer_choices, "decoder_layer_choices");
        check_list(attend_span_choices, "attend_span_choices");
        if (encoder_layer_count <= 0) throw ValidationError("DesignSpace: encoder_layer_count must be positive");
        if (qkv_dim <= 0) throw ValidationError("DesignSpace: qkv_dim must be positive");
        if (vocab_size <= 3) throw ValidationError("DesignSpace: vocab_size must exceed the special ids");
        if (max_seq_len <= 2) throw ValidationError("DesignSpace: max_seq_len too small");
        for (int h : head_choices)
            if (qkv_dim % h != 0) throw ValidationError("DesignSpace: every head choice must divide qkv_dim");
        if (attend_span_choices.back() > encoder_layer_count)
            throw ValidationError("DesignSpace: max attend span exceeds encoder layer count");
    }

    // Small space with the same structure as the full-scale one, sized to
    // train in minutes on a CPU.
    static DesignSpace desk_default() {
        DesignSpace s;
        s.embed_choices = {64, 80};
        s.hidden_choices = {128, 256, 384};
        s.head_choices = {2, 4};
        s.decoder_layer_choices = {1, 2, 3, 4};
        s.encoder_layer_count = 4;
        s.attend_span_choices = {1, 2, 3};
        s.qkv_dim = 64;
        s.vocab_size = 32;
        s.max_seq_len = 32;
        return s;
    }

    bool operator==(const DesignSpace&) const = default;
};

// One concrete SubTransformer genome. Decoder gene lists have fixed length
// max(decoder_layer_choices); entries beyond decoder_layers are carried
// through the genetic operators but ignored by the model builder.
struct ArchConfig {
    int encoder_embed_dim = 0;
    int decoder_embed_dim = 0;
    int encoder_layers = 0;
    int decoder_layers = 0;
    std::vector<int> enc_hidden;
    std::vector<int> enc_heads;
    std::vector<int> dec_hidden;
    std::vector<int> dec_heads;
    std::vector<int> ende_heads;
    std::vector<int> attend_spans;

    bool operator==(const ArchConfig&) const = default;

    int max_active_span() const {
        int m = 0;
        for (int l = 0; l < decoder_layers; ++l) m = std::max(m, attend_spans[static_cast<std::size_t>(l)]);
        return m;
    }

    std::vector<int> genome() const {
        std::vector<int> g{encoder_embed_dim, decoder_embed_dim, encoder_layers, decoder_layers};
        for (const auto* v : {&enc_hidden, &enc_heads, &dec_hidden, &dec_heads, &ende_heads, &attend_spans})
            g.insert(g.end(), v->begin(), v->end());
        return g;
    }

    std::string genome_key() const {
        std::string k;
        for (int v : genome()) {
            k += std::to_string(v);
            k += ',';
        }
        return k;
    }
};

using FeatureVector = std::array<double, 10>;

namespace detail {

// Enumerates every gene with its choice list, in the canonical order used by
// sampling and the genetic operators.
template <class Arch, class F>
void for_each_gene(Arch& a, const DesignSpace& s, F&& f) {
    f(a.encoder_embed_dim, s.embed_choices);
    f(a.decoder_embed_dim, s.embed_choices);
    for (int i = 0; i < s.encoder_layer_count; ++i) {
        f(a.enc_hidden[static_cast<std::size_t>(i)], s.hidden_choices);
        f(a.enc_heads[static_cast<std::size_t>(i)], s.head_choices);
    }
    f(a.decoder_layers, s.decoder_layer_choices);
    for (int i = 0; i < s.max_decoder_layers(); ++i) {
        f(a.dec_hidden[static_cast<std::size_t>(i)], s.hidden_choices);
        f(a.dec_heads[static_cast<std::size_t>(i)], s.head_choices);
        f(a.ende_heads[static_cast<std::size_t>(i)], s.head_choices);
        f(a.attend_spans[static_cast<std::size_t>(i)], s.attend_span_choices);
    }
}

inline ArchConfig empty_arch(const DesignSpace& s) {
    ArchConfig a;
    a.encoder_layers = s.encoder_layer_count;
    a.enc_hidden.assign(static_cast<std::size_t>(s.encoder_layer_count), 0);
    a.enc_heads.assign(static_cast<std::size_t>(s.encoder_layer_count), 0);
    const auto md = static_cast<std::size_t>(s.max_decoder_layers());
    a.dec_hidden.assign(md, 0);
    a.dec_heads.assign(md, 0);
    a.ende_heads.assign(md, 0);
    a.attend_spans.assign(md, 0);
    return a;
}

}  // namespace detail

inline void validate_arch(const DesignSpace& s, const ArchConfig& a) {
    s.validate();
    if (a.encoder_layers != s.encoder_layer_count)
        throw ValidationError("ArchConfig: encoder_layers must equal the space's encoder_layer_count");
    auto expect_len = [](const std::vector<int>& v, std::size_t n, const char* what) {
        if (v.size() != n) throw ValidationError(std::string("ArchConfig: wrong gene list length: ") + what);
    };
    expect_len(a.enc_hidden, static_cast<std::size_t>(s.encoder_layer_count), "enc_hidden");
    expect_len(a.enc_heads, static_cast<std::size_t>(s.encoder_layer_count), "enc_heads");
    const auto md = static_cast<std::size_t>(s.max_decoder_layers());
    expect_len(a.dec_hidden, md, "dec_hidden");
    expect_len(a.dec_heads, md, "dec_heads");
    expect_len(a.ende_heads, md, "ende_heads");
    expect_len(a.attend_spans, md, "attend_spans");
    auto member = [](int v, const std::vector<int>& choices) {
        return std::find(choices.begin(), choices.end(), v) != choices.end();
    };
    detail::for_each_gene(const_cast<ArchConfig&>(a), s, [&](int& v, const std::vector<int>& choices) {
        if (!member(v, choices)) throw ValidationError("ArchConfig: gene value not in its choice list");
    });
}

inline bool arch_is_valid(const DesignSpace& s, const ArchConfig& a) {
    try {
        validate_arch(s, a);
        return true;
    } catch (const ValidationError&) {
        return false;
    }
}

inline ArchConfig sample_uniform(const DesignSpace& s, Rng& rng) {
    s.validate();
    ArchConfig a = detail::empty_arch(s);
    detail::for_each_gene(a, s, [&](int& v, const std::vector<int>& choices) { v = rng.pick(choices); });
    return a;
}

// Every gene is independently resampled with probability p; resampling may
// reselect the current value.
inline ArchConfig mutate(const ArchConfig& parent, double p, const DesignSpace& s, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw ValidationError("mutate: probability out of range");
    validate_arch(s, parent);
    ArchConfig child = parent;
    detail::for_each_gene(child, s, [&](int& v, const std::vector<int>& choices) {
        if (rng.bernoulli(p)) v = rng.pick(choices);
    });
    return child;
}

// Uniform gene mixing of two parents from the same space.
inline ArchConfig crossover(const ArchConfig& a, const ArchConfig& b, const DesignSpace& s, Rng& rng) {
    validate_arch(s, a);
    validate_arch(s, b);
    ArchConfig child = a;
    std::vector<const int*> b_genes;
    detail::for_each_gene(const_cast<ArchConfig&>(b), s,
                          [&](int& v, const std::vector<int>&) { b_genes.push_back(&v); });
    std::size_t idx = 0;
    detail::for_each_gene(child, s, [&](int& v, const std::vector<int>&) {
        if (rng.bernoulli(0.5)) v = *b_genes[idx];
        ++idx;
    });
    return child;
}

// Ten-element architecture descriptor; per-layer averages are taken over the
// active decoder layers only.
inline FeatureVector encode_features(const ArchConfig& a) {
    auto mean_prefix = [](const std::vector<int>& v, int n) {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += v[static_cast<std::size_t>(i)];
        return sum / n;
    };
    return FeatureVector{
        static_cast<double>(a.encoder_layers),
        static_cast<double>(a.encoder_embed_dim),
        mean_prefix(a.enc_hidden, a.encoder_layers),
        mean_prefix(a.enc_heads, a.encoder_layers),
        static_cast<double>(a.decoder_layers),
        static_cast<double>(a.decoder_embed_dim),
        mean_prefix(a.dec_hidden, a.decoder_layers),
        mean_prefix(a.dec_heads, a.decoder_layers),
        mean_prefix(a.ende_heads, a.decoder_layers),
        mean_prefix(a.attend_spans, a.decoder_layers),
    };
}

inline double linear_flops(std::size_t m, std::size_t n, std::size_t k) {
    return 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
}

// Closed-form multiply-accumulate count (2 FLOPs per MAC) for translating a
// src_len source into tgt_len autoregressive decode steps with KV caching.
// Covers all matrix products: attention projections, score/context products
// (cross-attention memory is attend_span * src_len long), the encoder-memory
// width adapter, FFN layers and the tied output projection. Softmax,
// layer-norm and activation costs are excluded.
inline double estimate_flops(const ArchConfig& a, const DesignSpace& s, int src_len, int tgt_len) {
    if (src_len < 1 || tgt_len < 1) throw ValidationError("estimate_flops: lengths must be >= 1");
    validate_arch(s, a);
    const double sl = src_len, tl = tgt_len;
    const double q = s.qkv_dim;
    const double ee = a.encoder_embed_dim, ed = a.decoder_embed_dim;
    double fl = 0.0;
    // encoder, full sequence
    for (int i = 0; i < a.encoder_layers; ++i) {
        const double h = a.enc_hidden[static_cast<std::size_t>(i)];
        fl += 2.0 * sl * ee * 3.0 * q;      // fused Q/K/V projection
        fl += 2.0 * sl * sl * q * 2.0;      // scores + context (head count cancels)
        fl += 2.0 * sl * q * ee;            // output projection
        fl += 2.0 * sl * ee * h + 2.0 * sl * h * ee;
    }
    // encoder-memory adapter, applied once per attended encoder layer
    fl += static_cast<double>(a.max_active_span()) * 2.0 * sl * ee * ed;
    // decoder, one token per step with cached self-attention keys/values
    const double steps = tl;
    const double sum_keys = tl * (tl + 1.0) / 2.0;  // sum of cache lengths
    for (int l = 0; l < a.decoder_layers; ++l) {
        const double h = a.dec_hidden[static_cast<std::size_t>(l)];
        const double mem = static_cast<double>(a.attend_spans[static_cast<std::size_t>(l)]) * sl;
        fl += 2.0 * steps * ed * 3.0 * q;   // self Q/K/V
        fl += 2.0 * sum_keys * q * 2.0;     // self scores + context
        fl += 2.0 * steps * q * ed;         // self output
        fl += 2.0 * mem * ed * 2.0 * q;     // cross K/V, computed once
        fl += 2.0 * steps * ed * q;         // cross query
        fl += 2.0 * steps * mem * q * 2.0;  // cross scores + context
        fl += 2.0 * steps * q * ed;         // cross output
        fl += 2.0 * steps * ed * h + 2.0 * steps * h * ed;
    }
    fl += 2.0 * steps * ed * static_cast<double>(s.vocab_size);  // tied output projection
    return fl;
}

// ---- JSON (stable schema used by the CLI and the latency dataset) ----

inline void to_json(json& j, const DesignSpace& s) {
    j = json{{"embed_choices", s.embed_choices},
             {"hidden_choices", s.hidden_choices},
             {"head_choices", s.head_choices},
             {"decoder_layer_choices", s.decoder_layer_choices},
             {"encoder_layer_count", s.encoder_layer_count},
             {"attend_span_choices", s.attend_span_choices},
             {"qkv_dim", s.qkv_dim},
             {"vocab_size", s.vocab_size},
             {"max_seq_len", s.max_seq_len}};
}

inline void from_json(const json& j, DesignSpace& s) {
    j.at("embed_choices").get_to(s.embed_choices);
    j.at("hidden_choices").get_to(s.hidden_choices);
    j.at("head_choices").get_to(s.head_choices);
    j.at("decoder_layer_choices").get_to(s.decoder_layer_choices);
    j.at("encoder_layer_count").get_to(s.encoder_layer_count);
    j.at("attend_span_choices").get_to(s.attend_span_choices);
    j.at("qkv_dim").get_to(s.qkv_dim);
    j.at("vocab_size").get_to(s.vocab_size);
    j.at("max_seq_len").get_to(s.max_seq_len);
}

inline void to_json(json& j, const ArchConfig& a) {
    j = json{{"encoder_embed_dim", a.encoder_embed_dim},
             {"decoder_embed_dim", a.decoder_embed_dim},
             {"encoder_layers", a.encoder_layers},
             {"decoder_layers", a.decoder_layers},
             {"enc_hidden", a.enc_hidden},
             {"enc_heads", a.enc_heads},
             {"dec_hidden", a.dec_hidden},
             {"dec_heads", a.dec_heads},
             {"ende_heads", a.ende_heads},
             {"attend_spans", a.attend_spans}};
}

inline void from_json(const json& j, ArchConfig& a) {
    j.at("encoder_embed_dim").get_to(a.encoder_embed_dim);
    j.at("decoder_embed_dim").get_to(a.decoder_embed_dim);
    j.at("encoder_layers").get_to(a.encoder_layers);
    j.at("decoder_layers").get_to(a.decoder_layers);
    j.at("enc_hidden").get_to(a.enc_hidden);
    j.at("enc_heads").get_to(a.enc_heads);
    j.at("dec_hidden").get_to(a.dec_hidden);
    j.at("dec_heads").get_to(a.dec_heads);
    j.at("ende_heads").get_to(a.ende_heads);
    j.at("attend_spans").get_to(a.attend_spans);
}

}  // namespace hat
