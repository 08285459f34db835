#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "hat/tensor.hpp"

namespace hat {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

inline CMapRM cmap(const Tensor& t) {
    return CMapRM(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MapRM mmap(Tensor& t) {
    return MapRM(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

// Row ranges of the sequences packed into one matrix: sequence i occupies
// rows [offsets[i], offsets[i+1]).
struct RowSpans {
    std::vector<std::size_t> offsets{0};

    std::size_t count() const { return offsets.size() - 1; }
    std::size_t begin(std::size_t i) const { return offsets[i]; }
    std::size_t len(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
    std::size_t total() const { return offsets.back(); }

    void push(std::size_t n) { offsets.push_back(offsets.back() + n); }

    static RowSpans single(std::size_t n) {
        RowSpans s;
        s.push(n);
        return s;
    }
};

struct Node {
    Tensor val;
    Tensor grad;  // allocated only when needs_grad
    bool needs_grad = false;
    std::function<void()> backward;
};

// Reverse-mode tape over the fixed op set the model family needs. Nodes are
// appended in forward order; backward() replays them in reverse. One graph
// per evaluation; no shared mutable state between graphs.
class Graph {
  public:
    Node* leaf(Tensor v) { return alloc(std::move(v), true); }
    Node* constant(Tensor v) { return alloc(std::move(v), false); }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- elementwise / affine ----

    Node* add(Node* a, Node* b) {
        if (!a->val.same_shape(b->val)) throw DimensionError("add: shape mismatch");
        Tensor out = a->val;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->val.data[i];
        Node* n = alloc(std::move(out), a->needs_grad || b->needs_grad);
        if (n->needs_grad)
            n->backward = [n, a, b] {
                if (a->needs_grad)
                    for (std::size_t i = 0; i < n->grad.size(); ++i) a->grad.data[i] += n->grad.data[i];
                if (b->needs_grad)
                    for (std::size_t i = 0; i < n->grad.size(); ++i) b->grad.data[i] += n->grad.data[i];
            };
        return n;
    }

    // x: [m,n], bias: [n]
    Node* add_bias(Node* x, Node* bias) {
        const std::size_t m = x->val.rows(), n = x->val.cols();
        if (bias->val.size() != n) throw DimensionError("add_bias: bias length mismatch");
        Tensor out = x->val;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bias->val.data[j];
        Node* nd = alloc(std::move(out), x->needs_grad || bias->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, x, bias, m, n] {
                if (x->needs_grad)
                    for (std::size_t i = 0; i < nd->grad.size(); ++i) x->grad.data[i] += nd->grad.data[i];
                if (bias->needs_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) bias->grad.data[j] += nd->grad.data[i * n + j];
            };
        return nd;
    }

    Node* scale(Node* x, double c) {
        Tensor out = x->val;
        for (double& v : out.data) v *= c;
        Node* n = alloc(std::move(out), x->needs_grad);
        if (n->needs_grad)
            n->backward = [n, x, c] {
                for (std::size_t i = 0; i < n->grad.size(); ++i) x->grad.data[i] += c * n->grad.data[i];
            };
        return n;
    }

    Node* relu(Node* x) {
        Tensor out = x->val;
        for (double& v : out.data)
            if (v < 0.0) v = 0.0;
        Node* n = alloc(std::move(out), x->needs_grad);
        if (n->needs_grad)
            n->backward = [n, x] {
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    if (n->val.data[i] > 0.0) x->grad.data[i] += n->grad.data[i];
            };
        return n;
    }

    // ---- matrix products ----

    Node* matmul(Node* a, Node* b) {
        if (a->val.cols() != b->val.rows()) throw DimensionError("matmul: inner dimensions differ");
        Tensor out = Tensor::zeros({a->val.rows(), b->val.cols()});
        mmap(out).noalias() = cmap(a->val) * cmap(b->val);
        Node* n = alloc(std::move(out), a->needs_grad || b->needs_grad);
        if (n->needs_grad)
            n->backward = [n, a, b] {
                if (a->needs_grad) mmap(a->grad).noalias() += cmap(n->grad) * cmap(b->val).transpose();
                if (b->needs_grad) mmap(b->grad).noalias() += cmap(a->val).transpose() * cmap(n->grad);
            };
        return n;
    }

    // C = A * B^T with A [m,k], B [n,k].
    Node* matmul_nt(Node* a, Node* b) {
        if (a->val.cols() != b->val.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
        Tensor out = Tensor::zeros({a->val.rows(), b->val.rows()});
        mmap(out).noalias() = cmap(a->val) * cmap(b->val).transpose();
        Node* n = alloc(std::move(out), a->needs_grad || b->needs_grad);
        if (n->needs_grad)
            n->backward = [n, a, b] {
                if (a->needs_grad) mmap(a->grad).noalias() += cmap(n->grad) * cmap(b->val);
                if (b->needs_grad) mmap(b->grad).noalias() += cmap(n->grad).transpose() * cmap(a->val);
            };
        return n;
    }

    // ---- row-wise nonlinearities ----

    Node* softmax_rows(Node* x) {
        const std::size_t m = x->val.rows(), n = x->val.cols();
        Tensor out = x->val;
        for (std::size_t i = 0; i < m; ++i) {
            double* row = out.data.data() + i * n;
            double mx = row[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
        }
        Node* nd = alloc(std::move(out), x->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, x, m, n] {
                for (std::size_t i = 0; i < m; ++i) {
                    const double* y = nd->val.data.data() + i * n;
                    const double* dy = nd->grad.data.data() + i * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                    double* dx = x->grad.data.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) dx[j] += (dy[j] - dot) * y[j];
                }
            };
        return nd;
    }

    static constexpr double kLayerNormEps = 1e-5;

    // Per-row normalization, then affine: y = gain .* (x - mu)/sqrt(var + eps) + bias.
    Node* layer_norm(Node* x, Node* gain, Node* bias) {
        const std::size_t m = x->val.rows(), n = x->val.cols();
        if (gain->val.size() != n || bias->val.size() != n)
            throw DimensionError("layer_norm: gain/bias length must equal the last dim");
        auto xhat = std::make_shared<std::vector<double>>(m * n);
        auto inv_sigma = std::make_shared<std::vector<double>>(m);
        Tensor out = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = x->val.data.data() + i * n;
            double mu = 0.0;
            for (std::size_t j = 0; j < n; ++j) mu += row[j];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
            (*inv_sigma)[i] = inv;
            for (std::size_t j = 0; j < n; ++j) {
                const double xh = (row[j] - mu) * inv;
                (*xhat)[i * n + j] = xh;
                out.data[i * n + j] = gain->val.data[j] * xh + bias->val.data[j];
            }
        }
        Node* nd = alloc(std::move(out), x->needs_grad || gain->needs_grad || bias->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, x, gain, bias, m, n, xhat, inv_sigma] {
                std::vector<double> dxh(n);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* dy = nd->grad.data.data() + i * n;
                    const double* xh = xhat->data() + i * n;
                    if (gain->needs_grad)
                        for (std::size_t j = 0; j < n; ++j) gain->grad.data[j] += dy[j] * xh[j];
                    if (bias->needs_grad)
                        for (std::size_t j = 0; j < n; ++j) bias->grad.data[j] += dy[j];
                    if (!x->needs_grad) continue;
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        dxh[j] = dy[j] * gain->val.data[j];
                        sum_dxh += dxh[j];
                        sum_dxh_xh += dxh[j] * xh[j];
                    }
                    const double inv = (*inv_sigma)[i];
                    const double mean_dxh = sum_dxh / static_cast<double>(n);
                    const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(n);
                    double* dx = x->grad.data.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) dx[j] += inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                }
            };
        return nd;
    }

    // ---- lookups / structure ----

    Node* embedding_lookup(Node* table, std::vector<int> ids) {
        const std::size_t v = table->val.rows(), e = table->val.cols();
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= v)
                throw ValidationError("embedding_lookup: token id out of vocabulary");
        Tensor out = Tensor::zeros({ids.size(), e});
        for (std::size_t i = 0; i < ids.size(); ++i)
            std::copy_n(table->val.data.data() + static_cast<std::size_t>(ids[i]) * e, e, out.data.data() + i * e);
        Node* nd = alloc(std::move(out), table->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, table, ids = std::move(ids), e] {
                for (std::size_t i = 0; i < ids.size(); ++i) {
                    double* dst = table->grad.data.data() + static_cast<std::size_t>(ids[i]) * e;
                    const double* src = nd->grad.data.data() + i * e;
                    for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
                }
            };
        return nd;
    }

    // Column range [c0, c1) of a [m,n] node.
    Node* slice_cols(Node* x, std::size_t c0, std::size_t c1) {
        const std::size_t m = x->val.rows(), n = x->val.cols();
        if (c0 >= c1 || c1 > n) throw DimensionError("slice_cols: bad column range");
        const std::size_t w = c1 - c0;
        Tensor out = Tensor::zeros({m, w});
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(x->val.data.data() + i * n + c0, w, out.data.data() + i * w);
        Node* nd = alloc(std::move(out), x->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, x, c0, m, n, w] {
                for (std::size_t i = 0; i < m; ++i) {
                    const double* src = nd->grad.data.data() + i * w;
                    double* dst = x->grad.data.data() + i * n + c0;
                    for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                }
            };
        return nd;
    }

    Node* col_concat(const std::vector<Node*>& parts) {
        if (parts.empty()) throw DimensionError("col_concat: empty");
        const std::size_t m = parts[0]->val.rows();
        std::size_t n = 0;
        bool needs = false;
        for (Node* p : parts) {
            if (p->val.rows() != m) throw DimensionError("col_concat: row mismatch");
            n += p->val.cols();
            needs = needs || p->needs_grad;
        }
        Tensor out = Tensor::zeros({m, n});
        std::size_t c0 = 0;
        for (Node* p : parts) {
            const std::size_t pc = p->val.cols();
            for (std::size_t i = 0; i < m; ++i)
                std::copy_n(p->val.data.data() + i * pc, pc, out.data.data() + i * n + c0);
            c0 += pc;
        }
        Node* nd = alloc(std::move(out), needs);
        if (nd->needs_grad)
            nd->backward = [nd, parts, m, n] {
                std::size_t c0 = 0;
                for (Node* p : parts) {
                    const std::size_t pc = p->val.cols();
                    if (p->needs_grad)
                        for (std::size_t i = 0; i < m; ++i) {
                            const double* src = nd->grad.data.data() + i * n + c0;
                            double* dst = p->grad.data.data() + i * pc;
                            for (std::size_t j = 0; j < pc; ++j) dst[j] += src[j];
                        }
                    c0 += pc;
                }
            };
        return nd;
    }

    // Builds the packed cross-attention memory: for every sequence, the rows
    // of the last `span` layer outputs are stacked, shallowest attended layer
    // first and the final layer last. All layers share `spans`.
    Node* span_concat(const std::vector<Node*>& layers, const RowSpans& spans, int span, RowSpans* out_spans) {
        const int n_layers = static_cast<int>(layers.size());
        if (span < 1 || span > n_layers) throw ValidationError("span_concat: span out of range");
        for (int l = n_layers - span; l < n_layers; ++l)
            if (!layers[static_cast<std::size_t>(l)]) throw ValidationError("span_concat: attended layer missing");
        const std::size_t e = layers[static_cast<std::size_t>(n_layers - span)]->val.cols();
        RowSpans mem;
        for (std::size_t b = 0; b < spans.count(); ++b) mem.push(static_cast<std::size_t>(span) * spans.len(b));
        Tensor out = Tensor::zeros({mem.total(), e});
        bool needs = false;
        for (int l = n_layers - span; l < n_layers; ++l) needs = needs || layers[static_cast<std::size_t>(l)]->needs_grad;
        std::size_t row = 0;
        for (std::size_t b = 0; b < spans.count(); ++b) {
            for (int l = n_layers - span; l < n_layers; ++l) {
                const double* src = layers[static_cast<std::size_t>(l)]->val.data.data() + spans.begin(b) * e;
                std::copy_n(src, spans.len(b) * e, out.data.data() + row * e);
                row += spans.len(b);
            }
        }
        Node* nd = alloc(std::move(out), needs);
        if (nd->needs_grad)
            nd->backward = [nd, layers, spans, span, n_layers, e] {
                std::size_t row = 0;
                for (std::size_t b = 0; b < spans.count(); ++b) {
                    for (int l = n_layers - span; l < n_layers; ++l) {
                        Node* layer = layers[static_cast<std::size_t>(l)];
                        if (layer->needs_grad) {
                            const double* src = nd->grad.data.data() + row * e;
                            double* dst = layer->grad.data.data() + spans.begin(b) * e;
                            for (std::size_t k = 0; k < spans.len(b) * e; ++k) dst[k] += src[k];
                        }
                        row += spans.len(b);
                    }
                }
            };
        if (out_spans) *out_spans = mem;
        return nd;
    }

    // ---- attention cores ----
    //
    // Multi-head scaled dot-product over packed sequences. The projections
    // stay outside as ordinary matmuls so they batch across the whole pack;
    // the per-sequence, per-head softmax(QK^T/sqrt(d))V runs here with its
    // analytic backward. Softmax probabilities are kept for the backward pass.

    // qkv: [N, 3*q] with column sections Q|K|V.
    Node* self_attention(Node* qkv, int heads, const RowSpans& spans, bool causal) {
        const std::size_t q = qkv->val.cols() / 3;
        if (qkv->val.cols() != 3 * q || q == 0) throw DimensionError("self_attention: expected [N, 3q]");
        return attention_impl(qkv, 0, qkv, q, 2 * q, q, heads, spans, spans, causal);
    }

    // query: [Nq, q]; kv: [Nm, 2*q] with column sections K|V.
    Node* cross_attention(Node* query, Node* kv, int heads, const RowSpans& q_spans, const RowSpans& kv_spans) {
        const std::size_t q = query->val.cols();
        if (kv->val.cols() != 2 * q) throw DimensionError("cross_attention: expected kv [N, 2q]");
        return attention_impl(query, 0, kv, 0, q, q, heads, q_spans, kv_spans, false);
    }

    // ---- losses ----

    // Mean token cross-entropy with optional label smoothing; positions whose
    // target equals pad_id are excluded from the average.
    Node* cross_entropy(Node* logits, std::vector<int> targets, int pad_id = 0, double label_smoothing = 0.0) {
        const std::size_t t = logits->val.rows(), v = logits->val.cols();
        if (targets.size() != t) throw DimensionError("cross_entropy: target length mismatch");
        for (int y : targets)
            if (y < 0 || static_cast<std::size_t>(y) >= v)
                throw ValidationError("cross_entropy: target id out of vocabulary");
        auto probs = std::make_shared<std::vector<double>>(t * v);
        double total = 0.0;
        std::size_t counted = 0;
        for (std::size_t i = 0; i < t; ++i) {
            const double* row = logits->val.data.data() + i * v;
            double mx = row[0];
            for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
            const double lse = mx + std::log(sum);
            double sum_logp = 0.0;
            for (std::size_t j = 0; j < v; ++j) {
                const double logp = row[j] - lse;
                (*probs)[i * v + j] = std::exp(logp);
                sum_logp += logp;
            }
            if (targets[i] == pad_id) continue;
            ++counted;
            const double logp_y = row[static_cast<std::size_t>(targets[i])] - lse;
            total += (1.0 - label_smoothing) * -logp_y + label_smoothing / static_cast<double>(v) * -sum_logp;
        }
        Tensor out{{1}, {counted ? total / static_cast<double>(counted) : 0.0}};
        Node* nd = alloc(std::move(out), logits->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, logits, targets = std::move(targets), pad_id, label_smoothing, probs, t, v, counted] {
                if (!counted) return;
                const double g = nd->grad.data[0] / static_cast<double>(counted);
                const double uniform = label_smoothing / static_cast<double>(v);
                for (std::size_t i = 0; i < t; ++i) {
                    if (targets[i] == pad_id) continue;
                    double* dl = logits->grad.data.data() + i * v;
                    const double* p = probs->data() + i * v;
                    for (std::size_t j = 0; j < v; ++j) {
                        double q = uniform;
                        if (j == static_cast<std::size_t>(targets[i])) q += 1.0 - label_smoothing;
                        dl[j] += (p[j] - q) * g;
                    }
                }
            };
        return nd;
    }

    // Mean row cross-entropy against a full target distribution (rows of
    // `target` sum to 1). Rows with row_mask == 0 are excluded from the mean.
    // Used for distillation soft labels.
    Node* soft_cross_entropy(Node* logits, Tensor target, std::vector<char> row_mask = {}) {
        const std::size_t t = logits->val.rows(), v = logits->val.cols();
        if (!target.same_shape(logits->val)) throw DimensionError("soft_cross_entropy: shape mismatch");
        if (row_mask.empty()) row_mask.assign(t, 1);
        if (row_mask.size() != t) throw DimensionError("soft_cross_entropy: mask length mismatch");
        auto probs = std::make_shared<std::vector<double>>(t * v);
        double total = 0.0;
        std::size_t counted = 0;
        for (std::size_t i = 0; i < t; ++i) {
            const double* row = logits->val.data.data() + i * v;
            double mx = row[0];
            for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
            const double lse = mx + std::log(sum);
            for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(row[j] - lse);
            if (!row_mask[i]) continue;
            ++counted;
            for (std::size_t j = 0; j < v; ++j) total -= target.data[i * v + j] * (row[j] - lse);
        }
        Tensor out{{1}, {counted ? total / static_cast<double>(counted) : 0.0}};
        Node* nd = alloc(std::move(out), logits->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, logits, target = std::move(target), mask = std::move(row_mask), probs, t, v, counted] {
                if (!counted) return;
                const double g = nd->grad.data[0] / static_cast<double>(counted);
                for (std::size_t i = 0; i < t; ++i) {
                    if (!mask[i]) continue;
                    for (std::size_t j = 0; j < v; ++j)
                        logits->grad.data[i * v + j] += ((*probs)[i * v + j] - target.data[i * v + j]) * g;
                }
            };
        return nd;
    }

    Node* mse_loss(Node* pred, Tensor target) {
        if (pred->val.size() != target.size()) throw DimensionError("mse_loss: size mismatch");
        const std::size_t n = target.size();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pred->val.data[i] - target.data[i];
            total += d * d;
        }
        Tensor out{{1}, {total / static_cast<double>(n)}};
        Node* nd = alloc(std::move(out), pred->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, pred, target = std::move(target), n] {
                const double g = 2.0 * nd->grad.data[0] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i)
                    pred->grad.data[i] += g * (pred->val.data[i] - target.data[i]);
            };
        return nd;
    }

    void backward(Node* loss) {
        if (loss->val.size() != 1) throw DimensionError("backward: loss must be scalar");
        if (!loss->needs_grad) throw ValidationError("backward: loss does not depend on any leaf");
        loss->grad.data[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->backward) it->backward();
    }

  private:
    Node* alloc(Tensor v, bool needs) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.val = std::move(v);
        n.needs_grad = needs;
        if (needs) n.grad = Tensor::zeros(n.val.shape);
        return &n;
    }

    // `width` is the per-section projection width q; Q lives in qsrc columns
    // [q_col0, q_col0+width), K/V in kvsrc columns starting at k_col0/v_col0.
    Node* attention_impl(Node* qsrc, std::size_t q_col0, Node* kvsrc, std::size_t k_col0, std::size_t v_col0,
                         std::size_t width, int heads, const RowSpans& q_spans, const RowSpans& kv_spans,
                         bool causal) {
        const std::size_t q = width;
        if (heads <= 0 || q % static_cast<std::size_t>(heads) != 0)
            throw DimensionError("attention: projection width not divisible by head count");
        if (q_spans.count() != kv_spans.count()) throw DimensionError("attention: sequence count mismatch");
        if (causal)
            for (std::size_t b = 0; b < q_spans.count(); ++b)
                if (q_spans.len(b) != kv_spans.len(b)) throw DimensionError("attention: causal requires square blocks");
        const std::size_t d = q / static_cast<std::size_t>(heads);
        const double alpha = 1.0 / std::sqrt(static_cast<double>(d));
        const std::size_t n_out = q_spans.total();

        auto probs = std::make_shared<std::vector<double>>();
        std::size_t probs_total = 0;
        for (std::size_t b = 0; b < q_spans.count(); ++b)
            probs_total += q_spans.len(b) * kv_spans.len(b) * static_cast<std::size_t>(heads);
        probs->resize(probs_total);

        Tensor out = Tensor::zeros({n_out, q});
        const std::size_t qs = qsrc->val.cols(), ks = kvsrc->val.cols();
        std::size_t pofs = 0;
        for (std::size_t b = 0; b < q_spans.count(); ++b) {
            const std::size_t tq = q_spans.len(b), tk = kv_spans.len(b);
            const double* qbase = qsrc->val.data.data() + q_spans.begin(b) * qs + q_col0;
            const double* kbase = kvsrc->val.data.data() + kv_spans.begin(b) * ks + k_col0;
            const double* vbase = kvsrc->val.data.data() + kv_spans.begin(b) * ks + v_col0;
            double* obase = out.data.data() + q_spans.begin(b) * q;
            for (int h = 0; h < heads; ++h) {
                const std::size_t hc = static_cast<std::size_t>(h) * d;
                double* p = probs->data() + pofs;
                for (std::size_t i = 0; i < tq; ++i) {
                    const std::size_t kmax = causal ? i + 1 : tk;
                    double* prow = p + i * tk;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t j = 0; j < kmax; ++j) {
                        double s = 0.0;
                        const double* qr = qbase + i * qs + hc;
                        const double* kr = kbase + j * ks + hc;
                        for (std::size_t c = 0; c < d; ++c) s += qr[c] * kr[c];
                        s *= alpha;
                        prow[j] = s;
                        mx = std::max(mx, s);
                    }
                    double sum = 0.0;
                    for (std::size_t j = 0; j < kmax; ++j) {
                        prow[j] = std::exp(prow[j] - mx);
                        sum += prow[j];
                    }
                    for (std::size_t j = 0; j < kmax; ++j) prow[j] /= sum;
                    for (std::size_t j = kmax; j < tk; ++j) prow[j] = 0.0;
                    double* orow = obase + i * q + hc;
                    for (std::size_t j = 0; j < kmax; ++j) {
                        const double w = prow[j];
                        const double* vr = vbase + j * ks + hc;
                        for (std::size_t c = 0; c < d; ++c) orow[c] += w * vr[c];
                    }
                }
                pofs += tq * tk;
            }
        }

        Node* nd = alloc(std::move(out), qsrc->needs_grad || kvsrc->needs_grad);
        if (nd->needs_grad)
            nd->backward = [nd, qsrc, kvsrc, q_col0, k_col0, v_col0, qs, ks, heads, d, alpha, q, q_spans, kv_spans,
                            causal, probs] {
                std::vector<double> ds;
                std::size_t pofs = 0;
                for (std::size_t b = 0; b < q_spans.count(); ++b) {
                    const std::size_t tq = q_spans.len(b), tk = kv_spans.len(b);
                    const double* qbase = qsrc->val.data.data() + q_spans.begin(b) * qs + q_col0;
                    const double* kbase = kvsrc->val.data.data() + kv_spans.begin(b) * ks + k_col0;
                    const double* vbase = kvsrc->val.data.data() + kv_spans.begin(b) * ks + v_col0;
                    double* dqbase = qsrc->needs_grad ? qsrc->grad.data.data() + q_spans.begin(b) * qs + q_col0 : nullptr;
                    double* dkbase = kvsrc->needs_grad ? kvsrc->grad.data.data() + kv_spans.begin(b) * ks + k_col0 : nullptr;
                    double* dvbase = kvsrc->needs_grad ? kvsrc->grad.data.data() + kv_spans.begin(b) * ks + v_col0 : nullptr;
                    const double* dobase = nd->grad.data.data() + q_spans.begin(b) * q;
                    ds.assign(tk, 0.0);
                    for (int h = 0; h < heads; ++h) {
                        const std::size_t hc = static_cast<std::size_t>(h) * d;
                        const double* p = probs->data() + pofs;
                        for (std::size_t i = 0; i < tq; ++i) {
                            const std::size_t kmax = causal ? i + 1 : tk;
                            const double* prow = p + i * tk;
                            const double* dorow = dobase + i * q + hc;
                            // dV and dP
                            double dot = 0.0;
                            for (std::size_t j = 0; j < kmax; ++j) {
                                double dp = 0.0;
                                const double* vr = vbase + j * ks + hc;
                                for (std::size_t c = 0; c < d; ++c) dp += dorow[c] * vr[c];
                                if (dvbase) {
                                    double* dvr = dvbase + j * ks + hc;
                                    const double w = prow[j];
                                    for (std::size_t c = 0; c < d; ++c) dvr[c] += w * dorow[c];
                                }
                                ds[j] = dp;
                                dot += dp * prow[j];
                            }
                            // dS = (dP - dot) .* P, then dQ, dK
                            for (std::size_t j = 0; j < kmax; ++j) {
                                const double dsj = (ds[j] - dot) * prow[j] * alpha;
                                if (dsj == 0.0) continue;
                                const double* qr = qbase + i * qs + hc;
                                const double* kr = kbase + j * ks + hc;
                                if (dqbase) {
                                    double* dqr = dqbase + i * qs + hc;
                                    for (std::size_t c = 0; c < d; ++c) dqr[c] += dsj * kr[c];
                                }
                                if (dkbase) {
                                    double* dkr = dkbase + j * ks + hc;
                                    for (std::size_t c = 0; c < d; ++c) dkr[c] += dsj * qr[c];
                                }
                            }
                        }
                        pofs += tq * tk;
                    }
                }
            };
        return nd;
    }

    std::deque<Node> nodes_;
};

}  // namespace hat
