#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hat/adam.hpp"
#include "hat/graph.hpp"

using namespace hat;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform_range(lo, hi);
    return t;
}

// Central-difference gradient check: h = 1e-5, |analytic - numeric| relative
// to max(1, |analytic|, |numeric|) must stay within tol.
using BuildFn = std::function<Node*(Graph&, std::vector<Node*>&)>;

double eval_loss(const std::vector<Tensor>& inputs, const BuildFn& build) {
    Graph g;
    std::vector<Node*> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    return build(g, leaves)->val.data[0];
}

void gradcheck(std::vector<Tensor> inputs, const BuildFn& build, double tol = 1e-5, double h = 1e-5) {
    Graph g;
    std::vector<Node*> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    Node* loss = build(g, leaves);
    g.backward(loss);
    for (std::size_t li = 0; li < inputs.size(); ++li) {
        for (std::size_t i = 0; i < inputs[li].size(); ++i) {
            auto plus = inputs;
            plus[li].data[i] += h;
            auto minus = inputs;
            minus[li].data[i] -= h;
            const double num = (eval_loss(plus, build) - eval_loss(minus, build)) / (2.0 * h);
            const double ana = leaves[li]->grad.data[i];
            const double err = std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
            ASSERT_LE(err, tol) << "leaf " << li << " entry " << i << " analytic " << ana << " numeric " << num;
        }
    }
}

// scalar sum via constant one-vectors: ones_row * X * ones_col
Node* sum_all(Graph& g, Node* x) {
    Node* ones_row = g.constant(Tensor::full({1, x->val.rows()}, 1.0));
    Node* ones_col = g.constant(Tensor::full({x->val.cols(), 1}, 1.0));
    return g.matmul(g.matmul(ones_row, x), ones_col);
}

}  // namespace

TEST(Matmul, IdentityAndHandValues) {
    Graph g;
    Node* eye = g.leaf(Tensor{{2, 2}, {1, 0, 0, 1}});
    Node* x = g.leaf(Tensor{{2, 2}, {3, 4, 5, 6}});
    Node* y = g.matmul(eye, x);
    EXPECT_EQ(y->val.data, x->val.data);

    Node* a = g.leaf(Tensor{{2, 2}, {1, 2, 3, 4}});
    Node* b = g.leaf(Tensor{{2, 1}, {1, 1}});
    Node* c = g.matmul(a, b);
    EXPECT_DOUBLE_EQ(c->val.data[0], 3.0);
    EXPECT_DOUBLE_EQ(c->val.data[1], 7.0);
}

TEST(Matmul, ShapeMismatchThrows) {
    Graph g;
    Node* a = g.leaf(Tensor::zeros({2, 3}));
    Node* b = g.leaf(Tensor::zeros({2, 3}));
    EXPECT_THROW(g.matmul(a, b), DimensionError);
}

TEST(Matmul, GradcheckSumOfProduct) {
    Rng rng(7);
    gradcheck({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
              [](Graph& g, std::vector<Node*>& l) { return sum_all(g, g.matmul(l[0], l[1])); }, 1e-6);
}

TEST(MatmulNT, MatchesExplicitTransposeAndGradchecks) {
    Rng rng(8);
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({4, 5}, rng);
    Graph g;
    Node* c = g.matmul_nt(g.leaf(a), g.leaf(b));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(j, k);
            EXPECT_NEAR(c->val.at(i, j), acc, 1e-12);
        }
    gradcheck({a, b}, [](Graph& g2, std::vector<Node*>& l) { return sum_all(g2, g2.matmul_nt(l[0], l[1])); }, 1e-6);
}

TEST(Softmax, RowOfEqualValuesIsUniform) {
    Graph g;
    Node* y = g.softmax_rows(g.leaf(Tensor{{1, 4}, {0.3, 0.3, 0.3, 0.3}}));
    for (double v : y->val.data) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Softmax, HandValue) {
    Graph g;
    Node* y = g.softmax_rows(g.leaf(Tensor{{1, 2}, {0.0, std::log(3.0)}}));
    EXPECT_NEAR(y->val.data[0], 0.25, 1e-12);
    EXPECT_NEAR(y->val.data[1], 0.75, 1e-12);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
    Rng rng(9);
    Tensor x = random_tensor({5, 7}, rng);
    Tensor shifted = x;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += 3.25;
    Graph g;
    Node* a = g.softmax_rows(g.leaf(x));
    Node* b = g.softmax_rows(g.leaf(shifted));
    for (std::size_t i = 0; i < a->val.size(); ++i) EXPECT_NEAR(a->val.data[i], b->val.data[i], 1e-12);
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 7; ++j) {
            row += a->val.at(i, j);
            EXPECT_GE(a->val.at(i, j), 0.0);
            EXPECT_LE(a->val.at(i, j), 1.0);
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(Softmax, Gradcheck) {
    Rng rng(10);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor t = random_tensor({3, 5}, rng);
    gradcheck({x}, [t](Graph& g, std::vector<Node*>& l) { return g.mse_loss(g.softmax_rows(l[0]), t); });
}

TEST(LayerNorm, ConstantRowGivesBias) {
    Graph g;
    Node* y = g.layer_norm(g.leaf(Tensor{{1, 3}, {2.0, 2.0, 2.0}}), g.leaf(Tensor{{3}, {1, 1, 1}}),
                           g.leaf(Tensor{{3}, {0.5, -0.25, 0.0}}));
    EXPECT_NEAR(y->val.data[0], 0.5, 1e-9);
    EXPECT_NEAR(y->val.data[1], -0.25, 1e-9);
    EXPECT_NEAR(y->val.data[2], 0.0, 1e-9);
}

TEST(LayerNorm, TwoPointRow) {
    Graph g;
    Node* y = g.layer_norm(g.leaf(Tensor{{1, 2}, {1.0, 3.0}}), g.leaf(Tensor{{2}, {1, 1}}),
                           g.leaf(Tensor{{2}, {0, 0}}));
    EXPECT_NEAR(y->val.data[0], -1.0, 1e-3);
    EXPECT_NEAR(y->val.data[1], 1.0, 1e-3);
}

TEST(LayerNorm, Gradcheck) {
    Rng rng(11);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({6}, rng);
    Tensor t = random_tensor({4, 6}, rng);
    gradcheck({x, gain, bias},
              [t](Graph& g, std::vector<Node*>& l) { return g.mse_loss(g.layer_norm(l[0], l[1], l[2]), t); });
}

TEST(Relu, ValuesAndGradcheck) {
    Graph g;
    Node* y = g.relu(g.leaf(Tensor{{1, 2}, {-1.0, 2.0}}));
    EXPECT_DOUBLE_EQ(y->val.data[0], 0.0);
    EXPECT_DOUBLE_EQ(y->val.data[1], 2.0);

    Rng rng(12);
    Tensor x = random_tensor({3, 4}, rng);
    for (double& v : x.data) v += (v >= 0 ? 0.1 : -0.1);  // keep away from the kink
    Tensor t = random_tensor({3, 4}, rng);
    gradcheck({x}, [t](Graph& g2, std::vector<Node*>& l) { return g2.mse_loss(g2.relu(l[0]), t); });
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    for (double ls : {0.0, 0.1}) {
        Graph g;
        Node* loss = g.cross_entropy(g.leaf(Tensor::zeros({3, 8})), {3, 4, 5}, 0, ls);
        EXPECT_NEAR(loss->val.data[0], std::log(8.0), 1e-12);
    }
}

TEST(CrossEntropy, PadPositionsExcluded) {
    Graph g;
    Tensor logits = Tensor::zeros({2, 4});
    logits.at(0, 1) = 5.0;  // confident correct at the counted row
    Node* loss = g.cross_entropy(g.leaf(logits), {1, 0}, /*pad=*/0, 0.0);
    Graph g2;
    Tensor one_row = Tensor::zeros({1, 4});
    one_row.at(0, 1) = 5.0;
    Node* loss2 = g2.cross_entropy(g2.leaf(one_row), {1}, 0, 0.0);
    EXPECT_DOUBLE_EQ(loss->val.data[0], loss2->val.data[0]);
}

TEST(CrossEntropy, TargetOutOfVocabThrows) {
    Graph g;
    Node* logits = g.leaf(Tensor::zeros({1, 4}));
    EXPECT_THROW(g.cross_entropy(logits, {4}, 0, 0.0), ValidationError);
}

TEST(CrossEntropy, Gradcheck) {
    Rng rng(13);
    Tensor logits = random_tensor({4, 6}, rng);
    std::vector<int> targets{1, 3, 0, 5};  // one pad position
    for (double ls : {0.0, 0.1})
        gradcheck({logits}, [targets, ls](Graph& g, std::vector<Node*>& l) {
            return g.cross_entropy(l[0], targets, 0, ls);
        });
}

TEST(SoftCrossEntropy, MatchedDistributionGivesEntropy) {
    // teacher uniform over 5 classes, student matching it: loss = ln 5
    Tensor target = Tensor::full({1, 5}, 0.2);
    Graph g;
    Node* loss = g.soft_cross_entropy(g.leaf(Tensor::zeros({1, 5})), target);
    EXPECT_NEAR(loss->val.data[0], std::log(5.0), 1e-12);
}

TEST(SoftCrossEntropy, Gradcheck) {
    Rng rng(14);
    Tensor logits = random_tensor({3, 5}, rng);
    Tensor target = Tensor::zeros({3, 5});
    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < 5; ++j) sum += (target.at(i, j) = rng.uniform_range(0.1, 1.0));
        for (std::size_t j = 0; j < 5; ++j) target.at(i, j) /= sum;
    }
    gradcheck({logits},
              [target](Graph& g, std::vector<Node*>& l) { return g.soft_cross_entropy(l[0], target); });
}

TEST(Embedding, LookupAndErrors) {
    Graph g;
    Tensor table{{3, 2}, {1, 2, 3, 4, 5, 6}};
    Node* y = g.embedding_lookup(g.leaf(table), {2, 0});
    EXPECT_EQ(y->val.data, (std::vector<double>{5, 6, 1, 2}));
    Node* t = g.leaf(table);
    EXPECT_THROW(g.embedding_lookup(t, {3}), ValidationError);
}

TEST(Embedding, Gradcheck) {
    Rng rng(15);
    Tensor table = random_tensor({5, 3}, rng);
    Tensor t = random_tensor({4, 3}, rng);
    std::vector<int> ids{0, 2, 2, 4};
    gradcheck({table}, [ids, t](Graph& g, std::vector<Node*>& l) {
        return g.mse_loss(g.embedding_lookup(l[0], ids), t);
    });
}

TEST(StructureOps, SliceConcatGradcheck) {
    Rng rng(16);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng);
    Tensor t = random_tensor({3, 6}, rng);
    gradcheck({a, b}, [t](Graph& g, std::vector<Node*>& l) {
        Node* cat = g.col_concat({l[0], l[1]});
        Node* back = g.col_concat({g.slice_cols(cat, 0, 4), g.slice_cols(cat, 4, 6)});
        return g.mse_loss(back, t);
    });
}

TEST(StructureOps, SpanConcatOrderAndGradcheck) {
    // two sequences of lengths 2 and 1, three layers; span 2 takes layers 1, 2
    RowSpans spans;
    spans.push(2);
    spans.push(1);
    Rng rng(17);
    std::vector<Tensor> layers{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)};
    Graph g;
    std::vector<Node*> nodes{g.leaf(layers[0]), g.leaf(layers[1]), g.leaf(layers[2])};
    RowSpans mem_spans;
    Node* mem = g.span_concat(nodes, spans, 2, &mem_spans);
    ASSERT_EQ(mem_spans.count(), 2u);
    EXPECT_EQ(mem_spans.len(0), 4u);
    EXPECT_EQ(mem_spans.len(1), 2u);
    // sequence 0: layer1 rows 0..2 then layer2 rows 0..2
    EXPECT_EQ(mem->val.at(0, 0), layers[1].at(0, 0));
    EXPECT_EQ(mem->val.at(2, 0), layers[2].at(0, 0));
    // sequence 1: layer1 row 2 then layer2 row 2
    EXPECT_EQ(mem->val.at(4, 0), layers[1].at(2, 0));
    EXPECT_EQ(mem->val.at(5, 0), layers[2].at(2, 0));

    Tensor t = random_tensor({6, 2}, rng);
    gradcheck({layers[0], layers[1], layers[2]}, [spans, t](Graph& g2, std::vector<Node*>& l) {
        RowSpans ms;
        Node* m = g2.span_concat({l[0], l[1], l[2]}, spans, 2, &ms);
        return g2.mse_loss(m, t);
    });
}

TEST(Attention, SinglePositionReturnsValueRow) {
    // one query over one key: softmax weight is 1, so the output is V
    Rng rng(18);
    Tensor qkv = random_tensor({1, 12}, rng);  // q = 4
    for (int heads : {1, 2, 4}) {
        Graph g;
        Node* out = g.self_attention(g.leaf(qkv), heads, RowSpans::single(1), true);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out->val.data[c], qkv.data[8 + c]);
    }
}

TEST(Attention, DuplicateKeyValueRowsMatchSingle) {
    Rng rng(19);
    Tensor q = random_tensor({2, 4}, rng);
    Tensor kv1 = random_tensor({1, 8}, rng);
    Tensor kv2 = Tensor::zeros({2, 8});
    for (std::size_t j = 0; j < 8; ++j) kv2.at(0, j) = kv2.at(1, j) = kv1.at(0, j);
    Graph g;
    Node* a = g.cross_attention(g.leaf(q), g.leaf(kv1), 2, RowSpans::single(2), RowSpans::single(1));
    Node* b = g.cross_attention(g.leaf(q), g.leaf(kv2), 2, RowSpans::single(2), RowSpans::single(2));
    for (std::size_t i = 0; i < a->val.size(); ++i) EXPECT_NEAR(a->val.data[i], b->val.data[i], 1e-12);
}

TEST(Attention, SelfAttentionGradcheck) {
    Rng rng(20);
    RowSpans spans;
    spans.push(3);
    spans.push(2);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor wqkv = random_tensor({4, 12}, rng);
    Tensor t = random_tensor({5, 4}, rng);
    for (bool causal : {false, true})
        gradcheck({x, wqkv}, [spans, t, causal](Graph& g, std::vector<Node*>& l) {
            Node* attn = g.self_attention(g.matmul(l[0], l[1]), 2, spans, causal);
            return g.mse_loss(attn, t);
        });
}

TEST(Attention, CrossAttentionGradcheck) {
    Rng rng(21);
    RowSpans qs;
    qs.push(2);
    qs.push(3);
    RowSpans ks;
    ks.push(4);
    ks.push(2);
    Tensor q = random_tensor({5, 4}, rng);
    Tensor kv = random_tensor({6, 8}, rng);
    Tensor t = random_tensor({5, 4}, rng);
    gradcheck({q, kv}, [qs, ks, t](Graph& g, std::vector<Node*>& l) {
        return g.mse_loss(g.cross_attention(l[0], l[1], 2, qs, ks), t);
    });
}

TEST(Attention, HeadCountMustDivideWidth) {
    Graph g;
    Node* qkv = g.leaf(Tensor::zeros({2, 12}));
    EXPECT_THROW(g.self_attention(qkv, 3, RowSpans::single(2), false), DimensionError);
}

TEST(Determinism, IdenticalInputsBitwiseIdenticalOutputs) {
    auto run = [] {
        Rng rng(22);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({6, 9}, rng);
        Graph g;
        Node* h = g.softmax_rows(g.matmul(g.leaf(x), g.leaf(w)));
        Node* attn = g.self_attention(h, 3, RowSpans::single(4), true);
        Node* loss = g.mse_loss(attn, Tensor::zeros({4, 3}));
        g.backward(loss);
        return std::make_pair(attn->val.data, loss->val.data[0]);
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Tensor p{{2, 2}, {1, 2, 3, 4}};
    const Tensor orig = p;
    AdamState s = AdamState::like(p);
    for (int i = 0; i < 10; ++i) adam_step(p, Tensor::zeros({2, 2}), s, AdamConfig{0.1});
    EXPECT_EQ(p.data, orig.data);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
    Tensor p{{1, 3}, {0.0, 0.0, 0.0}};
    Tensor g{{1, 3}, {0.5, -2.0, 1e-3}};
    AdamState s = AdamState::like(p);
    adam_step(p, g, s, AdamConfig{0.1, 0.9, 0.98, 1e-9});
    EXPECT_NEAR(p.data[0], -0.1, 1e-6);
    EXPECT_NEAR(p.data[1], 0.1, 1e-6);
    EXPECT_NEAR(p.data[2], -0.1, 1e-4);
}

TEST(Adam, MinimizesQuadratic) {
    Tensor x{{1, 1}, {1.0}};
    AdamState s = AdamState::like(x);
    for (int i = 0; i < 500; ++i) {
        Tensor g{{1, 1}, {2.0 * x.data[0]}};
        adam_step(x, g, s, AdamConfig{0.1, 0.9, 0.98, 1e-9});
    }
    EXPECT_LT(std::abs(x.data[0]), 1e-3);
}

TEST(Adam, RegionUpdateLeavesOutsideUntouched) {
    Tensor p = Tensor::full({4, 4}, 1.0);
    AdamState s = AdamState::like(p);
    Tensor g = Tensor::full({2, 3}, 0.7);
    adam_step_region(p, g, s, AdamConfig{0.05}, 2, 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            if (i < 2 && j < 3) {
                EXPECT_NE(p.at(i, j), 1.0);
                EXPECT_EQ(s.t[i * 4 + j], 1u);
            } else {
                EXPECT_EQ(p.at(i, j), 1.0);
                EXPECT_EQ(s.t[i * 4 + j], 0u);
            }
        }
}
