#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "actjepa/diffcore.hpp"
#include "actjepa/util/rng.hpp"
#include "support.hpp"

using namespace actjepa;
using actjepa::testing::random_tensor;
using actjepa::testing::rparam;

namespace {

// Straight-line evaluation of softmax(Q K^T / sqrt(D)) V, independent of the
// op's Eigen path.
std::vector<std::vector<double>> reference_attention(const Tensor<double>& q, const Tensor<double>& k,
                                                     const Tensor<double>& v, bool causal) {
    const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols();
    std::vector<std::vector<double>> out(lq, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < lq; ++i) {
        std::vector<double> s(lk);
        double mx = -1e300;
        const std::size_t valid = causal ? i + 1 : lk;
        for (std::size_t j = 0; j < valid; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
            s[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < valid; ++j) z += std::exp(s[j] - mx);
        for (std::size_t j = 0; j < valid; ++j) {
            const double p = std::exp(s[j] - mx) / z;
            for (std::size_t c = 0; c < d; ++c) out[i][c] += p * v.at(j, c);
        }
    }
    return out;
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
    EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor<double>({2, 0}), DimensionError);
    EXPECT_THROW(Tensor<double>::checked({1}, {std::nan("")}), ContractError);
    EXPECT_NO_THROW(Tensor<double>::checked({2}, {1.0, 2.0}));
}

TEST(Linear, IdentityWeights) {
    Graph<double> g;
    auto x = make_const(Tensor<double>::from_rows({{1, 0}, {0, 1}}));
    auto w = make_const(Tensor<double>::from_rows({{1, 0}, {0, 1}}));
    auto b = make_const(Tensor<double>({2}, 0.0));
    auto y = linear(g, x, w, b);
    EXPECT_EQ(y->value.to_vector(), (std::vector<double>{1, 0, 0, 1}));
}

TEST(Linear, HandEvaluated) {
    Graph<double> g;
    auto y = linear(g, make_const(Tensor<double>::from_rows({{1, 2}})),
                    make_const(Tensor<double>::from_rows({{1}, {1}})), make_const(Tensor<double>({1}, {0.5})));
    EXPECT_DOUBLE_EQ(y->value.item(), 3.5);
}

TEST(Linear, ZeroWeightsGiveBiasRows) {
    Rng rng(3);
    Graph<double> g;
    auto b = Tensor<double>({3}, {0.25, -1.0, 2.0});
    auto y = linear(g, make_const(random_tensor({4, 5}, rng)), make_const(Tensor<double>({5, 3})), make_const(b));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y->value.at(r, c), b[c]);
}

TEST(Linear, ShapeMismatch) {
    Graph<double> g;
    EXPECT_THROW(linear(g, make_const(Tensor<double>({2, 3})), make_const(Tensor<double>({2, 3})),
                        make_const(Tensor<double>({3}))),
                 DimensionError);
}

TEST(Attention, SingleKeyReturnsValueRow) {
    Rng rng(11);
    Graph<double> g;
    auto v = make_const(random_tensor({1, 4}, rng));
    auto y = attention(g, make_const(random_tensor({3, 4}, rng)), make_const(random_tensor({1, 4}, rng)), v, false);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y->value.at(r, c), v->value.at(0, c), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
    Rng rng(12);
    Graph<double> g;
    Tensor<double> k({3, 4});
    const auto row = random_tensor({4}, rng);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) k.at(r, c) = row[c];
    auto v = random_tensor({3, 4}, rng);
    auto y = attention(g, make_const(random_tensor({2, 4}, rng)), make_const(k), make_const(v), false);
    for (std::size_t c = 0; c < 4; ++c) {
        const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0;
        EXPECT_NEAR(y->value.at(0, c), mean, 1e-14);
        EXPECT_NEAR(y->value.at(1, c), mean, 1e-14);
    }
}

TEST(Attention, MatchesStraightLineEvaluation) {
    for (bool causal : {false, true}) {
        Rng rng(13);
        Graph<double> g;
        auto q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
        auto y = attention(g, make_const(q), make_const(k), make_const(v), causal);
        const auto ref = reference_attention(q, k, v, causal);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y->value.at(r, c), ref[r][c], 1e-14);
    }
}

TEST(Attention, MultiHeadMatchesPerHeadReference) {
    Rng rng(21);
    Graph<double> g;
    const std::size_t groups = 2, heads = 2, lq = 3, lk = 5, d = 6, dh = 3;
    auto q = random_tensor({groups * lq, d}, rng), k = random_tensor({groups * lk, d}, rng),
         v = random_tensor({groups * lk, d}, rng);
    auto y = multi_head_attention(g, make_const(q), make_const(k), make_const(v), {groups, heads, lq, lk, false});
    for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor<double> qs({lq, dh}), ks({lk, dh}), vs({lk, dh});
            for (std::size_t r = 0; r < lq; ++r)
                for (std::size_t c = 0; c < dh; ++c) qs.at(r, c) = q.at(gi * lq + r, h * dh + c);
            for (std::size_t r = 0; r < lk; ++r)
                for (std::size_t c = 0; c < dh; ++c) {
                    ks.at(r, c) = k.at(gi * lk + r, h * dh + c);
                    vs.at(r, c) = v.at(gi * lk + r, h * dh + c);
                }
            const auto ref = reference_attention(qs, ks, vs, false);
            for (std::size_t r = 0; r < lq; ++r)
                for (std::size_t c = 0; c < dh; ++c) EXPECT_NEAR(y->value.at(gi * lq + r, h * dh + c), ref[r][c], 1e-14);
        }
    }
}

TEST(Attention, CausalRequiresSquare) {
    Graph<double> g;
    EXPECT_THROW(attention(g, make_const(Tensor<double>({2, 4})), make_const(Tensor<double>({3, 4})),
                           make_const(Tensor<double>({3, 4})), true),
                 ContractError);
}

TEST(Attention, OutputInConvexHullOfValues) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Graph<double> g;
        auto v = random_tensor({5, 3}, rng);
        auto y = attention(g, make_const(random_tensor({4, 3}, rng, -3, 3)), make_const(random_tensor({5, 3}, rng, -3, 3)),
                           make_const(v), false);
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = 1e9, hi = -1e9;
            for (std::size_t r = 0; r < 5; ++r) lo = std::min(lo, v.at(r, c)), hi = std::max(hi, v.at(r, c));
            for (std::size_t r = 0; r < 4; ++r) {
                EXPECT_GE(y->value.at(r, c), lo - 1e-12);
                EXPECT_LE(y->value.at(r, c), hi + 1e-12);
            }
        }
    }
}

TEST(Softmax, RowsSumToOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Graph<double> g;
        auto y = softmax(g, make_const(random_tensor({6, 7}, rng, -20, 20)));
        for (std::size_t r = 0; r < 6; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 7; ++c) s += y->value.at(r, c);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
    Graph<double> g;
    auto y = layer_norm(g, make_const(Tensor<double>({2, 3}, 4.0)), make_const(Tensor<double>({3}, 1.0)),
                        make_const(Tensor<double>({3}, 0.0)));
    for (double v : y->value.storage()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOne) {
    Graph<double> g;
    auto y = layer_norm(g, make_const(Tensor<double>({1, 2}, {1.0, -1.0})), make_const(Tensor<double>({2}, 1.0)),
                        make_const(Tensor<double>({2}, 0.0)));
    // variance 1, so the only change is the 1/sqrt(1 + eps) factor
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y->value[0], expect, 1e-15);
    EXPECT_NEAR(y->value[1], -expect, 1e-15);
    EXPECT_NEAR(y->value[0], 1.0, 1e-5);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
    Rng rng(5);
    Graph<double> g;
    auto y = layer_norm(g, make_const(random_tensor({3, 4}, rng)), make_const(Tensor<double>({4}, 0.0)),
                        make_const(Tensor<double>({4}, 0.75)));
    for (double v : y->value.storage()) EXPECT_EQ(v, 0.75);
}

TEST(Losses, L1) {
    Graph<double> g;
    auto p = make_const(Tensor<double>::from_rows({{1, 2}, {3, 4}}));
    EXPECT_EQ(l1_loss(g, p, p)->value.item(), 0.0);
    auto t = make_const(Tensor<double>::from_rows({{1, 2}, {3, 5}}));
    EXPECT_DOUBLE_EQ(l1_loss(g, p, t)->value.item(), 0.25);
    auto shifted = make_const(Tensor<double>::from_rows({{1 - 0.5, 2 - 0.5}, {3 - 0.5, 4 - 0.5}}));
    EXPECT_DOUBLE_EQ(l1_loss(g, p, shifted)->value.item(), 0.5);
    EXPECT_THROW(l1_loss(g, p, make_const(Tensor<double>({4}))), DimensionError);
}

TEST(Losses, L2) {
    Graph<double> g;
    auto p = make_const(Tensor<double>({1}, {2.0}));
    EXPECT_EQ(l2_loss(g, p, p)->value.item(), 0.0);
    EXPECT_DOUBLE_EQ(l2_loss(g, p, make_const(Tensor<double>({1}, {0.0})))->value.item(), 4.0);
    Rng rng(9);
    auto a = random_tensor({3, 2}, rng), b = random_tensor({3, 2}, rng);
    Tensor<double> b3 = a;
    for (std::size_t i = 0; i < a.numel(); ++i) b3[i] = a[i] + 3.0 * (b[i] - a[i]);
    const double base = l2_loss(g, make_const(a), make_const(b))->value.item();
    EXPECT_NEAR(l2_loss(g, make_const(a), make_const(b3))->value.item(), 9.0 * base, 1e-12);
}

TEST(Backward, SumGivesOnes) {
    Rng rng(1);
    Graph<double> g;
    auto x = rparam({3, 2}, rng);
    auto grads = g.backward(sum(g, x));
    const auto g_x = grads.of(x);
    for (double v : g_x.storage()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, L1AgainstZero) {
    Graph<double> g;
    auto x = make_param(Tensor<double>({2, 3}, {0.5, 1, 2, 3, 4, 5}));
    auto grads = g.backward(l1_loss(g, x, make_const(Tensor<double>({2, 3}))));
    const auto g_x = grads.of(x);
    for (double v : g_x.storage()) EXPECT_DOUBLE_EQ(v, 1.0 / 6.0);
}

TEST(Backward, L1SubgradientAtZeroIsZero) {
    Graph<double> g;
    auto x = make_param(Tensor<double>({2}, {1.0, 2.0}));
    auto grads = g.backward(l1_loss(g, x, make_const(Tensor<double>({2}, {1.0, 3.0}))));
    EXPECT_EQ(grads.of(x)[0], 0.0);
    EXPECT_EQ(grads.of(x)[1], -0.5);
}

TEST(Backward, NonScalarLossRejected) {
    Rng rng(1);
    Graph<double> g;
    auto x = rparam({2, 2}, rng);
    EXPECT_THROW(g.backward(scale(g, x, 2.0)), ContractError);
}

TEST(Backward, UnusedLeafGetsExactZero) {
    Rng rng(2);
    Graph<double> g;
    auto used = rparam({2, 2}, rng);
    auto unused = rparam({2, 2}, rng);
    auto side = scale(g, unused, 3.0);  // taped, but not on the loss path
    (void)side;
    auto grads = g.backward(sum(g, used));
    EXPECT_FALSE(grads.contains(unused));
    const auto g_unused = grads.of(unused);
    for (double v : g_unused.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RepeatedCallsAreIdempotent) {
    Rng rng(4);
    Graph<double> g;
    auto w = rparam({3, 3}, rng);
    auto x = make_const(random_tensor({2, 3}, rng));
    auto loss = l2_loss(g, gelu(g, matmul(g, x, w)), make_const(random_tensor({2, 3}, rng)));
    const auto a = g.backward(loss).of(w);
    const auto b = g.backward(loss).of(w);
    EXPECT_EQ(a, b);
}

TEST(Backward, NonRecordingGraphStopsGradient) {
    Rng rng(6);
    Graph<double> off(false);
    auto w = rparam({2, 2}, rng);
    auto y = matmul(off, make_const(random_tensor({2, 2}, rng)), w);
    EXPECT_FALSE(y->requires_grad);
    EXPECT_EQ(off.size(), 0u);
}

TEST(Adam, ZeroGradIsIdentity) {
    Rng rng(7);
    ParamList<double> params{{"w", rparam({3, 2}, rng)}};
    const auto before = params[0].var->value;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    auto st = OptimState<double>::create(params, cfg);
    for (int i = 0; i < 3; ++i) adam_step(params, std::vector<Tensor<double>>{Tensor<double>({3, 2})}, st);
    EXPECT_EQ(params[0].var->value, before);
    EXPECT_EQ(st.step, 3u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamList<double> params{{"w", make_param(Tensor<double>({3}, {1.0, -2.0, 0.5}))}};
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    auto st = OptimState<double>::create(params, cfg);
    adam_step(params, std::vector<Tensor<double>>{Tensor<double>({3}, {0.3, -4.0, 1e-2})}, st);
    // m_hat / sqrt(v_hat) = g / |g| on the first step
    EXPECT_NEAR(params[0].var->value[0], 1.0 - 1e-3, 1e-9);
    EXPECT_NEAR(params[0].var->value[1], -2.0 + 1e-3, 1e-9);
    EXPECT_NEAR(params[0].var->value[2], 0.5 - 1e-3, 1e-8);
}

TEST(Adam, DeterministicAndShapeChecked) {
    auto run = [] {
        Rng rng(8);
        ParamList<double> params{{"w", rparam({4}, rng)}};
        auto st = OptimState<double>::create(params);
        adam_step(params, std::vector<Tensor<double>>{random_tensor({4}, rng)}, st);
        return params[0].var->value;
    };
    EXPECT_EQ(run(), run());
    ParamList<double> params{{"w", make_param(Tensor<double>({4}))}};
    auto st = OptimState<double>::create(params);
    EXPECT_THROW(adam_step(params, std::vector<Tensor<double>>{Tensor<double>({3})}, st), DimensionError);
}

// Every differentiable op against central differences, 20 seeds each.
class OpGradCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradCheck, AllOps) {
    for (const auto& c : actjepa::testing::op_grad_checks(GetParam())) {
        EXPECT_LT(c.result.max_rel_error, 1e-4) << c.op << " " << c.result.worst;
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradCheck, ::testing::Range<std::uint64_t>(0, 20));
