#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "actjepa/diffcore/graph.hpp"

// Differentiable ops. Every op takes the graph it records into as its first
// argument; values are row-major matrices (rows x trailing dim).

namespace actjepa {

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using SMapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CSMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <class T>
MapR<T> mat(Tensor<T>& t) {
    return MapR<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
CMapR<T> mat(const Tensor<T>& t) {
    return CMapR<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace detail

/// x[M,K] @ w[K,N]
template <class T>
Var<T> matmul(Graph<T>& g, const Var<T>& x, const Var<T>& w) {
    using namespace detail;
    const auto& xv = x->value;
    const auto& wv = w->value;
    require(wv.shape().size() == 2 && xv.cols() == wv.shape()[0],
            "matmul: " + to_string(xv.shape()) + " x " + to_string(wv.shape()));
    Tensor<T> y({xv.rows(), wv.cols()});
    mat(y).noalias() = mat(xv) * mat(wv);
    return g.record(std::move(y), {x, w}, [](Node<T>& n) {
        const auto& dy = n.grad;
        if (n.inputs[0]->requires_grad) {
            mat(n.input_grad(0)).noalias() += mat(dy) * mat(n.inputs[1]->value).transpose();
        }
        if (n.inputs[1]->requires_grad) {
            mat(n.input_grad(1)).noalias() += mat(n.inputs[0]->value).transpose() * mat(dy);
        }
    });
}

/// y = x W + b, with b broadcast over rows.
template <class T>
Var<T> linear(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    using namespace detail;
    const auto& xv = x->value;
    const auto& wv = w->value;
    const auto& bv = b->value;
    require(wv.shape().size() == 2 && xv.cols() == wv.shape()[0] && bv.numel() == wv.cols(),
            "linear: x" + to_string(xv.shape()) + " W" + to_string(wv.shape()) + " b" + to_string(bv.shape()));
    Tensor<T> y({xv.rows(), wv.cols()});
    auto ym = mat(y);
    ym.noalias() = mat(xv) * mat(wv);
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data().data(), static_cast<Eigen::Index>(bv.numel()));
    return g.record(std::move(y), {x, w, b}, [](Node<T>& n) {
        const auto& dy = n.grad;
        if (n.inputs[0]->requires_grad) {
            mat(n.input_grad(0)).noalias() += mat(dy) * mat(n.inputs[1]->value).transpose();
        }
        if (n.inputs[1]->requires_grad) {
            mat(n.input_grad(1)).noalias() += mat(n.inputs[0]->value).transpose() * mat(dy);
        }
        if (n.inputs[2]->requires_grad) {
            auto& gb = n.input_grad(2);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data().data(), static_cast<Eigen::Index>(gb.numel())) += mat(dy).colwise().sum();
        }
    });
}

template <class T>
Var<T> add(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.shape() == b->value.shape(),
                    "add: " + to_string(a->value.shape()) + " vs " + to_string(b->value.shape()));
    Tensor<T> y = a->value;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
    return g.record(std::move(y), {a, b}, [](Node<T>& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!n.inputs[k]->requires_grad) continue;
            auto& gi = n.input_grad(k);
            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += n.grad[i];
        }
    });
}

template <class T>
Var<T> sub(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->value.shape() == b->value.shape(),
                    "sub: " + to_string(a->value.shape()) + " vs " + to_string(b->value.shape()));
    Tensor<T> y = a->value;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
    return g.record(std::move(y), {a, b}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) {
            auto& gi = n.input_grad(0);
            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += n.grad[i];
        }
        if (n.inputs[1]->requires_grad) {
            auto& gi = n.input_grad(1);
            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] -= n.grad[i];
        }
    });
}

template <class T>
Var<T> scale(Graph<T>& g, const Var<T>& a, T s) {
    Tensor<T> y = a->value;
    for (auto& v : y.storage()) v *= s;
    return g.record(std::move(y), {a}, [s](Node<T>& n) {
        auto& gi = n.input_grad(0);
        for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += s * n.grad[i];
    });
}

/// x[R,C] + tile(p[L,C]) where R is a multiple of L. Broadcasts biases,
/// positional tables and shared tokens over a batch.
template <class T>
Var<T> add_tiled(Graph<T>& g, const Var<T>& x, const Var<T>& p) {
    const auto& xv = x->value;
    const auto& pv = p->value;
    detail::require(xv.cols() == pv.cols() && pv.numel() > 0 && xv.numel() % pv.numel() == 0,
                    "add_tiled: " + to_string(xv.shape()) + " + " + to_string(pv.shape()));
    Tensor<T> y = xv;
    const std::size_t period = pv.numel();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += pv[i % period];
    return g.record(std::move(y), {x, p}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) {
            auto& gx = n.input_grad(0);
            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += n.grad[i];
        }
        if (n.inputs[1]->requires_grad) {
            auto& gp = n.input_grad(1);
            const std::size_t per = gp.numel();
            for (std::size_t i = 0; i < n.grad.numel(); ++i) gp[i % per] += n.grad[i];
        }
    });
}

/// Repeats p[L,C] `reps` times along rows.
template <class T>
Var<T> tile_rows(Graph<T>& g, const Var<T>& p, std::size_t reps) {
    const auto& pv = p->value;
    detail::require(reps >= 1, "tile_rows: reps must be >= 1");
    Tensor<T> y({pv.rows() * reps, pv.cols()});
    for (std::size_t r = 0; r < reps; ++r) {
        std::copy(pv.storage().begin(), pv.storage().end(), y.storage().begin() + static_cast<std::ptrdiff_t>(r * pv.numel()));
    }
    return g.record(std::move(y), {p}, [](Node<T>& n) {
        auto& gp = n.input_grad(0);
        const std::size_t per = gp.numel();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) gp[i % per] += n.grad[i];
    });
}

/// Stacks inputs along rows; all inputs share the trailing dim.
template <class T>
Var<T> concat_rows(Graph<T>& g, const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts.front()->value.cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        detail::require(p->value.cols() == cols, "concat_rows: trailing dims differ");
        rows += p->value.rows();
    }
    Tensor<T> y({rows, cols});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.storage().begin(), p->value.storage().end(), y.storage().begin() + static_cast<std::ptrdiff_t>(off));
        off += p->value.numel();
    }
    return g.record(std::move(y), parts, [](Node<T>& n) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::size_t cnt = n.inputs[k]->value.numel();
            if (n.inputs[k]->requires_grad) {
                auto& gi = n.input_grad(k);
                for (std::size_t i = 0; i < cnt; ++i) gi[i] += n.grad[off + i];
            }
            off += cnt;
        }
    });
}

/// y[i] = x[index[i]] row-wise. Indices may repeat; gradients scatter-add.
template <class T>
Var<T> gather_rows(Graph<T>& g, const Var<T>& x, std::vector<std::size_t> index) {
    const auto& xv = x->value;
    const std::size_t cols = xv.cols();
    for (const auto r : index) detail::require(r < xv.rows(), "gather_rows: index out of range");
    detail::require(!index.empty(), "gather_rows: empty index");
    Tensor<T> y({index.size(), cols});
    for (std::size_t i = 0; i < index.size(); ++i) {
        std::copy_n(xv.storage().begin() + static_cast<std::ptrdiff_t>(index[i] * cols), cols,
                    y.storage().begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    return g.record(std::move(y), {x}, [index = std::move(index), cols](Node<T>& n) {
        auto& gx = n.input_grad(0);
        for (std::size_t i = 0; i < index.size(); ++i) {
            for (std::size_t c = 0; c < cols; ++c) gx[index[i] * cols + c] += n.grad[i * cols + c];
        }
    });
}

/// Tanh-approximated GELU.
template <class T>
Var<T> gelu(Graph<T>& g, const Var<T>& x) {
    constexpr T k0 = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = static_cast<T>(0.044715);
    Tensor<T> y = x->value;
    for (auto& v : y.storage()) {
        const T u = k0 * (v + k1 * v * v * v);
        v = T(0.5) * v * (T(1) + std::tanh(u));
    }
    return g.record(std::move(y), {x}, [](Node<T>& n) {
        const auto& xv = n.inputs[0]->value;
        auto& gx = n.input_grad(0);
        for (std::size_t i = 0; i < xv.numel(); ++i) {
            const T v = xv[i];
            const T u = k0 * (v + k1 * v * v * v);
            const T th = std::tanh(u);
            const T du = k0 * (T(1) + T(3) * k1 * v * v);
            const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
            gx[i] += d * n.grad[i];
        }
    });
}

/// Numerically stable softmax of one row in place; masked tail entries
/// (index >= valid) are set to zero.
template <class T>
void softmax_row_inplace(T* row, std::size_t len, std::size_t valid) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < valid; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < valid; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < valid; ++j) row[j] *= inv;
    for (std::size_t j = valid; j < len; ++j) row[j] = 0;
}

/// Row-wise softmax over the trailing dim.
template <class T>
Var<T> softmax(Graph<T>& g, const Var<T>& x) {
    Tensor<T> y = x->value;
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) softmax_row_inplace(&y.storage()[r * c], c, c);
    return g.record(y, {x}, [y, c](Node<T>& n) {
        auto& gx = n.input_grad(0);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += n.grad[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[r * c + j] * (n.grad[r * c + j] - dot);
        }
    });
}

/// Layer normalization over the trailing dim with affine gamma/beta.
template <class T>
Var<T> layer_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& xv = x->value;
    const std::size_t d = xv.cols();
    detail::require(d >= 1 && gamma->value.numel() == d && beta->value.numel() == d,
                    "layer_norm: x" + to_string(xv.shape()) + " gamma" + to_string(gamma->value.shape()));
    const std::size_t rows = xv.rows();
    Tensor<T> y(xv.shape());
    Tensor<T> xhat(xv.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = &xv.storage()[r * d];
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = gamma->value[j] * h + beta->value[j];
        }
    }
    return g.record(std::move(y), {x, gamma, beta},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](Node<T>& n) {
        const auto& gam = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            auto& gx = n.input_grad(0);
            std::vector<T> dxh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                T m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    dxh[j] = n.grad[r * d + j] * gam[j];
                    m1 += dxh[j];
                    m2 += dxh[j] * xhat[r * d + j];
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += inv_std[r] * (dxh[j] - m1 - xhat[r * d + j] * m2);
                }
            }
        }
        if (n.inputs[1]->requires_grad) {
            auto& gg = n.input_grad(1);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gg[j] += n.grad[r * d + j] * xhat[r * d + j];
        }
        if (n.inputs[2]->requires_grad) {
            auto& gb = n.input_grad(2);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gb[j] += n.grad[r * d + j];
        }
    });
}

/// Shape of a batched multi-head attention call: `groups` independent
/// sequences stacked along rows, each with `q_len` queries and `kv_len` keys.
struct AttentionLayout {
    std::size_t groups = 1;
    std::size_t heads = 1;
    std::size_t q_len = 0;
    std::size_t kv_len = 0;
    bool causal = false;
};

/// softmax(Q K^T / sqrt(d_head)) V per group and head. Q is
/// [groups*q_len, D], K and V are [groups*kv_len, D], D = heads*d_head.
template <class T>
Var<T> multi_head_attention(Graph<T>& g, const Var<T>& q, const Var<T>& k, const Var<T>& v, AttentionLayout L) {
    using namespace detail;
    const auto& qv = q->value;
    const auto& kv = k->value;
    const auto& vv = v->value;
    const std::size_t D = qv.cols();
    require(kv.cols() == D && vv.cols() == D, "attention: model dims differ across Q, K, V");
    require(L.heads >= 1 && D % L.heads == 0, "attention: dim " + std::to_string(D) + " not divisible by heads");
    require(qv.rows() == L.groups * L.q_len && kv.rows() == L.groups * L.kv_len && vv.rows() == kv.rows(),
            "attention: row counts do not match layout");
    if (L.causal && L.q_len != L.kv_len) throw ContractError("attention: causal mask requires q_len == kv_len");

    const std::size_t dh = D / L.heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const auto Lq = static_cast<Eigen::Index>(L.q_len);
    const auto Lk = static_cast<Eigen::Index>(L.kv_len);
    const auto Dh = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(D));

    Tensor<T> out(qv.shape());
    auto probs = std::make_shared<Storage<T>>(L.groups * L.heads * L.q_len * L.kv_len);
    for (std::size_t gi = 0; gi < L.groups; ++gi) {
        for (std::size_t h = 0; h < L.heads; ++h) {
            CSMapR<T> Q(qv.data().data() + gi * L.q_len * D + h * dh, Lq, Dh, stride);
            CSMapR<T> K(kv.data().data() + gi * L.kv_len * D + h * dh, Lk, Dh, stride);
            CSMapR<T> V(vv.data().data() + gi * L.kv_len * D + h * dh, Lk, Dh, stride);
            SMapR<T> O(out.data().data() + gi * L.q_len * D + h * dh, Lq, Dh, stride);
            T* pp = probs->data() + (gi * L.heads + h) * L.q_len * L.kv_len;
            MapR<T> P(pp, Lq, Lk);
            P.noalias() = (Q * K.transpose()) * sc;
            for (std::size_t r = 0; r < L.q_len; ++r) {
                softmax_row_inplace(pp + r * L.kv_len, L.kv_len, L.causal ? r + 1 : L.kv_len);
            }
            O.noalias() = P * V;
        }
    }
    return g.record(std::move(out), {q, k, v}, [probs, L, D, dh, sc](Node<T>& n) {
        const auto Lq = static_cast<Eigen::Index>(L.q_len);
        const auto Lk = static_cast<Eigen::Index>(L.kv_len);
        const auto Dh = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(D));
        const bool need_q = n.inputs[0]->requires_grad;
        const bool need_k = n.inputs[1]->requires_grad;
        const bool need_v = n.inputs[2]->requires_grad;
        T* gq = need_q ? n.input_grad(0).data().data() : nullptr;
        T* gk = need_k ? n.input_grad(1).data().data() : nullptr;
        T* gv = need_v ? n.input_grad(2).data().data() : nullptr;
        const T* qd = n.inputs[0]->value.data().data();
        const T* kd = n.inputs[1]->value.data().data();
        const T* vd = n.inputs[2]->value.data().data();
        MatR<T> dP(Lq, Lk);
        for (std::size_t gi = 0; gi < L.groups; ++gi) {
            for (std::size_t h = 0; h < L.heads; ++h) {
                const std::size_t qo = gi * L.q_len * D + h * dh;
                const std::size_t ko = gi * L.kv_len * D + h * dh;
                CMapR<T> P(probs->data() + (gi * L.heads + h) * L.q_len * L.kv_len, Lq, Lk);
                CSMapR<T> dO(n.grad.data().data() + qo, Lq, Dh, stride);
                if (need_v) SMapR<T>(gv + ko, Lk, Dh, stride).noalias() += P.transpose() * dO;
                if (!need_q && !need_k) continue;
                dP.noalias() = dO * CSMapR<T>(vd + ko, Lk, Dh, stride).transpose();
                for (Eigen::Index r = 0; r < Lq; ++r) {
                    const T dot = dP.row(r).dot(P.row(r));
                    dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
                }
                if (need_q) SMapR<T>(gq + qo, Lq, Dh, stride).noalias() += (dP * CSMapR<T>(kd + ko, Lk, Dh, stride)) * sc;
                if (need_k) SMapR<T>(gk + ko, Lk, Dh, stride).noalias() += (dP.transpose() * CSMapR<T>(qd + qo, Lq, Dh, stride)) * sc;
            }
        }
    });
}

/// Single-head attention, softmax(Q K^T / sqrt(D)) V.
template <class T>
Var<T> attention(Graph<T>& g, const Var<T>& q, const Var<T>& k, const Var<T>& v, bool causal_mask) {
    if (causal_mask && q->value.rows() != k->value.rows()) {
        throw ContractError("attention: causal mask requires equal query and key counts");
    }
    return multi_head_attention(g, q, k, v, AttentionLayout{1, 1, q->value.rows(), k->value.rows(), causal_mask});
}

template <class T>
Var<T> sum(Graph<T>& g, const Var<T>& x) {
    T s = 0;
    for (const T v : x->value.storage()) s += v;
    return g.record(Tensor<T>::scalar(s), {x}, [](Node<T>& n) {
        auto& gx = n.input_grad(0);
        const T d = n.grad[0];
        for (auto& v : gx.storage()) v += d;
    });
}

/// Mean absolute error over all elements. The subgradient at zero is zero.
template <class T>
Var<T> l1_loss(Graph<T>& g, const Var<T>& pred, const Var<T>& target) {
    detail::require(pred->value.shape() == target->value.shape(),
                    "l1_loss: " + to_string(pred->value.shape()) + " vs " + to_string(target->value.shape()));
    const std::size_t m = pred->value.numel();
    T s = 0;
    for (std::size_t i = 0; i < m; ++i) s += std::abs(pred->value[i] - target->value[i]);
    return g.record(Tensor<T>::scalar(s / static_cast<T>(m)), {pred, target}, [m](Node<T>& n) {
        const T k = n.grad[0] / static_cast<T>(m);
        const auto& p = n.inputs[0]->value;
        const auto& t = n.inputs[1]->value;
        auto sgn = [](T d) { return d > 0 ? T(1) : (d < 0 ? T(-1) : T(0)); };
        if (n.inputs[0]->requires_grad) {
            auto& gp = n.input_grad(0);
            for (std::size_t i = 0; i < m; ++i) gp[i] += k * sgn(p[i] - t[i]);
        }
        if (n.inputs[1]->requires_grad) {
            auto& gt = n.input_grad(1);
            for (std::size_t i = 0; i < m; ++i) gt[i] -= k * sgn(p[i] - t[i]);
        }
    });
}

/// Mean squared error over all elements.
template <class T>
Var<T> l2_loss(Graph<T>& g, const Var<T>& pred, const Var<T>& target) {
    detail::require(pred->value.shape() == target->value.shape(),
                    "l2_loss: " + to_string(pred->value.shape()) + " vs " + to_string(target->value.shape()));
    const std::size_t m = pred->value.numel();
    T s = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const T d = pred->value[i] - target->value[i];
        s += d * d;
    }
    return g.record(Tensor<T>::scalar(s / static_cast<T>(m)), {pred, target}, [m](Node<T>& n) {
        const T k = T(2) * n.grad[0] / static_cast<T>(m);
        const auto& p = n.inputs[0]->value;
        const auto& t = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            auto& gp = n.input_grad(0);
            for (std::size_t i = 0; i < m; ++i) gp[i] += k * (p[i] - t[i]);
        }
        if (n.inputs[1]->requires_grad) {
            auto& gt = n.input_grad(1);
            for (std::size_t i = 0; i < m; ++i) gt[i] -= k * (p[i] - t[i]);
        }
    });
}

}  // namespace actjepa
