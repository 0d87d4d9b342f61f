#pragma once

#include <optional>
#include <string>
#include <vector>

#include "actjepa/datastore/dataset.hpp"
#include "actjepa/model/config.hpp"
#include "actjepa/model/layers.hpp"

namespace actjepa {

/// Patch, proprio and task tokens followed by a bidirectional transformer.
template <class T>
struct ContextEncoder {
    Linear<T> patch, proprio;
    Var<T> task_embed;
    std::vector<SelfBlock<T>> blocks;
    LayerNorm<T> ln_f;

    static ContextEncoder build(ParamBuilder<T>& pb, const std::string& name, const ModelConfig& c) {
        ContextEncoder e;
        e.patch = Linear<T>::build(pb, name + ".patch", c.patch_dim(), c.d_model);
        e.proprio = Linear<T>::build(pb, name + ".proprio", c.proprio_dim, c.d_model);
        e.task_embed = pb.uniform(name + ".task_embed", {c.task_count, c.d_model}, c.task_count);
        for (std::size_t i = 0; i < c.encoder_layers; ++i) {
            e.blocks.push_back(SelfBlock<T>::build(pb, name + ".block" + std::to_string(i), c.d_model, c.n_heads, c.ffn_hidden));
        }
        e.ln_f = LayerNorm<T>::build(pb, name + ".ln_f", c.d_model);
        return e;
    }

    /// The transformer part, shared by context and target encoding.
    Var<T> transform(Graph<T>& g, Var<T> x, std::size_t groups, std::size_t len) const {
        for (const auto& b : blocks) x = b(g, x, groups, len);
        return ln_f(g, x);
    }
};

/// Learnable mask token replicated n times, a cross-attention block into
/// the context, then self-attention over the n query tokens only.
template <class T>
struct QueryStack {
    Var<T> mask;
    CrossBlock<T> cross;
    std::vector<SelfBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Linear<T> head;

    static QueryStack build(ParamBuilder<T>& pb, const std::string& name, const ModelConfig& c, std::size_t layers,
                            std::size_t out_dim) {
        QueryStack q;
        q.mask = pb.uniform(name + ".mask", {1, c.d_model}, c.d_model);
        q.cross = CrossBlock<T>::build(pb, name + ".cross", c.d_model, c.n_heads, c.ffn_hidden);
        for (std::size_t i = 0; i < layers; ++i) {
            q.blocks.push_back(SelfBlock<T>::build(pb, name + ".block" + std::to_string(i), c.d_model, c.n_heads, c.ffn_hidden));
        }
        q.ln_f = LayerNorm<T>::build(pb, name + ".ln_f", c.d_model);
        q.head = Linear<T>::build(pb, name + ".head", c.d_model, out_dim);
        return q;
    }
};

/// Token counts seen by predictor/decoder attention, one entry per call.
struct TokenTrace {
    std::vector<std::size_t> self_attention_tokens;
    std::vector<std::size_t> cross_query_tokens;
    std::vector<std::size_t> cross_context_tokens;
};

/// Runs a query stack over `groups` contexts of `ctx_len` tokens each.
template <class T>
Var<T> run_query_stack(Graph<T>& g, const QueryStack<T>& q, const Var<T>& time_pe, const Var<T>& s_x,
                       std::size_t groups, std::size_t ctx_len, std::size_t n, TokenTrace* trace) {
    if (s_x->value.rows() != groups * ctx_len) throw DimensionError("query stack: context rows do not match layout");
    if (time_pe->value.rows() != n) throw DimensionError("query stack: positional table does not have n rows");
    auto x = add_tiled(g, tile_rows(g, q.mask, groups * n), time_pe);
    if (trace) {
        trace->cross_query_tokens.push_back(n);
        trace->cross_context_tokens.push_back(ctx_len);
    }
    x = q.cross(g, x, s_x, groups, n, ctx_len);
    for (const auto& b : q.blocks) {
        if (trace) trace->self_attention_tokens.push_back(n);
        x = b(g, x, groups, n);
    }
    return q.head(g, q.ln_f(g, x));
}

/// Model inputs for a batch of context observations.
template <class T>
struct ContextBatch {
    std::size_t size = 0;
    Tensor<T> patches;      // [B * n_patches, patch_dim]
    Tensor<T> proprio;      // [B, proprio_dim], normalized
    Tensor<T> task_onehot;  // [B, task_count]
};

/// Chunk targets for a batch, both normalized.
template <class T>
struct TargetBatch {
    Tensor<T> actions;  // [B * n, action_dim]
    Tensor<T> proprio;  // [B * n, proprio_dim]
};

template <class T>
void check_observation(const Observation& o, const ModelConfig& c) {
    if (o.image.size() != c.image_height * c.image_width) {
        throw DimensionError("observation image has " + std::to_string(o.image.size()) + " pixels, model expects " +
                             std::to_string(c.image_height * c.image_width));
    }
    if (o.task_id < 0 || static_cast<std::size_t>(o.task_id) >= c.task_count) {
        throw DimensionError("task id " + std::to_string(o.task_id) + " outside model task count");
    }
}

/// Cuts an H×W image into non-overlapping patch rows, row-major over the grid.
template <class T>
void patchify_into(const std::vector<float>& image, const ModelConfig& c, T* out) {
    const std::size_t P = c.patch, W = c.image_width, per_row = c.patches_per_row();
    for (std::size_t k = 0; k < c.n_patches(); ++k) {
        const std::size_t pr = k / per_row, pc = k % per_row;
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t j = 0; j < P; ++j) *out++ = static_cast<T>(image[(pr * P + i) * W + pc * P + j]);
    }
}

template <class T>
ContextBatch<T> make_context_batch(const std::vector<const Observation*>& obs, const ModelConfig& c,
                                   const NormStats& norm) {
    if (obs.empty()) throw DimensionError("empty context batch");
    ContextBatch<T> b;
    b.size = obs.size();
    b.patches = Tensor<T>({b.size * c.n_patches(), c.patch_dim()});
    b.proprio = Tensor<T>({b.size, c.proprio_dim});
    b.task_onehot = Tensor<T>({b.size, c.task_count});
    for (std::size_t i = 0; i < b.size; ++i) {
        const auto& o = *obs[i];
        check_observation<T>(o, c);
        patchify_into(o.image, c, b.patches.data().data() + i * c.n_patches() * c.patch_dim());
        const auto z = norm.normalize_proprio(o.proprio);
        for (std::size_t j = 0; j < c.proprio_dim; ++j) b.proprio.at(i, j) = static_cast<T>(z[j]);
        b.task_onehot.at(i, static_cast<std::size_t>(o.task_id)) = T(1);
    }
    return b;
}

template <class T>
TargetBatch<T> make_target_batch(const std::vector<ChunkSample>& chunks, const ModelConfig& c) {
    TargetBatch<T> t;
    t.actions = Tensor<T>({chunks.size() * c.chunk, c.action_dim});
    t.proprio = Tensor<T>({chunks.size() * c.chunk, c.proprio_dim});
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& ch = chunks[i];
        if (ch.action_targets.size() != c.chunk || ch.obs_targets.size() != c.chunk) {
            throw DimensionError("chunk length differs from model chunk size");
        }
        for (std::size_t k = 0; k < c.chunk; ++k) {
            for (std::size_t j = 0; j < c.action_dim; ++j) t.actions.at(i * c.chunk + k, j) = static_cast<T>(ch.action_targets[k][j]);
            for (std::size_t j = 0; j < c.proprio_dim; ++j) t.proprio.at(i * c.chunk + k, j) = static_cast<T>(ch.obs_targets[k][j]);
        }
    }
    return t;
}

template <class T>
ContextBatch<T> make_context_batch(const std::vector<ChunkSample>& chunks, const ModelConfig& c, const NormStats& norm) {
    std::vector<const Observation*> obs;
    for (const auto& ch : chunks) obs.push_back(&ch.context);
    return make_context_batch<T>(obs, c, norm);
}

/// ACT-JEPA (kind actjepa) or the ACT baseline (kind act, which carries
/// neither target encoder nor predictor). Non-copyable because parameters
/// are shared handles; use clone() for an independent copy.
template <class T>
class Model {
public:
    ModelKind kind = ModelKind::actjepa;
    ModelConfig config;
    ParamStore<T> store;
    ContextEncoder<T> encoder;
    std::optional<ContextEncoder<T>> target;
    std::optional<QueryStack<T>> predictor;
    QueryStack<T> decoder;
    Var<T> patch_pe;  // [n_patches, D]
    Var<T> time_pe;   // [n, D]

    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    bool has_jepa() const { return predictor.has_value(); }

    /// Everything the optimizer may touch: all parameters except θ̄.
    ParamList<T> trainable() const { return store.trainable(); }
    ParamList<T> encoder_params() const { return store.with_prefix("encoder."); }
    ParamList<T> target_params() const { return store.with_prefix("target."); }
    ParamList<T> predictor_params() const { return store.with_prefix("predictor."); }
    ParamList<T> decoder_params() const { return store.with_prefix("decoder."); }

    Model clone() const;
};

template <class T>
Model<T> build_model(const ModelConfig& c, ModelKind kind, std::uint64_t seed) {
    c.validate();
    if (kind == ModelKind::rbc) throw ConfigError("build_model: rbc has its own parameter set");
    Model<T> m;
    m.kind = kind;
    m.config = c;
    {
        ParamBuilder<T> pb(m.store, Rng::derive(seed, 1));
        m.encoder = ContextEncoder<T>::build(pb, "encoder", c);
    }
    if (kind == ModelKind::actjepa) {
        ParamBuilder<T> tb(m.store, Rng::derive(seed, 4));
        m.target = ContextEncoder<T>::build(tb, "target", c);
        for (const auto& p : m.store.with_prefix("target.")) {
            p.var->value = m.store.get("encoder." + p.name.substr(7))->value;  // exact copy of θ
            p.var->requires_grad = false;
        }
        ParamBuilder<T> pp(m.store, Rng::derive(seed, 2));
        m.predictor = QueryStack<T>::build(pp, "predictor", c, c.predictor_layers, c.d_model);
    }
    {
        ParamBuilder<T> pd(m.store, Rng::derive(seed, 3));
        m.decoder = QueryStack<T>::build(pd, "decoder", c, c.decoder_layers, c.action_dim);
    }
    m.patch_pe = make_const(sinusoid_2d<T>(c.image_height / c.patch, c.patches_per_row(), c.d_model));
    m.time_pe = make_const(sinusoid_1d<T>(c.chunk, c.d_model));
    return m;
}

template <class T>
Model<T> init_model(const ModelConfig& c, std::uint64_t seed, ModelKind kind = ModelKind::actjepa) {
    return build_model<T>(c, kind, seed);
}

template <class T>
Model<T> Model<T>::clone() const {
    Model<T> m = build_model<T>(config, kind, 0);
    for (const auto& p : store.all()) m.store.get(p.name)->value = p.var->value;
    return m;
}

/// Overwrites decoder parameters and mask with a fresh draw that matches
/// what init_model would produce for `seed`.
template <class T>
void reset_decoder(Model<T>& m, std::uint64_t seed) {
    ParamStore<T> tmp;
    ParamBuilder<T> pb(tmp, Rng::derive(seed, 3));
    QueryStack<T>::build(pb, "decoder", m.config, m.config.decoder_layers, m.config.action_dim);
    for (const auto& p : tmp.all()) m.store.get(p.name)->value = p.var->value;
}

/// Patch projection plus 2-D positional encoding: [B * n_patches, D].
template <class T>
Var<T> patchify(Graph<T>& g, const Model<T>& m, const ContextBatch<T>& b) {
    return add_tiled(g, m.encoder.patch(g, make_const(b.patches)), m.patch_pe);
}

/// s_x for each sample: [B * n_ctx, D], per-sample order patches, proprio, task.
template <class T>
Var<T> encode_context(Graph<T>& g, const Model<T>& m, const ContextBatch<T>& b) {
    const auto& c = m.config;
    const std::size_t B = b.size, P = c.n_patches();
    auto patches = patchify(g, m, b);
    auto prop = m.encoder.proprio(g, make_const(b.proprio));
    auto task = matmul(g, make_const(b.task_onehot), m.encoder.task_embed);
    auto all = concat_rows(g, {patches, prop, task});
    std::vector<std::size_t> order;
    order.reserve(B * (P + 2));
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < P; ++k) order.push_back(i * P + k);
        order.push_back(B * P + i);
        order.push_back(B * P + B + i);
    }
    return m.encoder.transform(g, gather_rows(g, all, std::move(order)), B, P + 2);
}

/// s_y = θ̄-transformer over projected proprio targets. Always evaluated on
/// a non-recording graph, so no gradient can reach θ̄.
template <class T>
Var<T> encode_targets(const Model<T>& m, const Tensor<T>& proprio_seq, std::size_t groups) {
    if (!m.target) throw ContractError("encode_targets: model has no target encoder");
    const auto& c = m.config;
    if (proprio_seq.rows() != groups * c.chunk || proprio_seq.cols() != c.proprio_dim) {
        throw DimensionError("encode_targets: expected " + std::to_string(groups * c.chunk) + "x" +
                             std::to_string(c.proprio_dim) + " rows, got " + to_string(proprio_seq.shape()));
    }
    Graph<T> g(false);
    auto tok = add_tiled(g, m.target->proprio(g, make_const(proprio_seq)), m.time_pe);
    return m.target->transform(g, tok, groups, c.chunk);
}

template <class T>
Var<T> predict_abstract(Graph<T>& g, const Model<T>& m, const Var<T>& s_x, std::size_t groups, TokenTrace* trace = nullptr) {
    if (!m.predictor) throw ContractError("predict_abstract: model has no predictor");
    return run_query_stack(g, *m.predictor, m.time_pe, s_x, groups, s_x->value.rows() / groups, m.config.chunk, trace);
}

/// Normalized action chunk: [B * n, action_dim].
template <class T>
Var<T> decode_actions(Graph<T>& g, const Model<T>& m, const Var<T>& s_x, std::size_t groups, TokenTrace* trace = nullptr) {
    return run_query_stack(g, m.decoder, m.time_pe, s_x, groups, s_x->value.rows() / groups, m.config.chunk, trace);
}

template <class T>
struct LossTerms {
    Var<T> actions;
    Var<T> observations;  // null when the model has no JEPA branch
    Var<T> total;
};

/// L_actions = mean|â−a|, L_observations = mean|ŝ_y−s_y|, L = their sum.
template <class T>
LossTerms<T> compute_losses(Graph<T>& g, const Var<T>& a_hat, const Var<T>& a, const Var<T>& s_hat, const Var<T>& s_y) {
    LossTerms<T> out;
    out.actions = l1_loss(g, a_hat, a);
    out.observations = l1_loss(g, s_hat, s_y);
    out.total = add(g, out.actions, out.observations);
    return out;
}

/// θ̄ ← m·θ̄ + (1−m)·θ, elementwise.
template <class T>
void ema_update(const ParamList<T>& target, const ParamList<T>& online, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("ema_update: momentum outside [0,1]");
    if (target.size() != online.size()) throw DimensionError("ema_update: parameter lists differ in length");
    // Evaluated in double and rounded once, so float parameters land within
    // one ulp of the exact closed form (m itself is not representable).
    const double om = 1.0 - momentum;
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto& tv = target[i].var->value;
        const auto& ov = online[i].var->value;
        if (tv.shape() != ov.shape()) throw DimensionError("ema_update: shape mismatch at " + target[i].name);
        for (std::size_t j = 0; j < tv.numel(); ++j) {
            tv[j] = static_cast<T>(momentum * static_cast<double>(tv[j]) + om * static_cast<double>(ov[j]));
        }
    }
}

template <class T>
void ema_update(Model<T>& m, double momentum) {
    if (!m.target) throw ContractError("ema_update: model has no target encoder");
    ema_update(m.target_params(), m.encoder_params(), momentum);
}

/// One full forward pass of the training objective.
template <class T>
struct ForwardResult {
    Var<T> s_x, s_hat, s_y, a_hat;
    LossTerms<T> loss;
};

enum class Objective { joint, observations_only, actions_only };

template <class T>
ForwardResult<T> forward_losses(Graph<T>& g, const Model<T>& m, const ContextBatch<T>& ctx, const TargetBatch<T>& tgt,
                                Objective obj = Objective::joint, bool l2_actions = false) {
    ForwardResult<T> r;
    const std::size_t B = ctx.size;
    r.s_x = encode_context(g, m, ctx);
    const bool want_obs = m.has_jepa() && obj != Objective::actions_only;
    const bool want_act = obj != Objective::observations_only;
    if (want_obs) {
        r.s_y = encode_targets(m, tgt.proprio, B);
        r.s_hat = predict_abstract(g, m, r.s_x, B);
        r.loss.observations = l1_loss(g, r.s_hat, r.s_y);
    }
    if (want_act) {
        r.a_hat = decode_actions(g, m, r.s_x, B);
        auto a = make_const(tgt.actions);
        r.loss.actions = l2_actions ? l2_loss(g, r.a_hat, a) : l1_loss(g, r.a_hat, a);
    }
    if (r.loss.actions && r.loss.observations) {
        r.loss.total = add(g, r.loss.actions, r.loss.observations);
    } else {
        r.loss.total = r.loss.actions ? r.loss.actions : r.loss.observations;
    }
    return r;
}

}  // namespace actjepa
