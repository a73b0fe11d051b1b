#pragma once

#include <string>
#include <vector>

#include "fedci/adam.hpp"
#include "fedci/autograd.hpp"
#include "fedci/param_store.hpp"

namespace fedci {

inline constexpr double kLayerNormEps = 1e-5;

namespace names {
inline constexpr const char* node_emb = "node_emb";
inline constexpr const char* personal_bias = "personal_bias";
inline constexpr const char* time_day_emb = "time_day_emb";
inline constexpr const char* time_week_emb = "time_week_emb";
}  // namespace names

struct ModelConfig {
    int64_t t_in = 12;
    int64_t t_out = 12;
    int64_t hidden = 64;
    int64_t d_td = 32;
    int64_t d_tw = 32;
    int64_t d_n = 32;
    int64_t k_layers = 3;
    double dropout = 0.1;
    int64_t steps_per_day = 288;   // 5-minute sampling
    int64_t days_per_week = 7;
    bool use_time_emb = true;
    bool use_node_emb = true;
    bool use_bias = true;

    bool any_embedding() const { return use_time_emb || use_node_emb; }

    void validate() const {
        if (t_in < 1 || t_out < 1) throw ConfigError("t_in and t_out must be >= 1");
        if (hidden < 1) throw ConfigError("hidden width must be >= 1");
        if (k_layers < 1) throw ConfigError("k_layers must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
        if (steps_per_day < 1 || 86400 % steps_per_day != 0)
            throw ConfigError("steps_per_day must divide the day evenly");
        if (any_embedding() && use_time_emb && (d_td < 1 || d_tw < 1))
            throw ConfigError("time embedding widths must be >= 1");
        if (use_node_emb && d_n < 1) throw ConfigError("node embedding width must be >= 1");
    }
};

// One training batch. Values are already normalized; tod/dow index the time
// codebooks and node_slots index the client-local rows of `node_emb`.
template <class R>
struct WindowBatch {
    Tensor<R> x;         // B x T_in x N x 1
    ITensor tod;         // B x T_in
    ITensor dow;         // B x T_in
    ITensor node_slots;  // N
    Tensor<R> y;         // B x T_out x N
};

// ---- calendar arithmetic ----

struct TimeIndexPair {
    std::vector<int64_t> tod;
    std::vector<int64_t> dow;
};

inline int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

// tod = slot index within the UTC day; dow = UTC weekday, Monday = 0.
inline TimeIndexPair time_indices(int64_t start_epoch_s, int64_t interval_s,
                                  const std::vector<int64_t>& offsets) {
    if (interval_s <= 0 || 86400 % interval_s != 0)
        throw ConfigError("interval_s must divide 86400, got " + std::to_string(interval_s));
    TimeIndexPair out;
    out.tod.reserve(offsets.size());
    out.dow.reserve(offsets.size());
    for (int64_t off : offsets) {
        const int64_t t = start_epoch_s + off * interval_s;
        out.tod.push_back(floor_mod(t, 86400) / interval_s);
        // epoch day 0 (1970-01-01) was a Thursday -> weekday index 3
        out.dow.push_back(floor_mod(floor_div(t, 86400) + 3, 7));
    }
    return out;
}

// ---- parameter construction ----

namespace detail {

template <class R>
Tensor<R> glorot_uniform(Shape s, int64_t fan_in, int64_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<R> t(s);
    for (auto& v : t.data) v = static_cast<R>(rng.uniform(-limit, limit));
    return t;
}

template <class R>
void add_mlp_stack(ParamStore<R>& p, const std::string& stack, int64_t in_width,
                   int64_t out_width, int64_t k, Rng& rng) {
    int64_t w = in_width;
    for (int64_t i = 0; i < k; ++i) {
        const std::string base = stack + "." + std::to_string(i) + ".";
        p.add(base + "w", glorot_uniform<R>(Shape{w, out_width}, w, out_width, rng));
        p.add(base + "b", Tensor<R>::zeros(Shape{out_width}));
        p.add(base + "gamma", Tensor<R>::full(Shape{out_width}, R(1)));
        p.add(base + "beta", Tensor<R>::zeros(Shape{out_width}));
        w = out_width;
    }
}

// The temporal stack mixes along the time extent; normalizing over that
// extent would erase each window's level, so its layers are plain linear
// maps with activations in between.
template <class R>
void add_linear_stack(ParamStore<R>& p, const std::string& stack, int64_t in_width,
                      int64_t out_width, int64_t k, Rng& rng) {
    int64_t w = in_width;
    for (int64_t i = 0; i < k; ++i) {
        const std::string base = stack + "." + std::to_string(i) + ".";
        p.add(base + "w", glorot_uniform<R>(Shape{w, out_width}, w, out_width, rng));
        p.add(base + "b", Tensor<R>::zeros(Shape{out_width}));
        w = out_width;
    }
}

}  // namespace detail

// Builds the full parameter set for one model instance. `node_count` is the
// number of rows in this instance's node codebook (client-local or global).
// Construction order is the canonical wire order.
template <class R>
ParamStore<R> init_params(const ModelConfig& cfg, int64_t node_count, Rng& rng) {
    cfg.validate();
    if (cfg.use_node_emb && node_count < 1) throw ConfigError("node_count must be >= 1");
    ParamStore<R> p;
    const int64_t h = cfg.hidden;
    const int64_t k = cfg.k_layers;

    detail::add_mlp_stack(p, "data_enc", 1, h, k, rng);
    if (cfg.use_time_emb) detail::add_mlp_stack(p, "time_mlp", cfg.d_td + cfg.d_tw, h, k, rng);
    if (cfg.use_node_emb) detail::add_mlp_stack(p, "node_mlp", cfg.d_n, h, k, rng);
    if (cfg.any_embedding()) {
        const int64_t fuse_in = (cfg.use_time_emb && cfg.use_node_emb) ? 2 * h : h;
        detail::add_mlp_stack(p, "fuse_mlp", fuse_in, h, k, rng);
    }
    detail::add_mlp_stack(p, "cat_mlp", cfg.any_embedding() ? 2 * h : h, h, k, rng);
    detail::add_linear_stack(p, "temporal", cfg.t_in, cfg.t_out, k, rng);
    p.add("head.w", detail::glorot_uniform<R>(Shape{h, 1}, h, 1, rng));
    p.add("head.b", Tensor<R>::zeros(Shape{1}));

    if (cfg.use_time_emb) {
        p.add(names::time_day_emb,
              detail::glorot_uniform<R>(Shape{cfg.steps_per_day, cfg.d_td}, cfg.steps_per_day, cfg.d_td, rng));
        p.add(names::time_week_emb,
              detail::glorot_uniform<R>(Shape{cfg.days_per_week, cfg.d_tw}, cfg.days_per_week, cfg.d_tw, rng));
    }
    if (cfg.use_node_emb)
        p.add(names::node_emb, detail::glorot_uniform<R>(Shape{node_count, cfg.d_n}, node_count, cfg.d_n, rng));
    if (cfg.use_bias) p.add(names::personal_bias, Tensor<R>::zeros(Shape{h}));
    return p;
}

// ---- forward pass ----

// k repetitions of Dropout(ReLU(LayerNorm(x W + b))).
template <class R>
Var<R> mlp_blocks(Tape<R>* tape, Var<R> x, ParamStore<R>& p, const std::string& stack, int64_t k,
                  double drop_rate, Rng* rng, bool training) {
    if (training && drop_rate > 0.0 && rng == nullptr)
        throw ConfigError("mlp_blocks: training with dropout requires an rng");
    for (int64_t i = 0; i < k; ++i) {
        const std::string base = stack + "." + std::to_string(i) + ".";
        x = ops::linear(tape, x, p.get(base + "w"), p.get(base + "b"));
        x = ops::layer_norm(tape, x, p.get(base + "gamma"), p.get(base + "beta"),
                            static_cast<R>(kLayerNormEps));
        x = ops::relu(tape, x);
        if (training && drop_rate > 0.0) x = ops::dropout(tape, x, drop_rate, *rng, training);
    }
    return x;
}

// Time codebook lookups broadcast over the node axis: B x T x N x (d_td + d_tw).
template <class R>
Var<R> embed_time(Tape<R>* tape, const ITensor& tod, const ITensor& dow, ParamStore<R>& p,
                  int64_t n_nodes) {
    Var<R> etd = ops::gather_rows(tape, p.get(names::time_day_emb), tod);
    Var<R> etw = ops::gather_rows(tape, p.get(names::time_week_emb), dow);
    Var<R> etd4 = ops::tile_nodes(tape, etd, n_nodes);
    Var<R> etw4 = ops::tile_nodes(tape, etw, n_nodes);
    return ops::concat_last(tape, {etd4, etw4});
}

// Node codebook lookup broadcast over batch and time: B x T x N x d_n.
template <class R>
Var<R> embed_nodes(Tape<R>* tape, const ITensor& node_slots, ParamStore<R>& p, int64_t b, int64_t t) {
    Var<R> en = ops::gather_rows(tape, p.get(names::node_emb), node_slots);
    return ops::tile_batch_time(tape, en, b, t);
}

// E_TN: per-branch MLP blocks, concatenation, then the fusion stack. With one
// branch ablated the fusion consumes the surviving branch directly.
template <class R>
Var<R> fuse_time_node(Tape<R>* tape, const WindowBatch<R>& batch, ParamStore<R>& p,
                      const ModelConfig& cfg, Rng* rng, bool training) {
    const int64_t b = batch.x.dims[0], t = batch.x.dims[1], n = batch.x.dims[2];
    Var<R> fused_in;
    if (cfg.use_time_emb && cfg.use_node_emb) {
        Var<R> et = embed_time(tape, batch.tod, batch.dow, p, n);
        Var<R> en = embed_nodes(tape, batch.node_slots, p, b, t);
        Var<R> th = mlp_blocks(tape, et, p, "time_mlp", cfg.k_layers, cfg.dropout, rng, training);
        Var<R> nh = mlp_blocks(tape, en, p, "node_mlp", cfg.k_layers, cfg.dropout, rng, training);
        fused_in = ops::concat_last(tape, {th, nh});
    } else if (cfg.use_time_emb) {
        Var<R> et = embed_time(tape, batch.tod, batch.dow, p, n);
        fused_in = mlp_blocks(tape, et, p, "time_mlp", cfg.k_layers, cfg.dropout, rng, training);
    } else {
        Var<R> en = embed_nodes(tape, batch.node_slots, p, b, t);
        fused_in = mlp_blocks(tape, en, p, "node_mlp", cfg.k_layers, cfg.dropout, rng, training);
    }
    return mlp_blocks(tape, fused_in, p, "fuse_mlp", cfg.k_layers, cfg.dropout, rng, training);
}

// Swap time and hidden extents, run the T_in -> T_out stack, swap back.
// Layers here are linear time-mixing maps with ReLU/dropout in between; the
// last one stays linear so predictions keep their scale. Layer-norm has no
// place on this axis: normalizing each channel's time profile per sample
// throws away the window level the forecast depends on.
template <class R>
Var<R> temporal_block(Tape<R>* tape, const Var<R>& x, ParamStore<R>& p, const ModelConfig& cfg,
                      Rng* rng, bool training) {
    if (training && cfg.dropout > 0.0 && rng == nullptr)
        throw ConfigError("temporal_block: training with dropout requires an rng");
    Var<R> cur = ops::swap_time_hidden(tape, x);
    for (int64_t i = 0; i < cfg.k_layers; ++i) {
        const std::string base = "temporal." + std::to_string(i) + ".";
        cur = ops::linear(tape, cur, p.get(base + "w"), p.get(base + "b"));
        if (i + 1 < cfg.k_layers) {
            cur = ops::relu(tape, cur);
            if (training && cfg.dropout > 0.0) cur = ops::dropout(tape, cur, cfg.dropout, *rng, training);
        }
    }
    return ops::swap_time_hidden(tape, cur);
}

// Full backbone: returns predictions of shape B x T_out x N (normalized units).
template <class R>
Var<R> forward(Tape<R>* tape, const WindowBatch<R>& batch, ParamStore<R>& p,
               const ModelConfig& cfg, Rng* rng, bool training) {
    const Shape xs = batch.x.dims;
    if (xs.ndim != 4 || xs[3] != 1)
        throw ShapeError("forward: input must be B x T_in x N x 1, got " + xs.str());
    if (xs[1] != cfg.t_in)
        throw ShapeError("forward: input time extent " + std::to_string(xs[1]) +
                         " does not match t_in " + std::to_string(cfg.t_in));

    Var<R> x(batch.x);
    Var<R> ex = mlp_blocks(tape, x, p, "data_enc", cfg.k_layers, cfg.dropout, rng, training);
    if (cfg.use_bias) ex = ops::add_vec(tape, ex, p.get(names::personal_bias));

    Var<R> cat_in;
    if (cfg.any_embedding()) {
        Var<R> etn = fuse_time_node(tape, batch, p, cfg, rng, training);
        cat_in = ops::concat_last(tape, {ex, etn});
    } else {
        cat_in = ex;
    }
    Var<R> ecat = mlp_blocks(tape, cat_in, p, "cat_mlp", cfg.k_layers, cfg.dropout, rng, training);
    Var<R> efin = temporal_block(tape, ecat, p, cfg, rng, training);
    Var<R> yhat = ops::linear(tape, efin, p.get("head.w"), p.get("head.b"));
    return ops::reshape(tape, yhat, Shape{xs[0], cfg.t_out, xs[2]});
}

// Historical Inertia: replay the most recent inputs as the forecast.
template <class R>
Tensor<R> hi_predict(const Tensor<R>& x, int64_t t_out) {
    if (x.dims.ndim != 3) throw ShapeError("hi_predict: expected B x T_in x N, got " + x.dims.str());
    const int64_t b = x.dims[0], t_in = x.dims[1], n = x.dims[2];
    Tensor<R> out(Shape{b, t_out, n});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < t_out; ++j) {
            const int64_t src = t_in >= t_out ? (t_in - t_out + j) : (t_in - 1);
            std::memcpy(out.ptr() + (bi * t_out + j) * n, x.ptr() + (bi * t_in + src) * n,
                        static_cast<size_t>(n) * sizeof(R));
        }
    return out;
}

}  // namespace fedci
