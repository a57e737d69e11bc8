#pragma once

// Feature-space masking and reconstruction ("the rebuilder"): embed encoder
// features onto a token grid, replace a uniformly sampled subset of tokens
// with a shared learnable token, run pre-norm transformer blocks over all
// tokens with absolute positional embeddings, project back to feature-map
// space through a transposed-conv chain, and fuse the reconstruction into the
// original features so that exactly the masked positions are replaced.
// Train-time only: inference never touches this state.

#include <cstdint>
#include <string>
#include <vector>

#include "mfm/kernels.hpp"
#include "mfm/nn.hpp"
#include "mfm/ops.hpp"

namespace mfm {

struct RebuilderConfig {
    int embed_dim = 512;  // token width C'
    int grid = 16;        // token grid is grid x grid
    int num_blocks = 2;
    int num_heads = 8;
    double mask_ratio = 0.40;
    enum class Projector { single, multi };
    Projector projector = Projector::single;
    bool learned_pos = false;  // default: fixed sinusoidal table

    int tokens() const { return grid * grid; }

    void validate() const {
        if (embed_dim < 2) throw ConfigError("rebuilder: embed_dim must be >= 2");
        if (grid < 1) throw ConfigError("rebuilder: grid must be >= 1");
        if (num_blocks < 0) throw ConfigError("rebuilder: num_blocks must be >= 0");
        if (num_heads < 1) throw ConfigError("rebuilder: num_heads must be >= 1");
        if (embed_dim % num_heads != 0)
            throw ConfigError("rebuilder: embed_dim " + std::to_string(embed_dim) +
                              " not divisible by num_heads " + std::to_string(num_heads));
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw ConfigError("rebuilder: mask_ratio must be in [0, 1], got " +
                              std::to_string(mask_ratio));
    }
};

// Binary mask over a token or feature grid.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> m;

    int popcount() const {
        int n = 0;
        for (auto v : m) n += v;
        return n;
    }
};

// Exactly round(ratio * grid^2) positions set, drawn uniformly without
// replacement (partial Fisher-Yates); deterministic per generator state.
inline Mask sample_mask(const RebuilderConfig& cfg, Rng& rng) {
    const int t = cfg.tokens();
    const int k = static_cast<int>(std::llround(cfg.mask_ratio * t));
    std::vector<int> idx(t);
    for (int i = 0; i < t; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(t - i)));
        std::swap(idx[i], idx[j]);
    }
    Mask mask;
    mask.h = cfg.grid;
    mask.w = cfg.grid;
    mask.m.assign(t, 0);
    for (int i = 0; i < k; ++i) mask.m[idx[i]] = 1;
    return mask;
}

// Nearest-neighbor resize; output stays strictly binary.
inline Mask resize_mask(const Mask& mask, int out_h, int out_w) {
    Mask out;
    out.h = out_h;
    out.w = out_w;
    out.m.assign(static_cast<std::size_t>(out_h) * out_w, 0);
    kernels::nearest_resize_u8(mask.m.data(), out.m.data(), mask.h, mask.w, out_h, out_w);
    return out;
}

// Constant {channels, h, w} tensor holding the mask (or its complement)
// repeated across channels.
inline Tensor mask_chw(const Mask& mask, int channels, bool invert) {
    std::vector<float> v(static_cast<std::size_t>(channels) * mask.m.size());
    for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < mask.m.size(); ++p)
            v[c * mask.m.size() + p] = invert ? 1.0f - mask.m[p] : float(mask.m[p]);
    return Tensor::leaf({channels, mask.h, mask.w}, std::move(v));
}

// Constant {tokens, cols} tensor with each row equal to the mask bit (or its
// complement) at that token.
inline Tensor mask_tokens(const Mask& mask, int cols, bool invert) {
    std::vector<float> v(mask.m.size() * cols);
    for (std::size_t p = 0; p < mask.m.size(); ++p) {
        const float b = invert ? 1.0f - mask.m[p] : float(mask.m[p]);
        for (int c = 0; c < cols; ++c) v[p * cols + c] = b;
    }
    return Tensor::leaf({static_cast<int>(mask.m.size()), cols}, std::move(v));
}

// Fixed absolute positional table ({tokens, dim}): interleaved sin/cos with
// geometrically spaced frequencies; rows are pairwise distinct.
inline Tensor sinusoidal_table(int tokens, int dim) {
    std::vector<float> v(static_cast<std::size_t>(tokens) * dim);
    for (int p = 0; p < tokens; ++p)
        for (int d = 0; d < dim; ++d) {
            const int pair = d / 2;
            const double freq = std::exp(-std::log(10000.0) * (2.0 * pair) / dim);
            const double angle = p * freq;
            v[static_cast<std::size_t>(p) * dim + d] =
                static_cast<float>((d % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return Tensor::leaf({tokens, dim}, std::move(v));
}

// Pre-norm transformer block: x += attn(norm1(x)); x += mlp(norm2(x)).
// Attention is multi-head self-attention with per-head projection layers;
// summing per-head output maps is the same linear map as concatenating heads
// and applying one big output projection.
struct TransformerBlock {
    nn::LayerNorm ln1, ln2;
    std::vector<nn::Linear> q, k, v, o;  // one entry per head
    nn::Linear mlp1, mlp2;
    int dim = 0;
    int heads = 1;

    static TransformerBlock make(int dim, int heads, Rng& rng) {
        TransformerBlock b;
        b.dim = dim;
        b.heads = heads;
        const int dh = dim / heads;
        b.ln1 = nn::LayerNorm::make(dim);
        b.ln2 = nn::LayerNorm::make(dim);
        for (int h = 0; h < heads; ++h) {
            b.q.push_back(nn::Linear::make(dh, dim, rng));
            b.k.push_back(nn::Linear::make(dh, dim, rng));
            b.v.push_back(nn::Linear::make(dh, dim, rng));
            b.o.push_back(nn::Linear::make(dim, dh, rng));
        }
        b.mlp1 = nn::Linear::make(4 * dim, dim, rng);
        b.mlp2 = nn::Linear::make(dim, 4 * dim, rng);
        return b;
    }

    Tensor forward(const Tensor& x) const {
        const int dh = dim / heads;
        Tensor h1 = ln1.forward(x);
        Tensor attn;
        for (int h = 0; h < heads; ++h) {
            Tensor qh = q[h].forward(h1);
            Tensor kh = k[h].forward(h1);
            Tensor vh = v[h].forward(h1);
            Tensor scores = ops::matmul(qh, kh, false, true, 1.0 / std::sqrt(double(dh)));
            Tensor att = ops::softmax(scores);
            Tensor ctx = ops::matmul(att, vh);
            Tensor oh = o[h].forward(ctx);
            attn = attn.defined() ? ops::add(attn, oh) : oh;
        }
        Tensor x1 = ops::add(x, attn);
        Tensor h2 = ln2.forward(x1);
        Tensor m = mlp2.forward(ops::gelu(mlp1.forward(h2)));
        return ops::add(x1, m);
    }

    void collect(nn::ParamMap& pm, const std::string& prefix) const {
        ln1.collect(pm, prefix + ".ln1");
        ln2.collect(pm, prefix + ".ln2");
        for (int h = 0; h < heads; ++h) {
            q[h].collect(pm, prefix + ".attn.q" + std::to_string(h));
            k[h].collect(pm, prefix + ".attn.k" + std::to_string(h));
            v[h].collect(pm, prefix + ".attn.v" + std::to_string(h));
            o[h].collect(pm, prefix + ".attn.o" + std::to_string(h));
        }
        mlp1.collect(pm, prefix + ".mlp1");
        mlp2.collect(pm, prefix + ".mlp2");
    }
};

// Width of the transposed-conv chain output after tap i (0-based): the token
// width halves per upsampling step, floored at 8.
inline int chain_width(int embed_dim, int tap) {
    const int w = embed_dim >> (tap + 1);
    return w < 8 ? 8 : w;
}

struct RebuilderState {
    RebuilderConfig cfg;
    std::vector<int> out_channels;  // feature widths this state rebuilds to

    nn::Linear embed;   // C -> C'
    Tensor mask_token;  // {C'}, shared across masked positions
    Tensor pos;         // {tokens, C'}: sinusoidal leaf, or a parameter
    std::vector<TransformerBlock> blocks;
    std::vector<nn::TConv2d> ups;        // 2 (single) or 4 (multi), kernel 2 stride 2
    nn::Conv2d out_map;                  // single: 1x1 chain-end -> C
    std::vector<nn::Conv2d> stage_maps;  // multi: per-stage 1x1 maps
    nn::Conv2d pix_head;                 // 1x1 chain-end -> 3 (pixel-space head)
    std::vector<Tensor> feat_tokens;     // per feature width, masking-only baseline
    std::int64_t param_count = 0;

    static RebuilderState make(const RebuilderConfig& cfg,
                               const std::vector<int>& feature_channels, Rng& rng) {
        cfg.validate();
        const bool multi = cfg.projector == RebuilderConfig::Projector::multi;
        if (feature_channels.size() != (multi ? 4u : 1u))
            throw ConfigError("rebuilder: " + std::string(multi ? "multi" : "single") +
                              " projector needs " + std::string(multi ? "4" : "1") +
                              " feature widths, got " + std::to_string(feature_channels.size()));
        RebuilderState st;
        st.cfg = cfg;
        st.out_channels = feature_channels;
        const int cin = feature_channels.back();
        st.embed = nn::Linear::make(cfg.embed_dim, cin, rng);
        st.mask_token = nn::normal_param({cfg.embed_dim}, rng, 0.02);
        if (cfg.learned_pos)
            st.pos = nn::normal_param({cfg.tokens(), cfg.embed_dim}, rng, 0.02);
        else
            st.pos = sinusoidal_table(cfg.tokens(), cfg.embed_dim);
        for (int b = 0; b < cfg.num_blocks; ++b)
            st.blocks.push_back(TransformerBlock::make(cfg.embed_dim, cfg.num_heads, rng));

        const int n_ups = multi ? 4 : 2;
        int width = cfg.embed_dim;
        for (int i = 0; i < n_ups; ++i) {
            const int next = chain_width(cfg.embed_dim, i);
            st.ups.push_back(nn::TConv2d::make(width, next, 2, 2, 2, 0, 0, rng));
            width = next;
        }
        if (multi) {
            // Tap after ups[i] feeds stage 4-i (first tap -> deepest stage).
            for (int s = 0; s < 4; ++s)
                st.stage_maps.push_back(nn::Conv2d::make(
                    feature_channels[s], chain_width(cfg.embed_dim, 3 - s), 1, 1, 1, 0, rng));
        } else {
            st.out_map = nn::Conv2d::make(cin, chain_width(cfg.embed_dim, 1), 1, 1, 1, 0, rng);
        }
        st.pix_head = nn::Conv2d::make(3, chain_width(cfg.embed_dim, n_ups - 1), 1, 1, 1, 0, rng);
        for (int c : feature_channels) st.feat_tokens.push_back(nn::normal_param({c}, rng, 0.02));
        st.param_count = static_cast<std::int64_t>(st.params().scalar_count());
        return st;
    }

    void collect(nn::ParamMap& pm) const {
        embed.collect(pm, "rebuilder.embed");
        pm.add("rebuilder.token", mask_token);
        if (cfg.learned_pos) pm.add("rebuilder.pos", pos);
        for (std::size_t b = 0; b < blocks.size(); ++b)
            blocks[b].collect(pm, "rebuilder.blocks." + std::to_string(b));
        for (std::size_t i = 0; i < ups.size(); ++i)
            ups[i].collect(pm, "rebuilder.proj.up" + std::to_string(i));
        if (cfg.projector == RebuilderConfig::Projector::multi) {
            for (std::size_t s = 0; s < stage_maps.size(); ++s)
                stage_maps[s].collect(pm, "rebuilder.proj.stage" + std::to_string(s + 1));
        } else {
            out_map.collect(pm, "rebuilder.proj.out");
        }
        pix_head.collect(pm, "rebuilder.pix_head");
        for (std::size_t i = 0; i < feat_tokens.size(); ++i)
            pm.add("rebuilder.feat_token" + std::to_string(i), feat_tokens[i]);
    }

    nn::ParamMap params() const {
        nn::ParamMap pm;
        collect(pm);
        return pm;
    }
};

namespace detail {

inline void expect_chw(const Tensor& t, const char* who) {
    if (t.shape().size() != 3)
        throw ConfigError(std::string(who) + ": expected {C,H,W} features, got " +
                          shape_str(t.shape()));
}

inline Tensor identity_matrix(int n) {
    std::vector<float> v(static_cast<std::size_t>(n) * n, 0.0f);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0f;
    return Tensor::leaf({n, n}, std::move(v));
}

}  // namespace detail

// Channel map first, then bilinear resize onto the token grid. Token-major
// output {tokens, C'}.
inline Tensor embed_tokens(const RebuilderState& st, const Tensor& f_t) {
    detail::expect_chw(f_t, "embed_features");
    const Shape& s = f_t.shape();
    const int c = s[0], h = s[1], w = s[2];
    if (c != st.out_channels.back())
        throw ConfigError("embed_features: state embeds " +
                          std::to_string(st.out_channels.back()) + " channels, got " +
                          std::to_string(c));
    Tensor chw_rows = f_t.reshape({c, h * w});
    Tensor tokens = st.embed.forward(chw_rows, /*trans_x=*/true);  // {HW, C'}
    return ops::bilinear_tokens(tokens, h, w, st.cfg.grid, st.cfg.grid);
}

// Same computation presented channel-major {C', grid, grid}.
inline Tensor embed_features(const RebuilderState& st, const Tensor& f_t) {
    Tensor tokens = embed_tokens(st, f_t);  // {T, C'}
    const int t = st.cfg.tokens();
    Tensor chw = ops::matmul(tokens, detail::identity_matrix(t), /*trans_a=*/true);
    return chw.reshape({st.cfg.embed_dim, st.cfg.grid, st.cfg.grid});
}

// Token replacement, positional addition, transformer blocks.
inline Tensor run_trunk(const RebuilderState& st, const Tensor& tokens, const Mask& mask) {
    if (mask.h != st.cfg.grid || mask.w != st.cfg.grid)
        throw ConfigError("rebuild: mask extent " + std::to_string(mask.h) + "x" +
                          std::to_string(mask.w) + " does not match grid " +
                          std::to_string(st.cfg.grid));
    Tensor visible = ops::hadamard(mask_tokens(mask, st.cfg.embed_dim, /*invert=*/true), tokens);
    Tensor token_row = st.mask_token.reshape({1, st.cfg.embed_dim});
    Tensor replaced = ops::matmul(mask_tokens(mask, 1, /*invert=*/false), token_row);
    Tensor x = ops::add(ops::add(visible, replaced), st.pos);
    for (const auto& b : st.blocks) x = b.forward(x);
    return x;
}

// Transposed-conv chain from the token grid; returns the raw output of each
// upsampling step (gelu applied between steps, not to the taps themselves).
inline std::vector<Tensor> run_chain(const RebuilderState& st, const Tensor& tokens,
                                     int n_taps) {
    if (n_taps < 1 || n_taps > static_cast<int>(st.ups.size()))
        throw ConfigError("rebuild: chain has " + std::to_string(st.ups.size()) +
                          " steps, requested " + std::to_string(n_taps));
    std::vector<Tensor> taps;
    Tensor x = st.ups[0].forward_tokens(tokens, st.cfg.grid, st.cfg.grid);
    taps.push_back(x);
    for (int i = 1; i < n_taps; ++i) {
        x = st.ups[i].forward(ops::gelu(taps.back()));
        taps.push_back(x);
    }
    return taps;
}

// Dense reconstruction proposal at the shape of f_t (single-map contract).
inline Tensor rebuild_single(const RebuilderState& st, const Tensor& f_t, const Mask& mask) {
    if (st.cfg.projector != RebuilderConfig::Projector::single)
        throw ConfigError("rebuild_single: state was built with the multi projector");
    detail::expect_chw(f_t, "rebuild_single");
    const Shape& s = f_t.shape();
    Tensor trunk = run_trunk(st, embed_tokens(st, f_t), mask);
    std::vector<Tensor> taps = run_chain(st, trunk, 2);
    Tensor aligned = ops::bilinear(taps[1], s[1], s[2]);
    Tensor offset = st.out_map.forward(aligned);
    if (offset.shape() != s)
        throw ConfigError("rebuild_single: projector output " + shape_str(offset.shape()) +
                          " does not match features " + shape_str(s));
    return offset;
}

// Four reconstruction proposals from the deepest stage only; stage extents
// follow the halving chain upward from f4.
inline std::vector<Tensor> rebuild_multi(const RebuilderState& st, const Tensor& f4,
                                         const Mask& mask) {
    if (st.cfg.projector != RebuilderConfig::Projector::multi)
        throw ConfigError("rebuild_multi: state was built with the single projector");
    detail::expect_chw(f4, "rebuild_multi");
    const Shape& s = f4.shape();
    Tensor trunk = run_trunk(st, embed_tokens(st, f4), mask);
    std::vector<Tensor> taps = run_chain(st, trunk, 4);
    std::vector<Tensor> offsets(4);
    for (int stage = 1; stage <= 4; ++stage) {
        const int scale = 1 << (4 - stage);
        const int th = s[1] * scale, tw = s[2] * scale;
        Tensor aligned = ops::bilinear(taps[4 - stage], th, tw);
        offsets[stage - 1] = st.stage_maps[stage - 1].forward(aligned);
    }
    return offsets;
}

// f_r = M ⊙ f_o + (1-M) ⊙ f_t with the mask broadcast across channels.
// Masked positions equal f_o exactly; unmasked equal f_t exactly.
inline Tensor fuse(const Tensor& f_t, const Tensor& f_o, const Mask& ms) {
    detail::expect_chw(f_t, "fuse");
    if (f_t.shape() != f_o.shape())
        throw ConfigError("fuse: feature shapes differ, " + shape_str(f_t.shape()) + " vs " +
                          shape_str(f_o.shape()));
    const Shape& s = f_t.shape();
    if (ms.h != s[1] || ms.w != s[2])
        throw ConfigError("fuse: mask extent " + std::to_string(ms.h) + "x" +
                          std::to_string(ms.w) + " does not match features " + shape_str(s));
    Tensor keep = ops::hadamard(mask_chw(ms, s[0], /*invert=*/true), f_t);
    Tensor take = ops::hadamard(mask_chw(ms, s[0], /*invert=*/false), f_o);
    return ops::add(take, keep);
}

struct Reconstruction {
    std::vector<Tensor> fused;    // same shapes as the input features
    std::vector<Tensor> offsets;  // dense proposals per stage
    Mask grid_mask;               // mask on the token grid
    std::vector<Mask> stage_masks;
};

// Full pipeline: embed -> sample mask -> rebuild -> resize mask -> fuse.
inline Reconstruction reconstruct(const RebuilderState& st, const std::vector<Tensor>& features,
                                  Rng& rng) {
    const bool multi = st.cfg.projector == RebuilderConfig::Projector::multi;
    if (features.size() != (multi ? 4u : 1u))
        throw ConfigError("reconstruct: expected " + std::to_string(multi ? 4 : 1) +
                          " feature maps, got " + std::to_string(features.size()));
    Reconstruction rec;
    rec.grid_mask = sample_mask(st.cfg, rng);
    if (multi) {
        rec.offsets = rebuild_multi(st, features[3], rec.grid_mask);
    } else {
        rec.offsets = {rebuild_single(st, features[0], rec.grid_mask)};
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        const Shape& s = features[i].shape();
        if (static_cast<int>(s[0]) != st.out_channels[i])
            throw ConfigError("reconstruct: stage " + std::to_string(i + 1) + " has " +
                              std::to_string(s[0]) + " channels, state rebuilds " +
                              std::to_string(st.out_channels[i]));
        rec.stage_masks.push_back(resize_mask(rec.grid_mask, s[1], s[2]));
        rec.fused.push_back(fuse(features[i], rec.offsets[i], rec.stage_masks.back()));
    }
    return rec;
}

}  // namespace mfm
