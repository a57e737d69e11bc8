#pragma once

// Toy semantic-segmentation models. Two encoder families share one type:
//   single-scale: three stride-2 convs -> one feature map at 1/8 resolution
//   multi-scale:  stem + four stages   -> pyramid at 1/4, 1/8, 1/16, 1/32
//                 with channels 16/32/48/64
// Decoders map features (from the encoder or any producer honoring the same
// shape contract) to full-resolution class logits.

#include <cstdint>
#include <string>
#include <vector>

#include "mfm/nn.hpp"
#include "mfm/ops.hpp"

namespace mfm {

struct SegModelConfig {
    int classes = 19;
    bool multi_scale = false;
    int feat_channels = 64;  // single-scale feature width C
};

// Per-pixel class indices in [0, classes) or the ignore value 255.
struct LabelMap {
    int h = 0;
    int w = 0;
    std::vector<std::int32_t> idx;
};

inline constexpr int kIgnoreLabel = 255;

// Multi-scale stage widths (fixed; increasing with depth).
inline const std::vector<int> kStageChannels = {16, 32, 48, 64};

struct SegModel {
    SegModelConfig cfg;

    // Encoder convs. Single-scale: 3 stride-2 convs (3->16->32->C).
    // Multi-scale: stem (3->16, 1/2) then stages 1..4 (each stride 2).
    std::vector<nn::Conv2d> enc;
    // Multi-scale decoder: per-stage 1x1 projections onto a shared width.
    // (A concat of four projections followed by a 1x1 fuse conv is the same
    // linear map as the sum of four per-stage 1x1 convs, so the fuse step is
    // folded into these projections.)
    std::vector<nn::Conv2d> dec_proj;
    // 1x1 classifier conv shared by both families.
    nn::Conv2d dec_cls;

    static SegModel make(const SegModelConfig& cfg, Rng& rng) {
        SegModel m;
        m.cfg = cfg;
        if (cfg.classes < 2 || cfg.classes > 254)
            throw ConfigError("segmodel: classes must be in [2, 254], got " +
                              std::to_string(cfg.classes));
        if (cfg.multi_scale) {
            m.enc.push_back(nn::Conv2d::make(kStageChannels[0], 3, 3, 3, 2, 1, rng));
            m.enc.push_back(
                nn::Conv2d::make(kStageChannels[0], kStageChannels[0], 3, 3, 2, 1, rng));
            for (int s = 1; s < 4; ++s)
                m.enc.push_back(nn::Conv2d::make(kStageChannels[s], kStageChannels[s - 1], 3, 3,
                                                 2, 1, rng));
            const int width = kStageChannels.back();
            for (int s = 0; s < 4; ++s)
                m.dec_proj.push_back(nn::Conv2d::make(width, kStageChannels[s], 1, 1, 1, 0, rng));
            m.dec_cls = nn::Conv2d::make(cfg.classes, width, 1, 1, 1, 0, rng);
        } else {
            if (cfg.feat_channels < 1)
                throw ConfigError("segmodel: feat_channels must be positive");
            m.enc.push_back(nn::Conv2d::make(16, 3, 3, 3, 2, 1, rng));
            m.enc.push_back(nn::Conv2d::make(32, 16, 3, 3, 2, 1, rng));
            m.enc.push_back(nn::Conv2d::make(cfg.feat_channels, 32, 3, 3, 2, 1, rng));
            m.dec_cls = nn::Conv2d::make(cfg.classes, cfg.feat_channels, 1, 1, 1, 0, rng);
        }
        return m;
    }

    int required_divisor() const { return cfg.multi_scale ? 32 : 8; }

    // Channel widths of the feature maps encode() produces, outermost first.
    std::vector<int> feature_channels() const {
        if (cfg.multi_scale) return kStageChannels;
        return {cfg.feat_channels};
    }

    // image: {N,3,H,W} or {3,H,W}. Returns one map (single) or four stages
    // outermost-first (multi), channel-major.
    std::vector<Tensor> encode(const Tensor& image) const {
        const Shape& s = image.shape();
        if (s.size() != 3 && s.size() != 4)
            throw ConfigError("encode: expected 3-D or 4-D image, got " + shape_str(s));
        const int h = s[s.size() - 2], w = s[s.size() - 1];
        const int ch = s[s.size() - 3];
        if (ch != 3) throw ConfigError("encode: expected 3 input channels, got " +
                                       std::to_string(ch));
        const int div = required_divisor();
        if (h % div != 0 || w % div != 0)
            throw ConfigError("encode: input " + std::to_string(h) + "x" + std::to_string(w) +
                              " must be divisible by " + std::to_string(div));
        if (cfg.multi_scale) {
            Tensor x = ops::relu(enc[0].forward(image));
            std::vector<Tensor> stages;
            for (int s4 = 1; s4 <= 4; ++s4) {
                x = ops::relu(enc[s4].forward(x));
                stages.push_back(x);
            }
            return stages;
        }
        Tensor x = ops::relu(enc[0].forward(image));
        x = ops::relu(enc[1].forward(x));
        x = ops::relu(enc[2].forward(x));
        return {x};
    }

    // Features must honor the encoder's shape contract but may come from any
    // producer (e.g. reconstruction-fused features).
    Tensor decode(const std::vector<Tensor>& feats) const {
        if (cfg.multi_scale) {
            if (feats.size() != 4)
                throw ConfigError("decode: expected 4 pyramid stages, got " +
                                  std::to_string(feats.size()));
            for (int s = 0; s < 4; ++s) {
                const Shape& fs = feats[s].shape();
                const int c = fs[fs.size() - 3];
                if (c != kStageChannels[s])
                    throw ConfigError("decode: stage " + std::to_string(s + 1) + " expected " +
                                      std::to_string(kStageChannels[s]) + " channels, got " +
                                      std::to_string(c));
                if (s > 0) {
                    const Shape& prev = feats[s - 1].shape();
                    const int ph = prev[prev.size() - 2], pw = prev[prev.size() - 1];
                    const int chh = fs[fs.size() - 2], cww = fs[fs.size() - 1];
                    if (chh * 2 != ph || cww * 2 != pw)
                        throw ConfigError("decode: stage " + std::to_string(s + 1) +
                                          " extent must halve stage " + std::to_string(s));
                }
            }
            const Shape& f1 = feats[0].shape();
            const int h1 = f1[f1.size() - 2], w1 = f1[f1.size() - 1];
            Tensor acc;
            for (int s = 0; s < 4; ++s) {
                Tensor p = dec_proj[s].forward(feats[s]);
                Tensor a = ops::bilinear(p, h1, w1);
                acc = acc.defined() ? ops::add(acc, a) : a;
            }
            Tensor fused = ops::relu(acc);
            Tensor logits = dec_cls.forward(fused);
            return ops::bilinear(logits, h1 * 4, w1 * 4);
        }
        if (feats.size() != 1)
            throw ConfigError("decode: expected 1 feature map, got " +
                              std::to_string(feats.size()));
        const Shape& fs = feats[0].shape();
        if (fs.size() != 3 && fs.size() != 4)
            throw ConfigError("decode: expected 3-D or 4-D features, got " + shape_str(fs));
        const int c = fs[fs.size() - 3];
        if (c != cfg.feat_channels)
            throw ConfigError("decode: expected " + std::to_string(cfg.feat_channels) +
                              " feature channels, got " + std::to_string(c));
        const int fh = fs[fs.size() - 2], fw = fs[fs.size() - 1];
        Tensor logits = dec_cls.forward(feats[0]);
        return ops::bilinear(logits, fh * 8, fw * 8);
    }

    // Registry with encoder./decoder. prefixes; order fixed by construction.
    void collect(nn::ParamMap& pm) const {
        for (std::size_t i = 0; i < enc.size(); ++i)
            enc[i].collect(pm, "encoder.conv" + std::to_string(i));
        for (std::size_t i = 0; i < dec_proj.size(); ++i)
            dec_proj[i].collect(pm, "decoder.proj" + std::to_string(i + 1));
        dec_cls.collect(pm, "decoder.cls");
    }

    nn::ParamMap params() const {
        nn::ParamMap pm;
        collect(pm);
        return pm;
    }
};

// Mean cross-entropy over pixels whose label is not 255; 0 if all ignored.
inline Tensor supervised_loss(const Tensor& logits, const std::vector<std::int32_t>& labels) {
    return ops::cross_entropy(logits, labels, kIgnoreLabel);
}

inline Tensor supervised_loss(const Tensor& logits, const LabelMap& labels) {
    const Shape& s = logits.shape();
    const int h = s[s.size() - 2], w = s[s.size() - 1];
    if (labels.h != h || labels.w != w)
        throw ConfigError("supervised_loss: label extent " + std::to_string(labels.h) + "x" +
                          std::to_string(labels.w) + " does not match logits " +
                          std::to_string(h) + "x" + std::to_string(w));
    return supervised_loss(logits, labels.idx);
}

// Check every index is a valid class or the ignore value; returns the first
// offending value or -1 if clean.
inline int first_invalid_label(const std::vector<std::int32_t>& idx, int classes) {
    for (std::int32_t v : idx)
        if ((v < 0 || v >= classes) && v != kIgnoreLabel) return static_cast<int>(v);
    return -1;
}

}  // namespace mfm
