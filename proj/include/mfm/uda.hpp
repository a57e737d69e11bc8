#pragma once

// Self-training domain-adaptation loop with a feature-masking auxiliary task:
//   l_sup     — supervised cross-entropy on source images
//   l_uda     — confidence-thresholded self-training CE on target images,
//               pseudo-labeled by an EMA teacher
//   l_mfm     — auxiliary loss on target images (masked-feature pixel
//               classification by default; comparator objectives available)
//   l_overall = l_sup + l_uda + lambda * l_mfm
// One optimizer step per train_step, decoupled weight decay, polynomial LR
// decay, dedicated learning rate for the reconstruction stack, EMA update last.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfm/rebuilder.hpp"
#include "mfm/segmodel.hpp"

namespace mfm {

enum class ObjectiveKind {
    pixel_cls,        // masked-feature pixel classification (the main objective)
    pixel_rec_norm,   // regress per-patch-normalized pixels at masked positions
    feat_rec_teacher, // regress teacher features at masked positions
    feat_rec_self,    // regress detached student features at masked positions
    masking_only,     // fuse the raw feature token, no reconstruction stack
    none,
};

inline const char* objective_name(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::pixel_cls: return "pixel_cls";
        case ObjectiveKind::pixel_rec_norm: return "pixel_rec_norm";
        case ObjectiveKind::feat_rec_teacher: return "feat_rec_teacher";
        case ObjectiveKind::feat_rec_self: return "feat_rec_self";
        case ObjectiveKind::masking_only: return "masking_only";
        case ObjectiveKind::none: return "none";
    }
    return "none";
}

inline ObjectiveKind objective_from_string(const std::string& s) {
    for (ObjectiveKind k :
         {ObjectiveKind::pixel_cls, ObjectiveKind::pixel_rec_norm, ObjectiveKind::feat_rec_teacher,
          ObjectiveKind::feat_rec_self, ObjectiveKind::masking_only, ObjectiveKind::none})
        if (s == objective_name(k)) return k;
    throw ConfigError("unknown objective '" + s + "'");
}

struct PipelineConfig {
    double lambda = 1.0;  // auxiliary-loss trade-off
    double tau = 0.968;   // pseudo-label confidence threshold
    double alpha = 0.999; // EMA decay
    double base_lr = 1e-3;
    double rebuilder_lr = 6e-5;
    double weight_decay = 0.01;
    double poly_power = 0.9;
    int total_steps = 2000;
    bool q_weighting = true;  // scale target losses by the confident fraction
    ObjectiveKind objective = ObjectiveKind::pixel_cls;

    void validate() const {
        if (tau <= 0.0 || tau >= 1.0)
            throw ConfigError("pipeline: tau must be in (0,1), got " + std::to_string(tau));
        if (alpha < 0.0 || alpha > 1.0)
            throw ConfigError("pipeline: alpha must be in [0,1], got " + std::to_string(alpha));
        if (lambda < 0.0) throw ConfigError("pipeline: lambda must be >= 0");
        if (total_steps < 0) throw ConfigError("pipeline: total_steps must be >= 0");
        if (base_lr <= 0.0 || rebuilder_lr <= 0.0)
            throw ConfigError("pipeline: learning rates must be positive");
    }
};

// A batch of images with per-pixel labels (labels optional for target use).
struct Batch {
    Tensor images;                    // {N,3,H,W}
    std::vector<std::int32_t> labels; // N*H*W entries, 255 = ignore
};

// ----------------------------------------------------------------------------
// Teacher

struct TeacherState {
    SegModel model;
    double alpha = 0.999;

    // Deep copy of the student with gradients structurally disabled.
    static TeacherState make(const SegModel& student, double alpha) {
        TeacherState t;
        Rng dummy(1);
        t.model = SegModel::make(student.cfg, dummy);
        t.alpha = alpha;
        auto sp = student.params();
        auto tp = t.model.params();
        for (std::size_t i = 0; i < sp.items.size(); ++i) {
            tp.items[i].second.node->data = sp.items[i].second.data();
            tp.items[i].second.node->requires_grad = false;
            tp.items[i].second.node->grad.clear();
        }
        return t;
    }
};

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, elementwise.
inline void ema_update(TeacherState& teacher, const SegModel& student, double alpha) {
    auto tp = teacher.model.params();
    auto sp = student.params();
    if (tp.items.size() != sp.items.size())
        throw ConfigError("ema_update: parameter structure mismatch (count)");
    for (std::size_t i = 0; i < tp.items.size(); ++i) {
        if (tp.items[i].first != sp.items[i].first ||
            tp.items[i].second.shape() != sp.items[i].second.shape())
            throw ConfigError("ema_update: parameter structure mismatch at '" +
                              sp.items[i].first + "'");
        auto& td = tp.items[i].second.node->data;
        const auto& sd = sp.items[i].second.data();
        const float a = static_cast<float>(alpha);
        for (std::size_t j = 0; j < td.size(); ++j)
            td[j] = a * td[j] + (1.0f - a) * sd[j];
    }
}

inline void ema_update(TeacherState& teacher, const SegModel& student) {
    ema_update(teacher, student, teacher.alpha);
}

// ----------------------------------------------------------------------------
// Pseudo-labels

struct PseudoBatch {
    int n = 0, h = 0, w = 0;
    std::vector<std::int32_t> labels;  // argmax where confident, else 255
    double q = 0.0;                    // confident-pixel fraction
};

// Per pixel: argmax class when max softmax >= tau, else ignore. Deterministic.
inline PseudoBatch pseudo_label(const Tensor& teacher_logits, double tau) {
    if (tau <= 0.0 || tau >= 1.0)
        throw ConfigError("pseudo_label: tau must be in (0,1), got " + std::to_string(tau));
    const Shape& s = teacher_logits.shape();
    if (s.size() != 3 && s.size() != 4)
        throw ConfigError("pseudo_label: expected {C,H,W} or {N,C,H,W} logits, got " +
                          shape_str(s));
    const int n = s.size() == 4 ? s[0] : 1;
    const int c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
    const int hw = h * w;
    PseudoBatch pb;
    pb.n = n;
    pb.h = h;
    pb.w = w;
    const std::int64_t npix = static_cast<std::int64_t>(n) * hw;
    pb.labels.assign(npix, kIgnoreLabel);
    std::vector<std::int32_t> arg(npix);
    std::vector<float> conf(npix);
    kernels::argmax_conf<float>(teacher_logits.data().data(), n, c, hw, arg.data(), conf.data());
    std::int64_t confident = 0;
    for (std::int64_t p = 0; p < npix; ++p)
        if (conf[p] >= static_cast<float>(tau)) {
            pb.labels[p] = arg[p];
            ++confident;
        }
    pb.q = npix ? static_cast<double>(confident) / static_cast<double>(npix) : 0.0;
    return pb;
}

// ----------------------------------------------------------------------------
// Loss helpers

namespace detail {

inline Tensor slice_image(const Tensor& batch, int i) {
    const Shape& s = batch.shape();
    if (s.size() == 3) return batch;
    const std::int64_t per = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
    std::vector<float> v(batch.data().begin() + i * per, batch.data().begin() + (i + 1) * per);
    return Tensor::leaf({s[1], s[2], s[3]}, std::move(v));
}

inline int batch_size(const Tensor& images) {
    return images.shape().size() == 4 ? images.shape()[0] : 1;
}

// Count-weighted combination of per-image scalar losses: sum_i (w_i * l_i)
// with w_i = count_i / total. Returns a detached zero when total is zero.
inline Tensor combine_weighted(const std::vector<Tensor>& losses,
                               const std::vector<std::int64_t>& counts) {
    std::int64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) return Tensor::zeros({1});
    Tensor acc;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (counts[i] == 0) continue;
        const double wi = static_cast<double>(counts[i]) / static_cast<double>(total);
        acc = acc.defined() ? ops::add(acc, losses[i], 1.0, wi) : ops::scale(losses[i], wi);
    }
    return acc;
}

// Mean of squared differences between value and a constant target, restricted
// to mask-selected positions (mask broadcast across channels).
inline Tensor masked_mse(const Tensor& value, const Tensor& target_leaf, const Mask& ms) {
    const Shape& s = value.shape();
    const int channels = s[0];
    const int pop = ms.popcount();
    if (pop == 0) return Tensor::zeros({1});
    Tensor diff = ops::add(value, target_leaf, 1.0, -1.0);
    Tensor sq = ops::hadamard(diff, diff);
    Tensor sel = ops::hadamard(sq, mask_chw(ms, channels, /*invert=*/false));
    const double scale_to_masked_mean =
        static_cast<double>(value.numel()) / (static_cast<double>(channels) * pop);
    return ops::scale(ops::mean(sel), scale_to_masked_mean);
}

}  // namespace detail

// Masked-feature pixel-classification loss (the main auxiliary objective):
// CE of decode(reconstruct(encode(x_t))) against pseudo-labels, combined over
// the batch by confident-pixel count, then scaled by q when configured.
inline Tensor mfm_loss(const Tensor& x_t, const PseudoBatch& pb, const SegModel& model,
                       const RebuilderState& st, const PipelineConfig& cfg, Rng& rng) {
    const int n = detail::batch_size(x_t);
    const int hw = pb.h * pb.w;
    if (static_cast<std::int64_t>(pb.labels.size()) != static_cast<std::int64_t>(n) * hw)
        throw ConfigError("mfm_loss: pseudo-label count " + std::to_string(pb.labels.size()) +
                          " does not match batch of " + std::to_string(n) + " images");
    std::vector<Tensor> losses;
    std::vector<std::int64_t> counts;
    for (int i = 0; i < n; ++i) {
        Tensor img = detail::slice_image(x_t, i);
        std::vector<std::int32_t> labels(pb.labels.begin() + i * hw,
                                         pb.labels.begin() + (i + 1) * hw);
        std::int64_t count = 0;
        for (auto l : labels)
            if (l != kIgnoreLabel) ++count;
        auto feats = model.encode(img);
        auto rec = reconstruct(st, feats, rng);
        Tensor logits = model.decode(rec.fused);
        losses.push_back(supervised_loss(logits, labels));
        counts.push_back(count);
    }
    Tensor combined = detail::combine_weighted(losses, counts);
    return cfg.q_weighting ? ops::scale(combined, pb.q) : combined;
}

// Comparator auxiliary objectives (alternatives to pixel classification).
inline Tensor comparator_loss(ObjectiveKind kind, const Tensor& x_t, const PseudoBatch& pb,
                              const SegModel& model, const TeacherState& teacher,
                              const RebuilderState& st, const PipelineConfig& cfg, Rng& rng) {
    if (kind == ObjectiveKind::pixel_cls)
        throw ConfigError("comparator_loss: pixel_cls is the main objective, not a comparator");
    if (kind == ObjectiveKind::none)
        throw ConfigError("comparator_loss: objective 'none' has no loss");

    const int n = detail::batch_size(x_t);
    const Shape& xs = x_t.shape();
    const int img_h = xs[xs.size() - 2], img_w = xs[xs.size() - 1];
    const int hw = img_h * img_w;

    std::vector<Tensor> losses;
    std::vector<std::int64_t> counts;

    for (int i = 0; i < n; ++i) {
        Tensor img = detail::slice_image(x_t, i);
        auto feats = model.encode(img);
        Mask grid_mask = sample_mask(st.cfg, rng);

        if (kind == ObjectiveKind::masking_only) {
            // Fused features with the raw feature token at masked positions;
            // decoder CE against pseudo-labels, like the main objective.
            std::vector<Tensor> fused;
            for (std::size_t sidx = 0; sidx < feats.size(); ++sidx) {
                const Shape& fs = feats[sidx].shape();
                Mask ms = resize_mask(grid_mask, fs[1], fs[2]);
                Tensor token_col = st.feat_tokens[sidx].reshape({fs[0], 1});
                Tensor bcast =
                    ops::matmul(token_col, Tensor::full({1, fs[1] * fs[2]}, 1.0f))
                        .reshape({fs[0], fs[1], fs[2]});
                fused.push_back(fuse(feats[sidx], bcast, ms));
            }
            Tensor logits = model.decode(fused);
            std::vector<std::int32_t> labels(pb.labels.begin() + i * hw,
                                             pb.labels.begin() + (i + 1) * hw);
            std::int64_t count = 0;
            for (auto l : labels)
                if (l != kIgnoreLabel) ++count;
            losses.push_back(supervised_loss(logits, labels));
            counts.push_back(count);
            continue;
        }

        if (kind == ObjectiveKind::pixel_rec_norm) {
            // Pixel-space head on the chain end vs per-patch-normalized pixels.
            Tensor trunk = run_trunk(st, embed_tokens(st, feats.back()), grid_mask);
            auto taps = run_chain(st, trunk, static_cast<int>(st.ups.size()));
            Tensor pix = ops::bilinear(taps.back(), img_h, img_w);
            Tensor head = st.pix_head.forward(pix);  // {3, H, W}

            // Normalize the image per mask cell (mean/std over the cell's
            // pixels and channels); plain data, no gradient.
            const int grid = st.cfg.grid;
            std::vector<double> sum(static_cast<std::size_t>(grid) * grid, 0.0);
            std::vector<double> sum2(static_cast<std::size_t>(grid) * grid, 0.0);
            std::vector<std::int64_t> cnt(static_cast<std::size_t>(grid) * grid, 0);
            const auto& xd = img.data();
            auto cell_of = [&](int y, int x) {
                return (y * grid / img_h) * grid + (x * grid / img_w);
            };
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < img_h; ++y)
                    for (int x = 0; x < img_w; ++x) {
                        const double v = xd[(static_cast<std::size_t>(c) * img_h + y) * img_w + x];
                        const int cell = cell_of(y, x);
                        sum[cell] += v;
                        sum2[cell] += v * v;
                        cnt[cell] += 1;
                    }
            std::vector<float> tnorm(xd.size());
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < img_h; ++y)
                    for (int x = 0; x < img_w; ++x) {
                        const std::size_t at =
                            (static_cast<std::size_t>(c) * img_h + y) * img_w + x;
                        const int cell = cell_of(y, x);
                        const double mu = sum[cell] / cnt[cell];
                        const double var = sum2[cell] / cnt[cell] - mu * mu;
                        tnorm[at] = static_cast<float>((xd[at] - mu) /
                                                       std::sqrt(var > 0 ? var + 1e-6 : 1e-6));
                    }
            Tensor target = Tensor::leaf({3, img_h, img_w}, std::move(tnorm));
            Mask ms = resize_mask(grid_mask, img_h, img_w);
            losses.push_back(detail::masked_mse(head, target, ms));
            counts.push_back(1);
            continue;
        }

        // feat_rec_teacher / feat_rec_self: regression toward reference
        // features at masked positions, averaged over stages.
        std::vector<Tensor> refs;
        if (kind == ObjectiveKind::feat_rec_teacher) {
            NoGrad ng;
            refs = teacher.model.encode(img);
        } else if (kind == ObjectiveKind::feat_rec_self) {
            for (const auto& f : feats) refs.push_back(f.detach());
        } else {
            throw ConfigError("comparator_loss: unknown objective kind");
        }
        auto rec = reconstruct(st, feats, rng);
        Tensor stage_sum;
        for (std::size_t sidx = 0; sidx < feats.size(); ++sidx) {
            Tensor term = detail::masked_mse(rec.fused[sidx], refs[sidx], rec.stage_masks[sidx]);
            stage_sum = stage_sum.defined() ? ops::add(stage_sum, term) : term;
        }
        losses.push_back(ops::scale(stage_sum, 1.0 / static_cast<double>(feats.size())));
        counts.push_back(1);
    }

    Tensor combined = detail::combine_weighted(losses, counts);
    return cfg.q_weighting ? ops::scale(combined, pb.q) : combined;
}

// ----------------------------------------------------------------------------
// Optimizer: adaptive moments with decoupled weight decay. Decay applies only
// to rank >= 2 tensors (weights), never to biases, gains, or tokens.

struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot> slots;
    std::int64_t t = 0;

    void init(const nn::ParamMap& params) {
        slots.clear();
        for (const auto& kv : params.items) {
            Slot s;
            s.m.assign(kv.second.data().size(), 0.0f);
            s.v.assign(kv.second.data().size(), 0.0f);
            slots.push_back(std::move(s));
        }
    }

    void step(const nn::ParamMap& params, double lr) {
        if (slots.size() != params.items.size())
            throw ConfigError("optimizer: slot count does not match parameter count");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            auto& node = *params.items[i].second.node;
            if (node.grad.empty()) continue;  // never touched by backward
            const bool decay = params.items[i].second.shape().size() >= 2;
            auto& m = slots[i].m;
            auto& v = slots[i].v;
            for (std::size_t j = 0; j < node.data.size(); ++j) {
                const double g = node.grad[j];
                m[j] = static_cast<float>(beta1 * m[j] + (1 - beta1) * g);
                v[j] = static_cast<float>(beta2 * v[j] + (1 - beta2) * g * g);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                double upd = lr * mhat / (std::sqrt(vhat) + eps);
                if (decay) upd += lr * weight_decay * node.data[j];
                node.data[j] = static_cast<float>(node.data[j] - upd);
            }
        }
    }
};

// ----------------------------------------------------------------------------
// Trainer

struct LossReport {
    double l_sup = 0, l_uda = 0, l_mfm = 0, l_overall = 0, q = 0;
};

struct TrainerState {
    SegModel student;
    TeacherState teacher;
    RebuilderState reb;
    PipelineConfig cfg;
    nn::ParamMap model_params;  // cached; order stable
    nn::ParamMap reb_params;
    AdamW opt_model, opt_reb;
    Rng mask_rng{1};
    int step = 0;

    static TrainerState make(const SegModelConfig& mcfg, const RebuilderConfig& rcfg,
                             const PipelineConfig& pcfg, std::uint64_t seed) {
        pcfg.validate();
        rcfg.validate();
        TrainerState ts;
        ts.cfg = pcfg;
        Rng mrng(derive_seed(seed, "model"));
        ts.student = SegModel::make(mcfg, mrng);
        const bool multi = mcfg.multi_scale;
        RebuilderConfig rc = rcfg;
        rc.projector =
            multi ? RebuilderConfig::Projector::multi : RebuilderConfig::Projector::single;
        Rng rrng(derive_seed(seed, "rebuilder"));
        ts.reb = RebuilderState::make(rc, ts.student.feature_channels(), rrng);
        ts.teacher = TeacherState::make(ts.student, pcfg.alpha);
        ts.model_params = ts.student.params();
        ts.reb_params = ts.reb.params();
        ts.opt_model.weight_decay = pcfg.weight_decay;
        ts.opt_reb.weight_decay = pcfg.weight_decay;
        ts.opt_model.init(ts.model_params);
        ts.opt_reb.init(ts.reb_params);
        ts.mask_rng = Rng(derive_seed(seed, "mask"));
        return ts;
    }

    double poly_factor() const {
        if (cfg.total_steps <= 0) return 1.0;
        const double frac =
            std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.total_steps));
        return std::pow(1.0 - frac, cfg.poly_power);
    }
};

// The three loss terms at the current parameters, without stepping. The mask
// generator is passed explicitly so callers can replay identical masks.
struct LossTerms {
    Tensor sup, uda, mfm;  // mfm is undefined when the objective is inactive
    double q = 0;
};

inline LossTerms compute_losses(TrainerState& ts, const Batch& source, const Batch& target,
                                double lambda, Rng& mask_rng) {
    LossTerms out;
    auto guarded = [](const char* term, auto&& fn) -> Tensor {
        try {
            return fn();
        } catch (const NumericError& e) {
            throw NumericError(std::string("train_step: non-finite ") + term + " (" + e.what() +
                               ")");
        }
    };
    out.sup = guarded("l_sup", [&] {
        Tensor logits = ts.student.decode(ts.student.encode(source.images));
        return supervised_loss(logits, source.labels);
    });

    PseudoBatch pb;
    out.uda = guarded("l_uda", [&] {
        {
            NoGrad ng;
            Tensor tl = ts.teacher.model.decode(ts.teacher.model.encode(target.images));
            pb = pseudo_label(tl, ts.cfg.tau);
        }
        Tensor logits = ts.student.decode(ts.student.encode(target.images));
        Tensor ce = supervised_loss(logits, pb.labels);
        return ts.cfg.q_weighting ? ops::scale(ce, pb.q) : ce;
    });
    out.q = pb.q;

    if (lambda != 0.0 && ts.cfg.objective != ObjectiveKind::none) {
        out.mfm = guarded("l_mfm", [&] {
            if (ts.cfg.objective == ObjectiveKind::pixel_cls)
                return mfm_loss(target.images, pb, ts.student, ts.reb, ts.cfg, mask_rng);
            return comparator_loss(ts.cfg.objective, target.images, pb, ts.student, ts.teacher,
                                   ts.reb, ts.cfg, mask_rng);
        });
    }
    return out;
}

// One full optimization step; returns the loss report for the CSV trace.
inline LossReport train_step(TrainerState& ts, const Batch& source, const Batch& target) {
    ts.model_params.zero_grads();
    ts.reb_params.zero_grads();

    LossTerms terms = compute_losses(ts, source, target, ts.cfg.lambda, ts.mask_rng);

    LossReport rep;
    rep.q = terms.q;
    rep.l_sup = terms.sup.item();
    rep.l_uda = terms.uda.item();
    rep.l_mfm = terms.mfm.defined() ? terms.mfm.item() : 0.0;
    rep.l_overall = rep.l_sup + rep.l_uda + ts.cfg.lambda * rep.l_mfm;

    if (!terms.sup.node->is_leaf()) backward(terms.sup);
    if (!terms.uda.node->is_leaf()) backward(terms.uda);
    if (terms.mfm.defined() && !terms.mfm.node->is_leaf() && ts.cfg.lambda != 0.0)
        backward(terms.mfm, {static_cast<float>(ts.cfg.lambda)});

    const double f = ts.poly_factor();
    ts.opt_model.step(ts.model_params, ts.cfg.base_lr * f);
    ts.opt_reb.step(ts.reb_params, ts.cfg.rebuilder_lr * f);
    ema_update(ts.teacher, ts.student);
    ts.step += 1;
    return rep;
}

// Argmax prediction for evaluation (no thresholding).
inline LabelMap predict_labels(const SegModel& model, const Tensor& image) {
    NoGrad ng;
    Tensor logits = model.decode(model.encode(image));
    const Shape& s = logits.shape();
    const int c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
    LabelMap lm;
    lm.h = h;
    lm.w = w;
    lm.idx.resize(static_cast<std::size_t>(h) * w);
    std::vector<float> conf(lm.idx.size());
    kernels::argmax_conf<float>(logits.data().data(), 1, c, h * w, lm.idx.data(), conf.data());
    return lm;
}

}  // namespace mfm
