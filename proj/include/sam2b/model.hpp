#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sam2b/encoders.hpp"
#include "sam2b/fusion.hpp"
#include "sam2b/kv.hpp"
#include "sam2b/losses.hpp"
#include "sam2b/sensors.hpp"
#include "sam2b/tensor.hpp"

namespace sam2b {

// ---------------------------------------------------------------------------
// Model variants: the full model plus the ablation baselines.
// ---------------------------------------------------------------------------

enum class Variant {
    kSam2b,        // full model
    kFixedWeight,  // uniform fusion weights, reliability path inactive
    kNoBbox,       // image path forced to the full-frame fallback
    kMmAid,        // image + GPS only
    kImageOnly,
    kGpsOnly,
    kHdOnly,
    kPostureOnly,
    kGeometryOnly,  // GPS + HD
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kSam2b: return "sam2b";
        case Variant::kFixedWeight: return "fixed_weight";
        case Variant::kNoBbox: return "no_bbox";
        case Variant::kMmAid: return "mm_aid";
        case Variant::kImageOnly: return "image_only";
        case Variant::kGpsOnly: return "gps_only";
        case Variant::kHdOnly: return "hd_only";
        case Variant::kPostureOnly: return "posture_only";
        case Variant::kGeometryOnly: return "geometry_only";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::kSam2b, Variant::kFixedWeight, Variant::kNoBbox, Variant::kMmAid,
                      Variant::kImageOnly, Variant::kGpsOnly, Variant::kHdOnly,
                      Variant::kPostureOnly, Variant::kGeometryOnly})
        if (name == variant_name(v)) return v;
    throw ConfigError("unknown variant '" + name + "'");
}

/// Which encoders run, in the fixed canonical order.
inline std::vector<Modality> active_modalities(Variant v) {
    switch (v) {
        case Variant::kSam2b:
        case Variant::kFixedWeight:
        case Variant::kNoBbox:
            return {Modality::Img, Modality::Gps, Modality::Hd, Modality::Pos};
        case Variant::kMmAid: return {Modality::Img, Modality::Gps};
        case Variant::kImageOnly: return {Modality::Img};
        case Variant::kGpsOnly: return {Modality::Gps};
        case Variant::kHdOnly: return {Modality::Hd};
        case Variant::kPostureOnly: return {Modality::Pos};
        case Variant::kGeometryOnly: return {Modality::Gps, Modality::Hd};
    }
    return {};
}

/// Whether Eqs. 11-14 (reliability-aware dynamic weights) are active.
inline bool variant_dynamic_weights(Variant v) { return v != Variant::kFixedWeight; }

inline bool variant_forces_fallback(Variant v) { return v == Variant::kNoBbox; }

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t embed_dim = 64;  // E (decoupled from the codebook size)
    std::size_t heads = 4;
    std::size_t vec_hidden = 32;
    std::size_t img_hidden = 64;
    std::size_t score_hidden = 16;
    std::size_t roi = 16;
    std::size_t channels = 3;    // set from the dataset camera
    std::size_t num_beams = 32;  // set from the dataset codebook
    bool attention_residual = true;
    bool per_modality_score_nets = false;
    AlphaMode alpha_mode = AlphaMode::kLearnable;
    double alpha_fixed = 0.5;
    double alpha_init = 0.5;
    Variant variant = Variant::kSam2b;

    FusionConfig fusion() const {
        FusionConfig f;
        f.embed_dim = embed_dim;
        f.heads = heads;
        f.score_hidden = score_hidden;
        f.num_beams = num_beams;
        f.attention_residual = attention_residual;
        f.per_modality_score_nets = per_modality_score_nets;
        f.alpha_mode = alpha_mode;
        f.alpha_fixed = alpha_fixed;
        f.alpha_init = alpha_init;
        return f;
    }

    ImageGeometry geometry() const { return ImageGeometry::make(roi, channels); }

    void validate() const { fusion().validate(); }
};

inline KvMap model_config_to_kv(const ModelConfig& c) {
    KvMap m;
    m["model.embed_dim"] = kv::fmt(c.embed_dim);
    m["model.heads"] = kv::fmt(c.heads);
    m["model.vec_hidden"] = kv::fmt(c.vec_hidden);
    m["model.img_hidden"] = kv::fmt(c.img_hidden);
    m["model.score_hidden"] = kv::fmt(c.score_hidden);
    m["model.roi"] = kv::fmt(c.roi);
    m["model.channels"] = kv::fmt(c.channels);
    m["model.num_beams"] = kv::fmt(c.num_beams);
    m["model.attention_residual"] = kv::fmt(c.attention_residual);
    m["model.per_modality_score_nets"] = kv::fmt(c.per_modality_score_nets);
    m["model.alpha_mode"] = c.alpha_mode == AlphaMode::kLearnable ? "learnable" : "fixed";
    m["model.alpha_fixed"] = kv::fmt(c.alpha_fixed);
    m["model.alpha_init"] = kv::fmt(c.alpha_init);
    m["model.variant"] = variant_name(c.variant);
    return m;
}

inline ModelConfig model_config_from_kv(kv::Reader& r) {
    ModelConfig c;
    c.embed_dim = r.get_size("model.embed_dim", c.embed_dim);
    c.heads = r.get_size("model.heads", c.heads);
    c.vec_hidden = r.get_size("model.vec_hidden", c.vec_hidden);
    c.img_hidden = r.get_size("model.img_hidden", c.img_hidden);
    c.score_hidden = r.get_size("model.score_hidden", c.score_hidden);
    c.roi = r.get_size("model.roi", c.roi);
    c.channels = r.get_size("model.channels", c.channels);
    c.num_beams = r.get_size("model.num_beams", c.num_beams);
    c.attention_residual = r.get_bool("model.attention_residual", c.attention_residual);
    c.per_modality_score_nets =
        r.get_bool("model.per_modality_score_nets", c.per_modality_score_nets);
    const std::string am = r.get_str("model.alpha_mode", "learnable");
    if (am == "learnable")
        c.alpha_mode = AlphaMode::kLearnable;
    else if (am == "fixed")
        c.alpha_mode = AlphaMode::kFixed;
    else
        throw ConfigError("model.alpha_mode must be 'learnable' or 'fixed', got '" + am + "'");
    c.alpha_fixed = r.get_double("model.alpha_fixed", c.alpha_fixed);
    c.alpha_init = r.get_double("model.alpha_init", c.alpha_init);
    c.variant = variant_from_name(r.get_str("model.variant", "sam2b"));
    return c;
}

struct ModelParams {
    ModelConfig config;
    EncoderParams encoders;
    FusionParams fusion;

    /// Every trainable tensor with a stable name (checkpoint order).
    std::vector<std::pair<std::string, ad::Tensor*>> trainables() {
        std::vector<std::pair<std::string, ad::Tensor*>> out;
        auto& img = encoders.image;
        out.emplace_back("enc.img.conv1_w", &img.conv1_w);
        out.emplace_back("enc.img.conv1_b", &img.conv1_b);
        out.emplace_back("enc.img.conv2_w", &img.conv2_w);
        out.emplace_back("enc.img.conv2_b", &img.conv2_b);
        out.emplace_back("enc.img.mlp_w1", &img.mlp_w1);
        out.emplace_back("enc.img.mlp_b1", &img.mlp_b1);
        out.emplace_back("enc.img.mlp_w2", &img.mlp_w2);
        out.emplace_back("enc.img.mlp_b2", &img.mlp_b2);
        out.emplace_back("enc.img.gap_w1", &img.gap_w1);
        out.emplace_back("enc.img.gap_b1", &img.gap_b1);
        out.emplace_back("enc.img.gap_w2", &img.gap_w2);
        out.emplace_back("enc.img.gap_b2", &img.gap_b2);
        auto vec = [&out](const char* name, VectorEncoderParams& p) {
            out.emplace_back(std::string("enc.") + name + ".w1", &p.w1);
            out.emplace_back(std::string("enc.") + name + ".b1", &p.b1);
            out.emplace_back(std::string("enc.") + name + ".w2", &p.w2);
            out.emplace_back(std::string("enc.") + name + ".b2", &p.b2);
        };
        vec("gps", encoders.gps);
        vec("hd", encoders.hd);
        vec("pos", encoders.posture);
        out.emplace_back("fusion.wq", &fusion.wq);
        out.emplace_back("fusion.wk", &fusion.wk);
        out.emplace_back("fusion.wv", &fusion.wv);
        out.emplace_back("fusion.wo", &fusion.wo);
        for (std::size_t i = 0; i < fusion.score_net.size(); ++i) {
            const std::string base = "fusion.score" + std::to_string(i) + ".";
            out.emplace_back(base + "w1", &fusion.score_net[i].w1);
            out.emplace_back(base + "b1", &fusion.score_net[i].b1);
            out.emplace_back(base + "w2", &fusion.score_net[i].w2);
            out.emplace_back(base + "b2", &fusion.score_net[i].b2);
        }
        for (std::size_t i = 0; i < fusion.reliability_net.size(); ++i) {
            const std::string base = "fusion.rel" + std::to_string(i) + ".";
            out.emplace_back(base + "w1", &fusion.reliability_net[i].w1);
            out.emplace_back(base + "b1", &fusion.reliability_net[i].b1);
            out.emplace_back(base + "w2", &fusion.reliability_net[i].w2);
            out.emplace_back(base + "b2", &fusion.reliability_net[i].b2);
        }
        out.emplace_back("fusion.alpha_raw", &fusion.alpha_raw);
        out.emplace_back("fusion.ffn_w1", &fusion.ffn_w1);
        out.emplace_back("fusion.ffn_b1", &fusion.ffn_b1);
        out.emplace_back("fusion.ffn_w2", &fusion.ffn_w2);
        out.emplace_back("fusion.ffn_b2", &fusion.ffn_b2);
        out.emplace_back("fusion.head_w", &fusion.head_w);
        out.emplace_back("fusion.head_b", &fusion.head_b);
        return out;
    }
};

/// Fresh parameters, deterministic in (config, seed). Stats must be fitted
/// separately on the training split.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    Rng rng(derive_seed(seed, "model-init"));
    p.encoders =
        init_encoder_params(cfg.embed_dim, cfg.vec_hidden, cfg.img_hidden, cfg.geometry(), rng);
    p.fusion = init_fusion_params(cfg.fusion(), rng);
    return p;
}

// ---------------------------------------------------------------------------
// Batched forward pass
// ---------------------------------------------------------------------------

struct BatchForward {
    ad::Var logits;                   // [B x Q]
    std::vector<ad::Var> normalized;  // per active modality, [B x E]
    std::vector<Modality> active;
    // Diagnostics (values, not graph nodes), populated on request.
    std::vector<WeightVector> weights;      // per sample, over active modalities
    std::vector<SimilarityMatrix> sims;     // per sample
};

/// Composition of the whole pipeline for one batch: encoders, Eq. 8
/// normalization, per-sample stacking, attention, dynamic (or uniform)
/// weights, FFN fusion and the prediction head.
inline BatchForward model_forward(ad::Tape& tape, ModelParams& params,
                                  std::span<const Sample* const> batch,
                                  bool want_diagnostics = false) {
    if (batch.empty()) throw DimensionError("model_forward: empty batch");
    params.encoders.stats.require_fitted();
    const ModelConfig& mc = params.config;
    const FusionConfig fc = mc.fusion();
    const auto geom = mc.geometry();
    const auto active = active_modalities(mc.variant);
    const std::size_t a = active.size();
    const std::size_t b = batch.size();

    BatchForward out;
    out.active = active;

    // Per-modality embeddings, L2-normalized onto the unit sphere.
    for (Modality m : active) {
        ad::Var emb;
        if (m == Modality::Img) {
            auto rows = encode_image_batch(tape, params.encoders.image, geom, batch,
                                           variant_forces_fallback(mc.variant));
            emb = tape.concat_rows(rows);
        } else {
            VectorEncoderParams& vp = m == Modality::Gps   ? params.encoders.gps
                                      : m == Modality::Hd ? params.encoders.hd
                                                          : params.encoders.posture;
            emb = encode_vector_batch(tape, vp, m, batch, params.encoders.stats);
        }
        out.normalized.push_back(tape.l2_normalize_rows(emb));
    }

    FusionLeaves leaves = make_fusion_leaves(tape, params.fusion, fc);
    const NormStats& stats = params.encoders.stats;

    std::vector<ad::Var> logit_rows;
    logit_rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<ad::Var> rows;
        rows.reserve(a);
        for (std::size_t mi = 0; mi < a; ++mi)
            rows.push_back(tape.slice_rows(out.normalized[mi], i, 1));
        ad::Var f_stack = tape.concat_rows(rows);

        auto att = self_attention(tape, leaves, fc, f_stack);

        ad::Var weight_row;
        if (variant_dynamic_weights(mc.variant)) {
            std::vector<double> cue_data;
            cue_data.reserve(a * 3);
            for (Modality m : active) {
                const auto midx = static_cast<std::size_t>(m);
                const auto& cue = batch[i]->cues.r[midx];
                for (std::size_t d = 0; d < 3; ++d)
                    cue_data.push_back(
                        NormStats::z(cue[d], stats.cue_mean[midx][d], stats.cue_std[midx][d]));
            }
            ad::Var cue_rows = tape.constant({a, 3}, std::move(cue_data));
            weight_row = reliability_weights(tape, leaves, fc, att.out, cue_rows);
        } else {
            weight_row =
                tape.constant({1, a}, std::vector<double>(a, 1.0 / static_cast<double>(a)));
        }

        auto pred = fuse_and_predict(tape, leaves, att.out, weight_row);
        logit_rows.push_back(pred.logits);

        if (want_diagnostics) {
            out.weights.push_back(WeightVector{tape.val(weight_row)});
            std::vector<std::vector<double>> norm_rows;
            for (ad::Var r : rows) norm_rows.push_back(tape.val(r));
            out.sims.push_back(similarity_matrix(norm_rows));
        }
    }
    out.logits = tape.concat_rows(logit_rows);
    return out;
}

struct ModelLoss {
    ad::Var total;
    double task_value = 0.0;
    double align_value = 0.0;
};

/// Task loss plus, when at least two modalities are active and beta > 0, the
/// cross-modal alignment loss.
inline ModelLoss model_loss(ad::Tape& tape, ModelParams& params,
                            std::span<const Sample* const> batch,
                            std::span<const std::size_t> labels, const LossConfig& loss_cfg,
                            BatchForward* forward_out = nullptr) {
    loss_cfg.validate();
    BatchForward fwd = model_forward(tape, params, batch);
    ModelLoss out;
    ad::Var task = task_loss(tape, fwd.logits, labels);
    out.task_value = tape.item(task);
    if (fwd.normalized.size() >= 2 && loss_cfg.beta > 0.0) {
        ad::Var align = alignment_loss(tape, fwd.normalized, loss_cfg.theta);
        out.align_value = tape.item(align);
        out.total = total_loss(tape, task, align, loss_cfg);
    } else {
        out.total = task;
    }
    if (forward_out) *forward_out = std::move(fwd);
    return out;
}

}  // namespace sam2b
