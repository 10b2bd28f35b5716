#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sam2b/core.hpp"
#include "sam2b/encoders.hpp"
#include "sam2b/tensor.hpp"

namespace sam2b {

enum class AlphaMode { kLearnable, kFixed };

struct FusionConfig {
    std::size_t embed_dim = 64;  // E
    std::size_t heads = 4;       // H, must divide E
    std::size_t score_hidden = 16;
    std::size_t num_beams = 32;  // Q
    bool attention_residual = true;   // keeps modality rows from collapsing
    bool per_modality_score_nets = false;  // default: shared nets
    AlphaMode alpha_mode = AlphaMode::kLearnable;
    double alpha_fixed = 0.5;    // used when alpha_mode == kFixed
    double alpha_init = 0.5;     // sigmoid(raw) initialization target
    double zscore_eps = 1e-6;    // floor on the cross-modality score std

    void validate() const {
        if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
            throw ConfigError("fusion: heads must divide embed_dim");
        if (alpha_fixed < 0.0 || alpha_fixed > 1.0)
            throw ConfigError("fusion: alpha must lie in [0, 1]");
        if (num_beams == 0) throw ConfigError("fusion: num_beams must be >= 1");
    }
};

struct ScoreNetParams {
    ad::Tensor w1, b1, w2, b2;  // in -> hidden (relu) -> 1
};

struct FusionParams {
    ad::Tensor wq, wk, wv, wo;                  // attention projections, E x E
    std::vector<ScoreNetParams> score_net;      // MLP_s on attention rows; 1 shared or 4
    std::vector<ScoreNetParams> reliability_net;  // MLP_c on quality cues; 1 shared or 4
    ad::Tensor alpha_raw;                       // unconstrained; alpha = sigmoid(raw)
    ad::Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // E -> 2E -> E
    ad::Tensor head_w, head_b;                  // E -> Q
};

namespace detail {

inline ScoreNetParams init_score_net(std::size_t in, std::size_t hidden, Rng& rng) {
    ScoreNetParams p;
    p.w1 = xavier({in, hidden}, rng);
    p.b1 = zero_bias(hidden);
    p.w2 = xavier({hidden, 1}, rng);
    p.b2 = zero_bias(1);
    return p;
}

}  // namespace detail

inline FusionParams init_fusion_params(const FusionConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t e = cfg.embed_dim;
    FusionParams p;
    p.wq = detail::xavier({e, e}, rng);
    p.wk = detail::xavier({e, e}, rng);
    p.wv = detail::xavier({e, e}, rng);
    p.wo = detail::xavier({e, e}, rng);
    const std::size_t nets = cfg.per_modality_score_nets ? kModalityCount : 1;
    for (std::size_t i = 0; i < nets; ++i) {
        p.score_net.push_back(detail::init_score_net(e, cfg.score_hidden, rng));
        p.reliability_net.push_back(detail::init_score_net(3, cfg.score_hidden, rng));
    }
    // sigmoid(raw) == alpha_init
    const double a = std::clamp(cfg.alpha_init, 1e-6, 1.0 - 1e-6);
    p.alpha_raw = ad::Tensor({1}, {std::log(a / (1.0 - a))});
    p.alpha_raw.requires_grad = true;
    p.ffn_w1 = detail::xavier({e, 2 * e}, rng);
    p.ffn_b1 = detail::zero_bias(2 * e);
    p.ffn_w2 = detail::xavier({2 * e, e}, rng);
    p.ffn_b2 = detail::zero_bias(e);
    p.head_w = detail::xavier({e, cfg.num_beams}, rng);
    p.head_b = detail::zero_bias(cfg.num_beams);
    return p;
}

// ---------------------------------------------------------------------------
// Diagnostics types
// ---------------------------------------------------------------------------

/// Pairwise cosine similarities between (unit-norm) modality embeddings.
struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> s;  // row-major n x n

    double at(std::size_t i, std::size_t j) const { return s[i * n + j]; }
};

inline SimilarityMatrix similarity_matrix(std::span<const std::vector<double>> normalized_rows) {
    SimilarityMatrix m;
    m.n = normalized_rows.size();
    m.s.assign(m.n * m.n, 0.0);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < normalized_rows[i].size(); ++k)
                d += normalized_rows[i][k] * normalized_rows[j][k];
            m.s[i * m.n + j] = d;
        }
    return m;
}

inline SimilarityMatrix similarity_matrix(const EmbeddingSet& embs) {
    std::vector<std::vector<double>> rows;
    for (const auto& t : embs.normalized) rows.push_back(t.values);
    return similarity_matrix(rows);
}

/// Convex combination over modalities (Eq. 14 output).
struct WeightVector {
    std::vector<double> w;

    bool on_simplex(double tol = 1e-9) const {
        double sum = 0.0;
        for (double x : w) {
            if (x < 0.0) return false;
            sum += x;
        }
        return std::abs(sum - 1.0) <= tol;
    }
};

// ---------------------------------------------------------------------------
// Graph builders. FusionLeaves pins every parameter tensor onto the tape once
// per forward pass; the per-sample builders then reuse the same Vars.
// ---------------------------------------------------------------------------

struct FusionLeaves {
    ad::Var wq, wk, wv, wo;
    std::vector<std::array<ad::Var, 4>> score_net;        // w1, b1, w2, b2
    std::vector<std::array<ad::Var, 4>> reliability_net;  // w1, b1, w2, b2
    ad::Var alpha;            // [1], in [0, 1]
    ad::Var one_minus_alpha;  // [1]
    ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Var head_w, head_b;
};

inline FusionLeaves make_fusion_leaves(ad::Tape& tape, FusionParams& p, const FusionConfig& cfg) {
    FusionLeaves l;
    l.wq = tape.leaf(p.wq);
    l.wk = tape.leaf(p.wk);
    l.wv = tape.leaf(p.wv);
    l.wo = tape.leaf(p.wo);
    for (auto& net : p.score_net)
        l.score_net.push_back(
            {tape.leaf(net.w1), tape.leaf(net.b1), tape.leaf(net.w2), tape.leaf(net.b2)});
    for (auto& net : p.reliability_net)
        l.reliability_net.push_back(
            {tape.leaf(net.w1), tape.leaf(net.b1), tape.leaf(net.w2), tape.leaf(net.b2)});
    if (cfg.alpha_mode == AlphaMode::kLearnable)
        l.alpha = tape.sigmoid(tape.leaf(p.alpha_raw));
    else
        l.alpha = tape.scalar(cfg.alpha_fixed);
    l.one_minus_alpha = tape.sub(tape.scalar(1.0), l.alpha);
    l.ffn_w1 = tape.leaf(p.ffn_w1);
    l.ffn_b1 = tape.leaf(p.ffn_b1);
    l.ffn_w2 = tape.leaf(p.ffn_w2);
    l.ffn_b2 = tape.leaf(p.ffn_b2);
    l.head_w = tape.leaf(p.head_w);
    l.head_b = tape.leaf(p.head_b);
    return l;
}

struct AttentionResult {
    ad::Var out;                                  // [A x E]
    std::vector<std::vector<double>> head_probs;  // per head, row-major A x A
};

/// Multi-head self-attention over the stacked modality rows: queries, keys
/// and values all derive from F; scaled dot-product per head, heads
/// concatenated and projected back. A residual connection preserves modality
/// identity (toggleable).
inline AttentionResult self_attention(ad::Tape& tape, const FusionLeaves& l,
                                      const FusionConfig& cfg, ad::Var f_stack) {
    const auto& shape = tape.shape(f_stack);
    if (shape.size() != 2 || shape[1] != cfg.embed_dim)
        throw DimensionError("self_attention: expected [A x " + std::to_string(cfg.embed_dim) +
                             "], got " + ad::shape_str(shape));
    const std::size_t dh = cfg.embed_dim / cfg.heads;

    ad::Var q = tape.matmul(f_stack, l.wq);
    ad::Var k = tape.matmul(f_stack, l.wk);
    ad::Var v = tape.matmul(f_stack, l.wv);

    AttentionResult res;
    std::vector<ad::Var> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        ad::Var qh = tape.slice_cols(q, h * dh, dh);
        ad::Var kh = tape.slice_cols(k, h * dh, dh);
        ad::Var vh = tape.slice_cols(v, h * dh, dh);
        ad::Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                                    1.0 / std::sqrt(static_cast<double>(dh)));
        ad::Var probs = tape.row_softmax(scores);
        res.head_probs.push_back(tape.val(probs));
        heads.push_back(tape.matmul(probs, vh));
    }
    ad::Var concat = tape.concat_cols(heads);
    ad::Var projected = tape.matmul(concat, l.wo);
    res.out = cfg.attention_residual ? tape.add(projected, f_stack) : projected;
    return res;
}

namespace detail {

inline ad::Var score_mlp(ad::Tape& tape, const std::array<ad::Var, 4>& net, ad::Var rows) {
    ad::Var h = tape.relu(tape.add_row_bias(tape.matmul(rows, net[0]), net[1]));
    return tape.add_row_bias(tape.matmul(h, net[2]), net[3]);  // [A x 1]
}

/// Applies either the shared net to all rows or net s to row s.
inline ad::Var per_modality_scores(ad::Tape& tape, const std::vector<std::array<ad::Var, 4>>& nets,
                                   ad::Var rows, std::size_t n_rows) {
    if (nets.size() == 1) return score_mlp(tape, nets[0], rows);
    std::vector<ad::Var> parts;
    for (std::size_t s = 0; s < n_rows; ++s)
        parts.push_back(score_mlp(tape, nets[s % nets.size()], tape.slice_rows(rows, s, 1)));
    return tape.concat_rows(parts);
}

/// Z-score across the modality axis with an eps-guarded std (Eq. 13's phi).
inline ad::Var zscore_across_rows(ad::Tape& tape, ad::Var col, std::size_t n, double eps) {
    const double inv_n = 1.0 / static_cast<double>(n);
    ad::Var mean = tape.scale(tape.sum(col), inv_n);
    ad::Var centered = tape.sub(col, tape.broadcast_scalar(mean, {n, 1}));
    ad::Var var = tape.scale(tape.sum(tape.mul(centered, centered)), inv_n);
    ad::Var std_guarded = tape.sqrt_op(tape.add(var, tape.scalar(eps * eps)));
    return tape.scale_by(centered, tape.reciprocal(std_guarded));
}

}  // namespace detail

/// Reliability-aware dynamic weights: attention score f_s = MLP_s(v_s),
/// reliability score c_s = MLP_c(r_s), blended via alpha and softmaxed into a
/// convex combination (Eqs. 11-14). cue_rows is the [A x 3] constant of
/// z-scored quality cues. Returns the weight row [1 x A].
inline ad::Var reliability_weights(ad::Tape& tape, const FusionLeaves& l, const FusionConfig& cfg,
                                   ad::Var f_att, ad::Var cue_rows) {
    const std::size_t a = tape.shape(f_att)[0];
    if (tape.shape(cue_rows)[0] != a)
        throw DimensionError("reliability_weights: " + std::to_string(a) + " modality rows vs " +
                             std::to_string(tape.shape(cue_rows)[0]) + " cue rows");
    ad::Var f_scores = detail::per_modality_scores(tape, l.score_net, f_att, a);       // [A x 1]
    ad::Var c_scores = detail::per_modality_scores(tape, l.reliability_net, cue_rows, a);
    ad::Var phi = detail::zscore_across_rows(tape, c_scores, a, cfg.zscore_eps);
    ad::Var blended =
        tape.add(tape.scale_by(f_scores, l.alpha), tape.scale_by(phi, l.one_minus_alpha));
    return tape.row_softmax(tape.transpose(blended));  // [1 x A]
}

struct FusePrediction {
    ad::Var fused;   // Z, [1 x E]
    ad::Var logits;  // [1 x Q]
};

/// Weighted fusion of the attention rows, position-wise FFN refinement and
/// the beam prediction head (Eq. 15).
inline FusePrediction fuse_and_predict(ad::Tape& tape, const FusionLeaves& l, ad::Var f_att,
                                       ad::Var weight_row) {
    ad::Var mixed = tape.matmul(weight_row, f_att);  // [1 x E]
    ad::Var h = tape.relu(tape.add_row_bias(tape.matmul(mixed, l.ffn_w1), l.ffn_b1));
    ad::Var z = tape.add_row_bias(tape.matmul(h, l.ffn_w2), l.ffn_b2);
    ad::Var logits = tape.add_row_bias(tape.matmul(z, l.head_w), l.head_b);
    return {z, logits};
}

/// Lowest-index argmax, matching the oracle's tie-break rule.
inline std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Value-level conveniences mirroring the per-operation contracts. The model
// and trainer use the graph builders directly.
// ---------------------------------------------------------------------------

inline ad::Tensor self_attention_values(const ad::Tensor& f_stack, FusionParams& params,
                                        const FusionConfig& cfg,
                                        std::vector<std::vector<double>>* head_probs = nullptr) {
    ad::Tape tape;
    FusionLeaves l = make_fusion_leaves(tape, params, cfg);
    auto res = self_attention(tape, l, cfg, tape.constant(f_stack));
    if (head_probs) *head_probs = res.head_probs;
    return ad::Tensor(tape.shape(res.out), tape.val(res.out));
}

inline WeightVector reliability_weights_values(const ad::Tensor& f_att,
                                               const std::vector<std::array<double, 3>>& cues,
                                               FusionParams& params, const FusionConfig& cfg) {
    ad::Tape tape;
    FusionLeaves l = make_fusion_leaves(tape, params, cfg);
    std::vector<double> cue_data;
    for (const auto& c : cues) cue_data.insert(cue_data.end(), c.begin(), c.end());
    ad::Var cue_rows = tape.constant({cues.size(), 3}, std::move(cue_data));
    ad::Var w = reliability_weights(tape, l, cfg, tape.constant(f_att), cue_rows);
    return WeightVector{tape.val(w)};
}

struct FusePredictionValues {
    ad::Tensor fused;
    ad::Tensor logits;
    std::size_t beam;
};

inline FusePredictionValues fuse_and_predict_values(const ad::Tensor& f_att,
                                                    const WeightVector& w, FusionParams& params,
                                                    const FusionConfig& cfg) {
    if (w.w.size() != f_att.rows())
        throw DimensionError("fuse_and_predict: " + std::to_string(w.w.size()) + " weights for " +
                             std::to_string(f_att.rows()) + " rows");
    ad::Tape tape;
    FusionLeaves l = make_fusion_leaves(tape, params, cfg);
    ad::Var wrow = tape.constant({1, w.w.size()}, std::vector<double>(w.w));
    auto res = fuse_and_predict(tape, l, tape.constant(f_att), wrow);
    return {ad::Tensor(tape.shape(res.fused), tape.val(res.fused)),
            ad::Tensor(tape.shape(res.logits), tape.val(res.logits)),
            argmax_lowest(tape.val(res.logits))};
}

}  // namespace sam2b
