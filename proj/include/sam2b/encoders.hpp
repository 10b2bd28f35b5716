#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sam2b/core.hpp"
#include "sam2b/sensors.hpp"
#include "sam2b/tensor.hpp"

namespace sam2b {

// ---------------------------------------------------------------------------
// ROI cropping
// ---------------------------------------------------------------------------

struct RoiPatch {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<double> data;  // (y, x, c) row-major, values in [0, 1]
    bool clamped = false;      // degenerate bbox was widened to 1 pixel
};

/// Bilinear resampling of the bbox region onto an out_w x out_h grid (one
/// sample per cell). Boxes thinner than one pixel are clamped to a 1-pixel
/// minimum and flagged.
inline RoiPatch roi_crop(const Frame& frame, const BBox& bbox, std::size_t out_w,
                         std::size_t out_h) {
    const auto W = static_cast<double>(frame.width);
    const auto H = static_cast<double>(frame.height);
    RoiPatch patch;
    patch.width = out_w;
    patch.height = out_h;
    patch.channels = frame.channels;
    patch.data.resize(out_w * out_h * frame.channels);

    double bw = bbox.w * W, bh = bbox.h * H;
    double x0 = bbox.x_c * W - bw / 2.0, y0 = bbox.y_c * H - bh / 2.0;
    if (bw < 1.0) {
        bw = 1.0;
        x0 = std::clamp(bbox.x_c * W - 0.5, 0.0, W - 1.0);
        patch.clamped = true;
    }
    if (bh < 1.0) {
        bh = 1.0;
        y0 = std::clamp(bbox.y_c * H - 0.5, 0.0, H - 1.0);
        patch.clamped = true;
    }

    auto sample = [&](double sx, double sy, std::size_t c) {
        sx = std::clamp(sx, 0.0, W - 1.0);
        sy = std::clamp(sy, 0.0, H - 1.0);
        const auto ix = static_cast<std::size_t>(sx);
        const auto iy = static_cast<std::size_t>(sy);
        const auto ix1 = std::min(ix + 1, frame.width - 1);
        const auto iy1 = std::min(iy + 1, frame.height - 1);
        const double fx = sx - static_cast<double>(ix);
        const double fy = sy - static_cast<double>(iy);
        const double v00 = frame.at(iy, ix, c), v01 = frame.at(iy, ix1, c);
        const double v10 = frame.at(iy1, ix, c), v11 = frame.at(iy1, ix1, c);
        return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    };

    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double sy = y0 + (static_cast<double>(oy) + 0.5) * bh / static_cast<double>(out_h) - 0.5;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double sx =
                x0 + (static_cast<double>(ox) + 0.5) * bw / static_cast<double>(out_w) - 0.5;
            for (std::size_t c = 0; c < frame.channels; ++c)
                patch.data[(oy * out_w + ox) * frame.channels + c] = sample(sx, sy, c);
        }
    }
    return patch;
}

// ---------------------------------------------------------------------------
// Normalization statistics (z-score), fitted on the training split only.
// ---------------------------------------------------------------------------

struct NormStats {
    bool fitted = false;
    std::array<double, 2> gps_mean{}, gps_std{};
    std::array<double, 2> hd_mean{}, hd_std{};
    std::array<double, 3> pos_mean{}, pos_std{};
    // Quality cues are network inputs too, so they get the same treatment.
    std::array<std::array<double, 3>, kModalityCount> cue_mean{}, cue_std{};

    static NormStats fit(std::span<const Sample> train) {
        if (train.empty()) throw ConfigError("normalization stats need a nonempty training split");
        NormStats st;
        auto accumulate = [&](auto get, auto& mean, auto& stdv) {
            const std::size_t dim = mean.size();
            for (const Sample& s : train)
                for (std::size_t d = 0; d < dim; ++d) mean[d] += get(s, d);
            for (std::size_t d = 0; d < dim; ++d) mean[d] /= static_cast<double>(train.size());
            for (const Sample& s : train)
                for (std::size_t d = 0; d < dim; ++d) {
                    const double c = get(s, d) - mean[d];
                    stdv[d] += c * c;
                }
            for (std::size_t d = 0; d < dim; ++d)
                stdv[d] = std::sqrt(stdv[d] / static_cast<double>(train.size()));
        };
        accumulate([](const Sample& s, std::size_t d) { return s.gps[d]; }, st.gps_mean,
                   st.gps_std);
        accumulate([](const Sample& s, std::size_t d) { return s.hd[d]; }, st.hd_mean, st.hd_std);
        accumulate([](const Sample& s, std::size_t d) { return s.posture[d]; }, st.pos_mean,
                   st.pos_std);
        for (std::size_t m = 0; m < kModalityCount; ++m)
            accumulate([m](const Sample& s, std::size_t d) { return s.cues.r[m][d]; },
                       st.cue_mean[m], st.cue_std[m]);
        st.fitted = true;
        return st;
    }

    static double z(double x, double mean, double stdv) {
        return (x - mean) / std::max(stdv, 1e-8);
    }

    void require_fitted() const {
        if (!fitted) throw NotFittedError("normalization stats not fitted");
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct VectorEncoderParams {
    ad::Tensor w1, b1, w2, b2;  // input -> hidden (relu) -> E
};

struct ImageEncoderParams {
    // ROI path: two 3x3 stride-2 conv layers (8 then 16 filters) lowered to
    // matmul over extracted patches, then a 2-layer MLP head to E.
    ad::Tensor conv1_w, conv1_b, conv2_w, conv2_b;
    ad::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    // Full-frame fallback: global average pool per channel -> 2-layer MLP.
    ad::Tensor gap_w1, gap_b1, gap_w2, gap_b2;
};

struct EncoderParams {
    ImageEncoderParams image;
    VectorEncoderParams gps, hd, posture;
    NormStats stats;
};

/// Conv stack geometry derived from the ROI size: 3x3 kernels, stride 2.
struct ImageGeometry {
    std::size_t roi = 16;
    std::size_t channels = 3;
    std::size_t conv1_out = 7;   // (roi - 3) / 2 + 1
    std::size_t conv2_out = 3;   // (conv1_out - 3) / 2 + 1
    std::size_t flat_dim = 144;  // conv2_out^2 * 16

    static constexpr std::size_t kKernel = 3;
    static constexpr std::size_t kStride = 2;
    static constexpr std::size_t kFilters1 = 8;
    static constexpr std::size_t kFilters2 = 16;

    static ImageGeometry make(std::size_t roi, std::size_t channels) {
        if (roi < 7) throw ConfigError("image encoder needs roi size >= 7");
        ImageGeometry g;
        g.roi = roi;
        g.channels = channels;
        g.conv1_out = (roi - kKernel) / kStride + 1;
        g.conv2_out = (g.conv1_out - kKernel) / kStride + 1;
        g.flat_dim = g.conv2_out * g.conv2_out * kFilters2;
        return g;
    }
};

namespace detail {

inline ad::Tensor xavier(ad::Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[0]);
    const double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    ad::Tensor t = ad::Tensor::zeros(std::move(shape));
    for (double& v : t.values) v = rng.uniform(-limit, limit);
    t.requires_grad = true;
    return t;
}

inline ad::Tensor zero_bias(std::size_t n) {
    ad::Tensor t = ad::Tensor::zeros({n});
    t.requires_grad = true;
    return t;
}

inline VectorEncoderParams init_vector_encoder(std::size_t in, std::size_t hidden, std::size_t e,
                                               Rng& rng) {
    VectorEncoderParams p;
    p.w1 = xavier({in, hidden}, rng);
    p.b1 = zero_bias(hidden);
    p.w2 = xavier({hidden, e}, rng);
    p.b2 = zero_bias(e);
    return p;
}

}  // namespace detail

inline EncoderParams init_encoder_params(std::size_t e, std::size_t vec_hidden,
                                         std::size_t img_hidden, const ImageGeometry& geom,
                                         Rng& rng) {
    EncoderParams p;
    const std::size_t k2 = ImageGeometry::kKernel * ImageGeometry::kKernel;
    p.image.conv1_w = detail::xavier({k2 * geom.channels, ImageGeometry::kFilters1}, rng);
    p.image.conv1_b = detail::zero_bias(ImageGeometry::kFilters1);
    p.image.conv2_w = detail::xavier({k2 * ImageGeometry::kFilters1, ImageGeometry::kFilters2}, rng);
    p.image.conv2_b = detail::zero_bias(ImageGeometry::kFilters2);
    p.image.mlp_w1 = detail::xavier({geom.flat_dim, img_hidden}, rng);
    p.image.mlp_b1 = detail::zero_bias(img_hidden);
    p.image.mlp_w2 = detail::xavier({img_hidden, e}, rng);
    p.image.mlp_b2 = detail::zero_bias(e);
    p.image.gap_w1 = detail::xavier({geom.channels, vec_hidden}, rng);
    p.image.gap_b1 = detail::zero_bias(vec_hidden);
    p.image.gap_w2 = detail::xavier({vec_hidden, e}, rng);
    p.image.gap_b2 = detail::zero_bias(e);
    p.gps = detail::init_vector_encoder(2, vec_hidden, e, rng);
    p.hd = detail::init_vector_encoder(2, vec_hidden, e, rng);
    p.posture = detail::init_vector_encoder(3, vec_hidden, e, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

inline std::size_t vector_field_arity(Modality m) {
    switch (m) {
        case Modality::Gps:
        case Modality::Hd:
            return 2;
        case Modality::Pos:
            return 3;
        default:
            throw ConfigError("image modality has no vector arity");
    }
}

namespace detail {

inline std::vector<double> normalized_vector_input(Modality field, std::span<const double> x,
                                                   const NormStats& stats) {
    stats.require_fitted();
    if (x.size() != vector_field_arity(field))
        throw DimensionError(std::string(kModalityNames[static_cast<std::size_t>(field)]) +
                             " encoder expects arity " +
                             std::to_string(vector_field_arity(field)) + ", got " +
                             std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        switch (field) {
            case Modality::Gps: out[d] = NormStats::z(x[d], stats.gps_mean[d], stats.gps_std[d]); break;
            case Modality::Hd: out[d] = NormStats::z(x[d], stats.hd_mean[d], stats.hd_std[d]); break;
            case Modality::Pos: out[d] = NormStats::z(x[d], stats.pos_mean[d], stats.pos_std[d]); break;
            default: break;
        }
    }
    return out;
}

inline std::span<const double> vector_field_of(const Sample& s, Modality field) {
    switch (field) {
        case Modality::Gps: return {s.gps.data(), s.gps.size()};
        case Modality::Hd: return {s.hd.data(), s.hd.size()};
        case Modality::Pos: return {s.posture.data(), s.posture.size()};
        default: throw ConfigError("image modality is not a vector field");
    }
}

}  // namespace detail

/// Two-layer MLP over the z-scored vector field; returns [B x E].
inline ad::Var encode_vector_batch(ad::Tape& tape, VectorEncoderParams& params, Modality field,
                                   std::span<const Sample* const> batch, const NormStats& stats) {
    const std::size_t arity = vector_field_arity(field);
    std::vector<double> in;
    in.reserve(batch.size() * arity);
    for (const Sample* s : batch) {
        const auto norm = detail::normalized_vector_input(field, detail::vector_field_of(*s, field), stats);
        in.insert(in.end(), norm.begin(), norm.end());
    }
    ad::Var x = tape.constant({batch.size(), arity}, std::move(in));
    ad::Var h = tape.relu(tape.add_row_bias(tape.matmul(x, tape.leaf(params.w1)), tape.leaf(params.b1)));
    return tape.add_row_bias(tape.matmul(h, tape.leaf(params.w2)), tape.leaf(params.b2));
}

/// ROI conv path for the sub-batch of samples with a bbox, global-average-
/// pool fallback for the rest; returns one [1 x E] row per sample, in batch
/// order. force_fallback routes every sample through the full-frame path.
inline std::vector<ad::Var> encode_image_batch(ad::Tape& tape, ImageEncoderParams& params,
                                               const ImageGeometry& geom,
                                               std::span<const Sample* const> batch,
                                               bool force_fallback = false) {
    constexpr std::size_t kK = ImageGeometry::kKernel;
    constexpr std::size_t kS = ImageGeometry::kStride;
    constexpr std::size_t kF1 = ImageGeometry::kFilters1;
    constexpr std::size_t kF2 = ImageGeometry::kFilters2;

    std::vector<std::size_t> conv_samples, gap_samples;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!force_fallback && batch[i]->bbox.has_value())
            conv_samples.push_back(i);
        else
            gap_samples.push_back(i);
    }

    std::vector<ad::Var> rows(batch.size());

    if (!conv_samples.empty()) {
        const std::size_t b1 = conv_samples.size();
        const std::size_t o1 = geom.conv1_out, o2 = geom.conv2_out;
        const std::size_t cols1 = kK * kK * geom.channels;

        // First-layer patch extraction happens on raw input data.
        std::vector<double> x1(b1 * o1 * o1 * cols1);
        for (std::size_t bi = 0; bi < b1; ++bi) {
            const Sample& s = *batch[conv_samples[bi]];
            if (s.frame.channels != geom.channels)
                throw DimensionError("image encoder configured for " +
                                     std::to_string(geom.channels) + " channels, frame has " +
                                     std::to_string(s.frame.channels));
            const RoiPatch patch = roi_crop(s.frame, *s.bbox, geom.roi, geom.roi);
            for (std::size_t oy = 0; oy < o1; ++oy)
                for (std::size_t ox = 0; ox < o1; ++ox) {
                    const std::size_t row = (bi * o1 * o1) + oy * o1 + ox;
                    for (std::size_t dy = 0; dy < kK; ++dy)
                        for (std::size_t dx = 0; dx < kK; ++dx)
                            for (std::size_t c = 0; c < geom.channels; ++c) {
                                const std::size_t iy = oy * kS + dy, ix = ox * kS + dx;
                                x1[row * cols1 + (dy * kK + dx) * geom.channels + c] =
                                    patch.data[(iy * geom.roi + ix) * geom.channels + c];
                            }
                }
        }
        ad::Var v1 = tape.constant({b1 * o1 * o1, cols1}, std::move(x1));
        ad::Var y1 = tape.relu(tape.add_row_bias(tape.matmul(v1, tape.leaf(params.conv1_w)),
                                                 tape.leaf(params.conv1_b)));

        // Second-layer patches gather from the differentiable conv1 output.
        const std::size_t cols2 = kK * kK * kF1;
        std::vector<std::size_t> idx;
        idx.reserve(b1 * o2 * o2 * cols2);
        for (std::size_t bi = 0; bi < b1; ++bi)
            for (std::size_t oy = 0; oy < o2; ++oy)
                for (std::size_t ox = 0; ox < o2; ++ox)
                    for (std::size_t dy = 0; dy < kK; ++dy)
                        for (std::size_t dx = 0; dx < kK; ++dx)
                            for (std::size_t c = 0; c < kF1; ++c) {
                                const std::size_t iy = oy * kS + dy, ix = ox * kS + dx;
                                idx.push_back(((bi * o1 * o1) + iy * o1 + ix) * kF1 + c);
                            }
        ad::Var v2 = tape.gather(y1, std::move(idx), {b1 * o2 * o2, cols2});
        ad::Var y2 = tape.relu(tape.add_row_bias(tape.matmul(v2, tape.leaf(params.conv2_w)),
                                                 tape.leaf(params.conv2_b)));
        // Rows are ordered (sample, position), so each sample's activations
        // are contiguous and reshape to [b1 x flat] without copying order.
        ad::Var flat = tape.reshape(y2, {b1, o2 * o2 * kF2});
        ad::Var h = tape.relu(tape.add_row_bias(tape.matmul(flat, tape.leaf(params.mlp_w1)),
                                                tape.leaf(params.mlp_b1)));
        ad::Var emb = tape.add_row_bias(tape.matmul(h, tape.leaf(params.mlp_w2)),
                                        tape.leaf(params.mlp_b2));
        for (std::size_t bi = 0; bi < b1; ++bi)
            rows[conv_samples[bi]] = tape.slice_rows(emb, bi, 1);
    }

    if (!gap_samples.empty()) {
        const std::size_t b2 = gap_samples.size();
        std::vector<double> pooled(b2 * geom.channels, 0.0);
        for (std::size_t bi = 0; bi < b2; ++bi) {
            const Frame& f = batch[gap_samples[bi]]->frame;
            if (f.channels != geom.channels)
                throw DimensionError("image encoder configured for " +
                                     std::to_string(geom.channels) + " channels, frame has " +
                                     std::to_string(f.channels));
            const double inv = 1.0 / static_cast<double>(f.width * f.height);
            for (std::size_t ypx = 0; ypx < f.height; ++ypx)
                for (std::size_t xpx = 0; xpx < f.width; ++xpx)
                    for (std::size_t c = 0; c < f.channels; ++c)
                        pooled[bi * geom.channels + c] += f.at(ypx, xpx, c) * inv;
        }
        ad::Var v = tape.constant({b2, geom.channels}, std::move(pooled));
        ad::Var h = tape.relu(tape.add_row_bias(tape.matmul(v, tape.leaf(params.gap_w1)),
                                                tape.leaf(params.gap_b1)));
        ad::Var emb = tape.add_row_bias(tape.matmul(h, tape.leaf(params.gap_w2)),
                                        tape.leaf(params.gap_b2));
        for (std::size_t bi = 0; bi < b2; ++bi)
            rows[gap_samples[bi]] = tape.slice_rows(emb, bi, 1);
    }

    return rows;
}

// ---------------------------------------------------------------------------
// Single-sample conveniences (values only)
// ---------------------------------------------------------------------------

inline ad::Tensor encode_vector(Modality field, std::span<const double> x,
                                VectorEncoderParams& params, const NormStats& stats) {
    ad::Tape tape;
    Sample probe;
    switch (field) {
        case Modality::Gps: probe.gps = {x.size() > 0 ? x[0] : 0, x.size() > 1 ? x[1] : 0}; break;
        case Modality::Hd: probe.hd = {x.size() > 0 ? x[0] : 0, x.size() > 1 ? x[1] : 0}; break;
        case Modality::Pos:
            probe.posture = {x.size() > 0 ? x[0] : 0, x.size() > 1 ? x[1] : 0,
                             x.size() > 2 ? x[2] : 0};
            break;
        default: throw ConfigError("image modality is not a vector field");
    }
    // Arity check happens against the raw input, not the padded probe.
    const auto norm = detail::normalized_vector_input(field, x, stats);
    ad::Var in = tape.constant({1, norm.size()}, std::vector<double>(norm));
    ad::Var h = tape.relu(
        tape.add_row_bias(tape.matmul(in, tape.leaf(params.w1)), tape.leaf(params.b1)));
    ad::Var out = tape.add_row_bias(tape.matmul(h, tape.leaf(params.w2)), tape.leaf(params.b2));
    return ad::Tensor({tape.val(out).size()}, tape.val(out));
}

inline ad::Tensor encode_image(const Sample& s, ImageEncoderParams& params,
                               const ImageGeometry& geom, bool force_fallback = false) {
    ad::Tape tape;
    const Sample* ptr = &s;
    auto rows = encode_image_batch(tape, params, geom, {&ptr, 1}, force_fallback);
    return ad::Tensor({tape.val(rows[0]).size()}, tape.val(rows[0]));
}

/// All four embeddings for one sample, raw and L2-normalized, in the fixed
/// (Img, GPS, HD, Pos) order.
struct EmbeddingSet {
    std::array<ad::Tensor, kModalityCount> embedding;
    std::array<ad::Tensor, kModalityCount> normalized;
};

inline EmbeddingSet embed_sample(const Sample& s, EncoderParams& params,
                                 const ImageGeometry& geom, bool force_fallback = false) {
    EmbeddingSet out;
    out.embedding[static_cast<std::size_t>(Modality::Img)] =
        encode_image(s, params.image, geom, force_fallback);
    out.embedding[static_cast<std::size_t>(Modality::Gps)] =
        encode_vector(Modality::Gps, {s.gps.data(), 2}, params.gps, params.stats);
    out.embedding[static_cast<std::size_t>(Modality::Hd)] =
        encode_vector(Modality::Hd, {s.hd.data(), 2}, params.hd, params.stats);
    out.embedding[static_cast<std::size_t>(Modality::Pos)] =
        encode_vector(Modality::Pos, {s.posture.data(), 3}, params.posture, params.stats);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        ad::Tape tape;
        ad::Var n = tape.l2_normalize_rows(tape.constant(out.embedding[m]));
        out.normalized[m] = ad::Tensor({tape.val(n).size()}, tape.val(n));
    }
    return out;
}

}  // namespace sam2b
