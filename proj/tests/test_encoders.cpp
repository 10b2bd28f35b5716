#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sam2b/encoders.hpp"
#include "sam2b/gradcheck.hpp"

using namespace sam2b;

namespace {

Frame checkerboard4() {
    Frame f = Frame::blank(4, 4, 1);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) f.at(y, x, 0) = static_cast<float>((x + y) % 2);
    return f;
}

Sample sample_with_frame(Frame f, bool with_bbox) {
    Sample s;
    s.frame = std::move(f);
    if (with_bbox) s.bbox = BBox{0.5, 0.5, 0.5, 0.5};
    s.gps = {10.0, -5.0};
    s.hd = {8.0, 11.0};
    s.posture = {0.01, -0.02, 0.5};
    return s;
}

NormStats quick_stats() {
    std::vector<Sample> train;
    Rng rng(3);
    for (int i = 0; i < 8; ++i) {
        Sample s;
        s.gps = {rng.gaussian(0, 5), rng.gaussian(0, 5)};
        s.hd = {rng.uniform(1, 20), rng.uniform(5, 40)};
        s.posture = {rng.gaussian(0, 0.1), rng.gaussian(0, 0.1), rng.gaussian(0, 1)};
        train.push_back(s);
    }
    return NormStats::fit(train);
}

}  // namespace

TEST_CASE("roi_crop of the full frame is an identity copy", "[encoders]") {
    Frame f = checkerboard4();
    RoiPatch p = roi_crop(f, BBox{0.5, 0.5, 1.0, 1.0}, 4, 4);
    CHECK_FALSE(p.clamped);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(p.data[i] == Catch::Approx(static_cast<double>(f.data[i])).margin(1e-12));
}

TEST_CASE("roi_crop preserves constant frames", "[encoders]") {
    Frame f = Frame::blank(6, 5, 2);
    for (auto& v : f.data) v = 0.37f;
    RoiPatch p = roi_crop(f, BBox{0.4, 0.6, 0.5, 0.3}, 3, 3);
    for (double v : p.data) CHECK(v == Catch::Approx(0.37).margin(1e-6));
}

TEST_CASE("roi_crop matches the hand-computed bilinear oracle", "[encoders]") {
    // 4x4 checkerboard, center-half box, 2x2 output: samples land exactly on
    // pixels (1,1), (1,2), (2,1), (2,2).
    RoiPatch p = roi_crop(checkerboard4(), BBox{0.5, 0.5, 0.5, 0.5}, 2, 2);
    CHECK(p.data == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("degenerate bbox is clamped to one pixel and flagged", "[encoders]") {
    Frame f = checkerboard4();
    RoiPatch p = roi_crop(f, BBox{0.5, 0.5, 0.01, 0.4}, 2, 2);
    CHECK(p.clamped);
    for (double v : p.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("zero patch with zero biases encodes to the zero embedding", "[encoders]") {
    Rng rng(11);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 8, 8, geom, rng);
    Sample s = sample_with_frame(Frame::blank(32, 32, 3), true);
    ad::Tensor emb = encode_image(s, params.image, geom);
    for (double v : emb.values) CHECK(v == 0.0);
}

TEST_CASE("image encoding is deterministic", "[encoders]") {
    Rng rng(12);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 8, 8, geom, rng);
    auto res = render_frame(UAVState{{14, 3, 6}}, CameraConfig{}, 5);
    Sample s = sample_with_frame(res.frame, false);
    s.bbox = res.bbox;
    ad::Tensor a = encode_image(s, params.image, geom);
    ad::Tensor b = encode_image(s, params.image, geom);
    CHECK(a.values == b.values);
}

TEST_CASE("image encoder gradients match finite differences", "[encoders]") {
    Rng rng(13);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(8, 8, 8, geom, rng);
    auto res = render_frame(UAVState{{12, -4, 7}}, CameraConfig{}, 9);
    REQUIRE(res.bbox.has_value());
    Sample s = sample_with_frame(res.frame, false);
    s.bbox = res.bbox;
    const Sample* ptr = &s;

    auto& ip = params.image;
    std::vector<ad::Tensor*> ws{&ip.conv1_w, &ip.conv1_b, &ip.conv2_w, &ip.conv2_b,
                                &ip.mlp_w1,  &ip.mlp_b1,  &ip.mlp_w2,  &ip.mlp_b2};
    const double err = ad::check_gradients(ws, [&](ad::Tape& tp) {
        auto rows = encode_image_batch(tp, ip, geom, {&ptr, 1});
        return tp.sum(tp.mul(rows[0], rows[0]));
    });
    CHECK(err < 1e-4);

    // Fallback path gradients too.
    std::vector<ad::Tensor*> gws{&ip.gap_w1, &ip.gap_b1, &ip.gap_w2, &ip.gap_b2};
    const double gerr = ad::check_gradients(gws, [&](ad::Tape& tp) {
        auto rows = encode_image_batch(tp, ip, geom, {&ptr, 1}, true);
        return tp.sum(tp.mul(rows[0], rows[0]));
    });
    CHECK(gerr < 1e-4);
}

TEST_CASE("vector encoder at the training mean with zero biases is zero", "[encoders]") {
    Rng rng(14);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 32, 8, geom, rng);
    params.stats = quick_stats();
    const std::array<double, 2> x = params.stats.gps_mean;
    ad::Tensor emb = encode_vector(Modality::Gps, {x.data(), 2}, params.gps, params.stats);
    for (double v : emb.values) CHECK(v == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("vector encoder rejects wrong arity", "[encoders]") {
    Rng rng(15);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 32, 8, geom, rng);
    params.stats = quick_stats();
    const std::array<double, 2> x{0.1, 0.2};
    CHECK_THROWS_AS(encode_vector(Modality::Pos, {x.data(), 2}, params.posture, params.stats),
                    DimensionError);
}

TEST_CASE("vector encoder requires fitted stats", "[encoders]") {
    Rng rng(16);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 32, 8, geom, rng);
    const std::array<double, 2> x{0.1, 0.2};
    CHECK_THROWS_AS(encode_vector(Modality::Gps, {x.data(), 2}, params.gps, params.stats),
                    NotFittedError);
}

TEST_CASE("vector encoder gradients match finite differences", "[encoders]") {
    Rng rng(17);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(8, 16, 8, geom, rng);
    params.stats = quick_stats();
    Sample s = sample_with_frame(Frame::blank(4, 4, 3), false);
    const Sample* ptr = &s;
    std::vector<ad::Tensor*> ws{&params.gps.w1, &params.gps.b1, &params.gps.w2, &params.gps.b2};
    const double err = ad::check_gradients(ws, [&](ad::Tape& tp) {
        ad::Var e = encode_vector_batch(tp, params.gps, Modality::Gps, {&ptr, 1}, params.stats);
        return tp.sum(tp.mul(e, e));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("embed_sample produces four unit-norm embeddings in fixed order", "[encoders]") {
    Rng rng(18);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(32, 16, 16, geom, rng);
    params.stats = quick_stats();
    auto res = render_frame(UAVState{{14, 3, 6}}, CameraConfig{}, 5);
    Sample s = sample_with_frame(res.frame, false);
    s.bbox = res.bbox;

    // The modality ordering is a fixed contract.
    CHECK(kModalityNames == std::array<const char*, 4>{"img", "gps", "hd", "pos"});
    CHECK(static_cast<std::size_t>(Modality::Img) == 0);
    CHECK(static_cast<std::size_t>(Modality::Pos) == 3);

    EmbeddingSet es = embed_sample(s, params, geom);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        double norm = 0.0;
        for (double v : es.normalized[m].values) norm += v * v;
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
    }

    // Without a bbox the image path falls back to the pooled encoder and the
    // invariant still holds.
    s.bbox.reset();
    EmbeddingSet fb = embed_sample(s, params, geom);
    double norm = 0.0;
    for (double v : fb.normalized[0].values) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
    CHECK(fb.embedding[0].values != es.embedding[0].values);
}

TEST_CASE("encoders are pure functions of input and params", "[encoders]") {
    Rng rng(19);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 16, 16, geom, rng);
    params.stats = quick_stats();
    auto res = render_frame(UAVState{{10, 2, 4}}, CameraConfig{}, 7);
    Sample s = sample_with_frame(res.frame, false);
    s.bbox = res.bbox;
    EmbeddingSet a = embed_sample(s, params, geom);
    EmbeddingSet b = embed_sample(s, params, geom);
    for (std::size_t m = 0; m < kModalityCount; ++m) {
        CHECK(a.embedding[m].values == b.embedding[m].values);
        CHECK(a.normalized[m].values == b.normalized[m].values);
    }
}

TEST_CASE("applying stats to new data never mutates them", "[encoders]") {
    auto stats = quick_stats();
    const auto snapshot_mean = stats.gps_mean;
    const auto snapshot_std = stats.gps_std;
    Rng rng(20);
    auto geom = ImageGeometry::make(16, 3);
    EncoderParams params = init_encoder_params(16, 16, 16, geom, rng);
    params.stats = stats;
    for (int i = 0; i < 5; ++i) {
        const std::array<double, 2> x{100.0 + i, -50.0 * i};
        encode_vector(Modality::Gps, {x.data(), 2}, params.gps, params.stats);
    }
    CHECK(params.stats.gps_mean == snapshot_mean);
    CHECK(params.stats.gps_std == snapshot_std);
}
