#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sam2b/fusion.hpp"
#include "sam2b/gradcheck.hpp"

using namespace sam2b;

namespace {

FusionConfig small_cfg() {
    FusionConfig cfg;
    cfg.embed_dim = 8;
    cfg.heads = 4;
    cfg.score_hidden = 8;
    cfg.num_beams = 4;
    return cfg;
}

ad::Tensor random_stack(std::size_t rows, std::size_t e, Rng& rng) {
    ad::Tensor t = ad::Tensor::zeros({rows, e});
    for (double& v : t.values) v = rng.gaussian();
    return t;
}

std::vector<double> softmax_plain(std::vector<double> v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double z = 0.0;
    for (double& x : v) z += (x = std::exp(x - mx));
    for (double& x : v) x /= z;
    return v;
}

}  // namespace

TEST_CASE("similarity matrix of identical embeddings is all ones", "[fusion]") {
    std::vector<std::vector<double>> rows(4, {0.6, 0.8});
    auto s = similarity_matrix(rows);
    for (double v : s.s) CHECK(v == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("similarity matrix of orthogonal embeddings is the identity", "[fusion]") {
    std::vector<std::vector<double>> rows{
        {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    auto s = similarity_matrix(rows);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(s.at(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-15));
}

TEST_CASE("similarity matrix matches scalar dot products and is symmetric", "[fusion][property]") {
    Rng rng(41);
    for (int iter = 0; iter < 20; ++iter) {
        std::vector<std::vector<double>> rows;
        for (int r = 0; r < 4; ++r) {
            std::vector<double> v(6);
            double norm = 0.0;
            for (double& x : v) {
                x = rng.gaussian();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
            rows.push_back(v);
        }
        auto s = similarity_matrix(rows);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::abs(s.at(i, i) - 1.0) <= 1e-9);
            for (std::size_t j = 0; j < 4; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < 6; ++k) dot += rows[i][k] * rows[j][k];
                CHECK(s.at(i, j) == Catch::Approx(dot).margin(1e-14));
                CHECK(std::abs(s.at(i, j) - s.at(j, i)) <= 1e-12);
                CHECK(s.at(i, j) >= -1.0 - 1e-12);
                CHECK(s.at(i, j) <= 1.0 + 1e-12);
            }
        }
    }
}

TEST_CASE("identical modality rows give uniform attention weights", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(51);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = ad::Tensor::zeros({4, 8});
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) f.at(r, c) = 0.3 * static_cast<double>(c) - 1.0;
    std::vector<std::vector<double>> probs;
    self_attention_values(f, params, cfg, &probs);
    REQUIRE(probs.size() == cfg.heads);
    for (const auto& p : probs)
        for (double v : p) CHECK(v == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("zero value and output projections reduce attention to the residual", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(52);
    FusionParams params = init_fusion_params(cfg, rng);
    for (double& v : params.wv.values) v = 0.0;
    for (double& v : params.wo.values) v = 0.0;
    Rng rng2(53);
    ad::Tensor f = random_stack(4, 8, rng2);
    ad::Tensor out = self_attention_values(f, params, cfg);
    CHECK(out.values == f.values);
}

TEST_CASE("without the residual the same projections give zero output", "[fusion]") {
    auto cfg = small_cfg();
    cfg.attention_residual = false;
    Rng rng(52);
    FusionParams params = init_fusion_params(cfg, rng);
    for (double& v : params.wo.values) v = 0.0;
    Rng rng2(53);
    ad::Tensor f = random_stack(4, 8, rng2);
    ad::Tensor out = self_attention_values(f, params, cfg);
    for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("attention gradients match finite differences", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(54);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<ad::Tensor*> ws{&f, &params.wq, &params.wk, &params.wv, &params.wo};
    const double err = ad::check_gradients(ws, [&](ad::Tape& tp) {
        FusionLeaves l = make_fusion_leaves(tp, params, cfg);
        auto res = self_attention(tp, l, cfg, tp.leaf(f));
        return tp.sum(tp.mul(res.out, res.out));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("alpha = 1 ignores the quality cues entirely", "[fusion]") {
    auto cfg = small_cfg();
    cfg.alpha_mode = AlphaMode::kFixed;
    cfg.alpha_fixed = 1.0;
    Rng rng(55);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<std::array<double, 3>> cues_a(4, {0.0, 0.0, 1.0});
    std::vector<std::array<double, 3>> cues_b{
        {9.0, 3.0, 0.0}, {-2.0, 7.0, 1.0}, {100.0, 0.0, 0.0}, {0.5, 0.5, 0.5}};
    auto wa = reliability_weights_values(f, cues_a, params, cfg);
    auto wb = reliability_weights_values(f, cues_b, params, cfg);
    CHECK(wa.w == wb.w);  // bit-exact
    CHECK(wa.on_simplex());
}

TEST_CASE("equal blended scores give uniform weights", "[fusion]") {
    auto cfg = small_cfg();
    cfg.alpha_mode = AlphaMode::kFixed;
    cfg.alpha_fixed = 1.0;
    Rng rng(56);
    FusionParams params = init_fusion_params(cfg, rng);
    // Constant score net: zero final weight, bias 0.7.
    for (double& v : params.score_net[0].w2.values) v = 0.0;
    params.score_net[0].b2.values[0] = 0.7;
    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<std::array<double, 3>> cues(4, {1.0, 0.0, 1.0});
    auto w = reliability_weights_values(f, cues, params, cfg);
    for (double v : w.w) CHECK(v == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("alpha = 0 with an identity-like reliability net matches the scalar recomputation",
          "[fusion]") {
    auto cfg = small_cfg();
    cfg.alpha_mode = AlphaMode::kFixed;
    cfg.alpha_fixed = 0.0;
    Rng rng(57);
    FusionParams params = init_fusion_params(cfg, rng);
    // MLP_c that forwards the first cue entry: w1 routes cue[0] to hidden 0,
    // w2 reads hidden 0 back out.
    auto& net = params.reliability_net[0];
    for (double& v : net.w1.values) v = 0.0;
    net.w1.at(0, 0) = 1.0;
    for (double& v : net.b1.values) v = 0.0;
    for (double& v : net.w2.values) v = 0.0;
    net.w2.at(0, 0) = 1.0;
    net.b2.values[0] = 0.0;

    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<std::array<double, 3>> cues{
        {2.0, 0.0, 1.0}, {0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}};
    auto w = reliability_weights_values(f, cues, params, cfg);

    // Straight-line recomputation: z-score of (2,0,0,0), then softmax.
    const std::vector<double> c{2.0, 0.0, 0.0, 0.0};
    const double mean = 0.5;
    double var = 0.0;
    for (double x : c) var += (x - mean) * (x - mean);
    var /= 4.0;
    const double stdg = std::sqrt(var + 1e-6 * 1e-6);
    std::vector<double> phi;
    for (double x : c) phi.push_back((x - mean) / stdg);
    const auto expect = softmax_plain(phi);
    REQUIRE(w.w.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.w[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("cue permutation permutes weights identically when alpha = 0", "[fusion]") {
    auto cfg = small_cfg();
    cfg.alpha_mode = AlphaMode::kFixed;
    cfg.alpha_fixed = 0.0;
    Rng rng(58);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<std::array<double, 3>> cues{
        {2.0, 1.0, 1.0}, {0.3, 0.0, 1.0}, {5.0, 2.0, 0.0}, {1.0, 4.0, 1.0}};
    auto w = reliability_weights_values(f, cues, params, cfg);
    // Rotate the cue rows by one.
    std::vector<std::array<double, 3>> rotated{cues[3], cues[0], cues[1], cues[2]};
    auto wr = reliability_weights_values(f, rotated, params, cfg);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(wr.w[(i + 1) % 4] == Catch::Approx(w.w[i]).margin(1e-12));
}

TEST_CASE("weights lie on the simplex for random inputs", "[fusion][property]") {
    auto cfg = small_cfg();
    Rng rng(59);
    FusionParams params = init_fusion_params(cfg, rng);
    for (int iter = 0; iter < 50; ++iter) {
        ad::Tensor f = random_stack(4, 8, rng);
        std::vector<std::array<double, 3>> cues;
        for (int i = 0; i < 4; ++i)
            cues.push_back({std::abs(rng.gaussian()), std::abs(rng.gaussian()), rng.uniform()});
        auto w = reliability_weights_values(f, cues, params, cfg);
        CHECK(w.on_simplex());
    }
}

TEST_CASE("one-hot weights route a single modality row into the FFN", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(60);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    WeightVector w{{0.0, 0.0, 1.0, 0.0}};
    auto res = fuse_and_predict_values(f, w, params, cfg);

    // Plain recomputation of FFN(v_2) and the head.
    std::vector<double> v(f.values.begin() + 2 * 8, f.values.begin() + 3 * 8);
    std::vector<double> h(16, 0.0);
    for (std::size_t j = 0; j < 16; ++j) {
        for (std::size_t i = 0; i < 8; ++i) h[j] += v[i] * params.ffn_w1.at(i, j);
        h[j] = std::max(0.0, h[j] + params.ffn_b1.values[j]);
    }
    std::vector<double> z(8, 0.0);
    for (std::size_t j = 0; j < 8; ++j) {
        for (std::size_t i = 0; i < 16; ++i) z[j] += h[i] * params.ffn_w2.at(i, j);
        z[j] += params.ffn_b2.values[j];
    }
    for (std::size_t j = 0; j < 8; ++j)
        CHECK(res.fused.values[j] == Catch::Approx(z[j]).margin(1e-12));

    std::vector<double> logits(4, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
        for (std::size_t i = 0; i < 8; ++i) logits[j] += z[i] * params.head_w.at(i, j);
        logits[j] += params.head_b.values[j];
    }
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(res.logits.values[j] == Catch::Approx(logits[j]).margin(1e-12));
}

TEST_CASE("equal weighted sums give identical logits", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(61);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    // Duplicate row 0 into row 1; then (1,0,0,0) and (0.5,0.5,0,0) mix to the
    // same vector.
    for (std::size_t c = 0; c < 8; ++c) f.at(1, c) = f.at(0, c);
    auto a = fuse_and_predict_values(f, WeightVector{{1.0, 0.0, 0.0, 0.0}}, params, cfg);
    auto b = fuse_and_predict_values(f, WeightVector{{0.5, 0.5, 0.0, 0.0}}, params, cfg);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(a.logits.values[j] == Catch::Approx(b.logits.values[j]).margin(1e-12));
}

TEST_CASE("prediction ties break to the lowest index", "[fusion]") {
    CHECK(argmax_lowest(std::vector<double>{1.0, 1.0, 1.0}) == 0);
    CHECK(argmax_lowest(std::vector<double>{0.0, 2.0, 2.0}) == 1);
}

TEST_CASE("weight mismatch against rows is rejected", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(62);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    CHECK_THROWS_AS(fuse_and_predict_values(f, WeightVector{{0.5, 0.5}}, params, cfg),
                    DimensionError);
}

TEST_CASE("full fusion chain gradients match finite differences", "[fusion]") {
    auto cfg = small_cfg();
    Rng rng(63);
    FusionParams params = init_fusion_params(cfg, rng);
    ad::Tensor f = random_stack(4, 8, rng);
    ad::Tensor cues = ad::Tensor::zeros({4, 3});
    for (double& v : cues.values) v = std::abs(rng.gaussian());

    std::vector<ad::Tensor*> ws{&f,
                                &params.wq,
                                &params.wk,
                                &params.wv,
                                &params.wo,
                                &params.score_net[0].w1,
                                &params.score_net[0].b1,
                                &params.score_net[0].w2,
                                &params.score_net[0].b2,
                                &params.reliability_net[0].w1,
                                &params.reliability_net[0].b1,
                                &params.reliability_net[0].w2,
                                &params.reliability_net[0].b2,
                                &params.alpha_raw,
                                &params.ffn_w1,
                                &params.ffn_b1,
                                &params.ffn_w2,
                                &params.ffn_b2,
                                &params.head_w,
                                &params.head_b};
    std::vector<std::size_t> label{2};
    const double err = ad::check_gradients(ws, [&](ad::Tape& tp) {
        FusionLeaves l = make_fusion_leaves(tp, params, cfg);
        auto att = self_attention(tp, l, cfg, tp.leaf(f));
        ad::Var w = reliability_weights(tp, l, cfg, att.out, tp.leaf(cues));
        auto pred = fuse_and_predict(tp, l, att.out, w);
        return tp.log_softmax_cross_entropy(pred.logits, label);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("per-modality score nets are supported", "[fusion]") {
    auto cfg = small_cfg();
    cfg.per_modality_score_nets = true;
    Rng rng(64);
    FusionParams params = init_fusion_params(cfg, rng);
    REQUIRE(params.score_net.size() == 4);
    REQUIRE(params.reliability_net.size() == 4);
    ad::Tensor f = random_stack(4, 8, rng);
    std::vector<std::array<double, 3>> cues(4, {1.0, 0.0, 1.0});
    auto w = reliability_weights_values(f, cues, params, cfg);
    CHECK(w.on_simplex());
}
