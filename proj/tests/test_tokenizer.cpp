#include <cmath>

#include "doctest.h"
#include "pae/pipeline.hpp"
#include "pae/tokenizer.hpp"
#include "support/gradcheck.hpp"

using namespace pae;
namespace {

TokenizerConfig tiny_cfg() {
    TokenizerConfig cfg;
    cfg.latent_dim = 4;
    cfg.latent_h = 2;
    cfg.latent_w = 2;
    cfg.dam_depth = 1;
    cfg.dam_hidden = 8;
    cfg.dam_heads = 2;
    cfg.proj_hidden = 8;
    cfg.proj_heads = 2;
    cfg.dec_hidden = 8;
    cfg.dec_depth = 1;
    cfg.dec_heads = 2;
    return cfg;
}

ImageTensor ramp_image(int64_t size, double offset = 0.0) {
    ImageTensor img = make_image(size, size);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x)
                img.pixels.at(c, y, x) =
                    std::fmod(offset + 0.05 * static_cast<double>(c + 1) +
                                  static_cast<double>(x + y) / (3.0 * size),
                              1.0);
    return img;
}

}  // namespace

TEST_CASE("default config matches the published latent geometry") {
    TokenizerConfig cfg;
    CHECK(cfg.latent_dim == 32);
    CHECK(cfg.latent_h == 16);
    CHECK(cfg.latent_w == 16);
    CHECK(cfg.dam_depth == 6);
}

TEST_CASE("rms_normalize puts (3,4) on the shell") {
    Tensor z({2, 1, 1}, {3.0, 4.0});
    // eps tiny: matches the closed-form values 3/sqrt(12.5), 4/sqrt(12.5)
    LatentCode code = rms_normalize(z, 1e-300);
    CHECK(code.z[0] == doctest::Approx(0.848528137).epsilon(1e-8));
    CHECK(code.z[1] == doctest::Approx(1.131370850).epsilon(1e-8));
    const double ms = (code.z[0] * code.z[0] + code.z[1] * code.z[1]) / 2.0;
    CHECK(ms == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rms_normalize sends constants to +-1 and zeros to zero") {
    Tensor z({3, 1, 2}, {0.7, 0.0, 0.7, 0.0, 0.7, 0.0});
    LatentCode code = rms_normalize(z, 1e-6);
    // first location: constant 0.7 per channel -> ~1 each
    CHECK(code.z.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(code.z.at(1, 0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    // second location: all zero -> stays zero, flagged
    CHECK(code.z.at(0, 0, 1) == 0.0);
    CHECK(code.zero_locations == 1);

    Tensor neg = Tensor::full({4, 1, 1}, -2.0);
    LatentCode nc = rms_normalize(neg, 1e-9);
    CHECK(nc.z[0] == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("rms_normalize rejects bad inputs") {
    CHECK_THROWS_AS(rms_normalize(Tensor({2, 1, 1}), 0.0), ConfigError);
    Tensor bad({1, 1, 1});
    bad[0] = std::nan("");
    CHECK_THROWS_AS(rms_normalize(bad, 1e-6), NumericError);
}

TEST_CASE("dam_fuse with gamma = beta = 0 is plain channel layernorm") {
    Tensor h({1, 2}, {2.0, 4.0});
    auto z = dam_fuse(ad::constant(h), ad::constant(Tensor({1, 2})),
                      ad::constant(Tensor({1, 2})));
    // mean 3, var 1 -> (-1, 1); the 1e-6 eps shifts values by < 1e-6
    CHECK(z->val[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(z->val[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("dam_fuse absorbs uniform gamma through the normalization") {
    Tensor h({1, 2}, {2.0, 4.0});
    Tensor gamma = Tensor::full({1, 2}, 0.5);  // pre-norm (3, 6)
    auto z = dam_fuse(ad::constant(h), ad::constant(gamma), ad::constant(Tensor({1, 2})));
    CHECK(z->val[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(z->val[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("zero-init fusion blocks image leakage exactly") {
    auto cfg = tiny_cfg();
    const int64_t patch = 8;  // 2x2 token grid over a 16x16 image
    SyntheticBackend backend(1, patch, 6);
    Tokenizer tok(cfg, 6, 2, 2, patch, /*seed=*/3);

    ImageTensor img_a = ramp_image(16, 0.0);
    ImageTensor img_b = ramp_image(16, 0.37);
    FeatureMap fm = encode_image(img_a, backend);  // shared features

    nn::Tape t1, t2;
    auto ha = tok.dam_forward(t1, fm.tokens, img_a);
    auto hb = tok.dam_forward(t2, fm.tokens, img_b);
    REQUIRE(ha->val.same_shape(hb->val));
    for (int64_t i = 0; i < ha->val.numel(); ++i) CHECK(ha->val[i] == hb->val[i]);

    // and the fused output is exactly LayerNorm(H_vfm)
    auto ln = ad::layernorm_rows(ad::constant(fm.tokens), 1e-6);
    for (int64_t i = 0; i < ha->val.numel(); ++i)
        CHECK(ha->val[i] == doctest::Approx(ln->val[i]).epsilon(1e-12));
}

TEST_CASE("grid mismatch between image and features is a configuration error") {
    auto cfg = tiny_cfg();
    Tokenizer tok(cfg, 6, 2, 2, 8, 3);
    ImageTensor wrong = ramp_image(24);
    Tensor feats({4, 6});
    nn::Tape t;
    CHECK_THROWS_AS(tok.dam_forward(t, feats, wrong), ConfigError);
}

TEST_CASE("encode emits the configured latent shape on the RMS shell") {
    auto cfg = tiny_cfg();
    const int64_t patch = 8;
    SyntheticBackend backend(5, patch, 6);
    Tokenizer tok(cfg, 6, 2, 2, patch, 7);
    ImageTensor img = ramp_image(16);

    LatentCode code = tok.encode(img, backend);
    CHECK(code.channels() == 4);
    CHECK(code.grid_h() == 2);
    CHECK(code.grid_w() == 2);

    for (int64_t h = 0; h < 2; ++h) {
        for (int64_t w = 0; w < 2; ++w) {
            double ms = 0.0;
            for (int64_t c = 0; c < 4; ++c) ms += code.z.at(c, h, w) * code.z.at(c, h, w);
            ms /= 4.0;
            CHECK(ms > 0.999);
            CHECK(ms < 1.001);
        }
    }

    LatentCode again = tok.encode(img, backend);
    for (int64_t i = 0; i < code.z.numel(); ++i) CHECK(again.z[i] == code.z[i]);
}

TEST_CASE("default latent shape is 32x16x16 under a full-size grid") {
    TokenizerConfig cfg;  // paper latent geometry, desk widths
    cfg.dam_hidden = 8;
    cfg.dam_depth = 1;
    cfg.dam_heads = 2;
    cfg.proj_hidden = 8;
    cfg.dec_hidden = 8;
    cfg.dec_depth = 1;
    const int64_t patch = 4;  // 64x64 image -> 16x16 tokens
    SyntheticBackend backend(2, patch, 6);
    Tokenizer tok(cfg, 6, 16, 16, patch, 9);
    LatentCode code = tok.encode(ramp_image(64), backend);
    CHECK(code.channels() == 32);
    CHECK(code.grid_h() == 16);
    CHECK(code.grid_w() == 16);
}

TEST_CASE("token grid to latent grid downsampling must be exact") {
    auto cfg = tiny_cfg();
    cfg.latent_h = 3;  // 4 tokens per side cannot downsample to 3
    cfg.latent_w = 3;
    CHECK_THROWS_AS(Tokenizer(cfg, 6, 4, 4, 8, 1), ConfigError);
}

TEST_CASE("strided projector halves the grid exactly") {
    auto cfg = tiny_cfg();
    // 4x4 token grid -> 2x2 latent grid, factor 2
    SyntheticBackend backend(4, 4, 6);
    Tokenizer tok(cfg, 6, 4, 4, 4, 11);
    CHECK(tok.downsample_factor() == 2);
    LatentCode code = tok.encode(ramp_image(16), backend);
    CHECK(code.grid_h() == 2);
    CHECK(code.grid_w() == 2);

    ImageTensor recon = tok.reconstruct(code);
    CHECK(recon.height() == 16);
    CHECK(recon.width() == 16);
}

TEST_CASE("zeroed decoder parameters give constant reconstruction") {
    auto cfg = tiny_cfg();
    SyntheticBackend backend(6, 8, 6);
    Tokenizer tok(cfg, 6, 2, 2, 8, 13);
    for (auto& p : tok.params().params()) {
        if (p.name.rfind("dec", 0) == 0 || p.name.rfind("deproj", 0) == 0)
            nn::init_zeros(p.value);
    }
    LatentCode code = tok.encode(ramp_image(16), backend);
    ImageTensor out = tok.reconstruct(code);
    for (int64_t i = 0; i < out.pixels.numel(); ++i) CHECK(out.pixels[i] == 0.0);
}

TEST_CASE("reconstruct is deterministic") {
    auto cfg = tiny_cfg();
    SyntheticBackend backend(8, 8, 6);
    Tokenizer tok(cfg, 6, 2, 2, 8, 17);
    LatentCode code = tok.encode(ramp_image(16), backend);
    ImageTensor a = tok.reconstruct(code);
    ImageTensor b = tok.reconstruct(code);
    for (int64_t i = 0; i < a.pixels.numel(); ++i) CHECK(a.pixels[i] == b.pixels[i]);
}

TEST_CASE("latent token round trip preserves layout") {
    auto cfg = tiny_cfg();
    Tokenizer tok(cfg, 6, 2, 2, 8, 19);
    Rng rng(23);
    Tensor tokens({4, 4});
    for (int64_t i = 0; i < tokens.numel(); ++i) tokens[i] = rng.normal();
    LatentCode code = tok.latent_from_tokens(tokens);
    Tensor back = tok.tokens_from_latent(code);
    for (int64_t i = 0; i < tokens.numel(); ++i) CHECK(back[i] == tokens[i]);
}

TEST_CASE("overfit checkpoint reconstructs 8 images below 0.05 mean abs error") {
    // reconstruction-only training on a tiny 8-image set until the decode
    // error crosses the documented threshold
    RunConfig cfg;
    cfg.seed = 3;
    cfg.data_count = 8;
    cfg.data_classes = 4;
    cfg.data_image_size = 16;
    cfg.data_grid_cell = 4;
    cfg.backbone_patch = 4;
    cfg.backbone_dim = 12;
    cfg.latent_dim = 8;
    cfg.latent_h = 4;
    cfg.latent_w = 4;
    cfg.dam_depth = 1;
    cfg.dam_hidden = 12;
    cfg.dam_heads = 2;
    cfg.tok_proj_hidden = 12;
    cfg.tok_dec_hidden = 16;
    cfg.tok_dec_depth = 1;
    cfg.tok_lr = 2e-3;
    cfg.tok_steps = 700;
    cfg.tok_batch = 4;
    cfg.lambda_ssr = 0.0;
    cfg.lambda_mcr = 0.0;
    cfg.lambda_scr = 0.0;

    auto data = build_dataset(cfg);
    auto backend = build_backend(cfg);
    auto features = encode_all(data, *backend);
    auto tok = build_tokenizer(cfg, *backend);
    auto res = train_tokenizer_loop(*tok, data, features, nullptr,
                                    make_tokenizer_train_options(cfg));
    CHECK(res.final_l1 < 0.05);
}

TEST_CASE("end-to-end reconstruction gradient wrt a projector weight") {
    // d(recon L1)/d(one projector weight) against central differences on a
    // small instance, through encode + decode.
    auto cfg = tiny_cfg();
    const int64_t patch = 8;
    SyntheticBackend backend(10, patch, 6);
    Tokenizer tok(cfg, 6, 2, 2, patch, 29);
    ImageTensor img = ramp_image(16);
    FeatureMap fm = encode_image(img, backend);

    auto forward = [&]() {
        nn::Tape tape;
        auto z = tok.encode_graph(tape, fm.tokens, img);
        auto xhat = tok.decode_graph(tape, z);
        auto loss = ad::mean(ad::abs_(ad::sub(xhat, ad::constant(img.pixels))));
        return std::make_pair(loss, std::move(tape));
    };

    auto [loss, tape] = forward();
    ad::backward(loss);
    nn::Param& target = tok.params().get("proj.out.w");
    Tensor analytic(target.value.shape());
    for (auto& b : tape.bindings())
        if (b.param == &target && b.node->has_grad) analytic += b.node->grad;

    const double step = 1e-4;
    double max_rel = 0.0;
    for (int64_t idx = 0; idx < std::min<int64_t>(12, target.value.numel()); ++idx) {
        const double orig = target.value[idx];
        target.value[idx] = orig + step;
        const double fp = forward().first->val[0];
        target.value[idx] = orig - step;
        const double fm2 = forward().first->val[0];
        target.value[idx] = orig;
        const double num = (fp - fm2) / (2.0 * step);
        const double rel = std::fabs(num - analytic[idx]) /
                           std::max({std::fabs(num), std::fabs(analytic[idx]), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-3);
}
