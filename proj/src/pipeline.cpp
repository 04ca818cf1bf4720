#include "pae/pipeline.hpp"

#include <algorithm>

namespace pae {

RefineConfig make_refine_config(const RunConfig& cfg) {
    RefineConfig rc;
    rc.target_dim = cfg.latent_dim;
    rc.proj_hidden = cfg.refine_proj_hidden;
    rc.proj_heads = cfg.refine_proj_heads;
    rc.decoder_depth = cfg.refine_decoder_depth;
    rc.decoder_hidden = cfg.refine_decoder_hidden;
    rc.decoder_heads = cfg.refine_decoder_heads;
    rc.upsample_size = cfg.refine_upsample;
    rc.lowpass_strength = cfg.refine_lowpass;
    rc.lambda_rep = cfg.refine_lambda_rep;
    rc.lambda_gram = cfg.refine_lambda_gram;
    rc.lr = cfg.refine_lr;
    rc.steps = cfg.refine_steps;
    rc.batch_images = cfg.refine_batch;
    rc.seed = cfg.seed;
    return rc;
}

TokenizerConfig make_tokenizer_config(const RunConfig& cfg) {
    TokenizerConfig tc;
    tc.latent_dim = cfg.latent_dim;
    tc.latent_h = cfg.latent_h;
    tc.latent_w = cfg.latent_w;
    tc.dam_depth = cfg.dam_depth;
    tc.dam_hidden = cfg.dam_hidden;
    tc.dam_heads = cfg.dam_heads;
    tc.proj_hidden = cfg.tok_proj_hidden;
    tc.proj_heads = cfg.tok_proj_heads;
    tc.dec_hidden = cfg.tok_dec_hidden;
    tc.dec_depth = cfg.tok_dec_depth;
    tc.dec_heads = cfg.tok_dec_heads;
    tc.rms_eps = cfg.rms_eps;
    tc.global_rms = cfg.global_rms;
    return tc;
}

GeneratorConfig make_generator_config(const RunConfig& cfg) {
    GeneratorConfig gc;
    gc.depth = cfg.gen_depth;
    gc.width = cfg.gen_width;
    gc.heads = cfg.gen_heads;
    gc.num_classes = cfg.data_classes;
    gc.latent_dim = cfg.latent_dim;
    gc.latent_h = cfg.latent_h;
    gc.latent_w = cfg.latent_w;
    gc.train_time_shift = cfg.gen_train_time_shift;
    gc.label_dropout = cfg.gen_label_dropout;
    return gc;
}

SamplerConfig make_sampler_config(const RunConfig& cfg) {
    SamplerConfig sc;
    sc.steps = cfg.sampler_steps;
    sc.time_shift = cfg.sampler_time_shift;
    sc.cfg_scale = cfg.sampler_cfg_scale;
    sc.cfg_interval = cfg.sampler_cfg_interval;
    if (cfg.sampler_mode == "sde") {
        // the SDE route runs unguided; guidance selects the ODE sampler
        sc.mode = SamplerConfig::Mode::kSde;
        sc.cfg_scale = 1.0;
    } else if (cfg.sampler_mode == "ode") {
        sc.mode = SamplerConfig::Mode::kOde;
    } else {
        throw ConfigError("sampler.mode must be 'ode' or 'sde', got '" + cfg.sampler_mode + "'");
    }
    sc.seed = cfg.seed;
    return sc;
}

TokenizerTrainOptions make_tokenizer_train_options(const RunConfig& cfg) {
    TokenizerTrainOptions t;
    t.weights.lambda_lpips = cfg.lambda_lpips;
    t.weights.lambda_gan = cfg.gan_enabled ? cfg.lambda_gan : 0.0;
    t.weights.lambda_ssr = cfg.lambda_ssr;
    t.weights.lambda_mcr = cfg.lambda_mcr;
    t.weights.lambda_scr = cfg.lambda_scr;
    t.gan_enabled = cfg.gan_enabled;
    t.perturb.angle_small_deg = cfg.mcr_angle_small;
    t.perturb.angle_large_deg = cfg.mcr_angle_large;
    if (cfg.mcr_sampling == "fixed")
        t.perturb.sampling = PerturbationSpec::Sampling::kFixed;
    else if (cfg.mcr_sampling == "uniform")
        t.perturb.sampling = PerturbationSpec::Sampling::kUniformUpToMax;
    else
        throw ConfigError("mcr.sampling must be 'uniform' or 'fixed'");
    t.perturb.per_location_direction = cfg.mcr_per_location;
    t.perceptual = cfg.perceptual;
    t.lr = cfg.tok_lr;
    t.steps = cfg.tok_steps;
    t.batch = cfg.tok_batch;
    t.seed = cfg.seed;
    return t;
}

GeneratorTrainOptions make_generator_train_options(const RunConfig& cfg) {
    GeneratorTrainOptions g;
    g.lr = cfg.gen_lr;
    g.steps = cfg.gen_steps;
    g.batch = cfg.gen_batch;
    g.seed = cfg.seed;
    return g;
}

GeometryConfig make_geometry_config(const RunConfig& cfg) {
    GeometryConfig gc;
    gc.sigma = cfg.metrics_sigma;
    gc.lpc.scales = cfg.lpc_scales;
    gc.lpc.directions = cfg.lpc_directions;
    gc.gsq_subsets = cfg.gsq_subsets;
    gc.gsq_classes = cfg.gsq_classes;
    gc.seed = cfg.seed;
    gc.perceptual = cfg.perceptual;
    return gc;
}

std::vector<LabeledImage> build_dataset(const RunConfig& cfg) {
    return make_synthetic_dataset(cfg.data_count, cfg.data_classes, cfg.data_image_size,
                                  cfg.data_grid_cell, cfg.seed);
}

std::unique_ptr<Backend> build_backend(const RunConfig& cfg) {
    return make_backend(cfg.backbone_id, cfg.seed, cfg.backbone_patch, cfg.backbone_dim,
                        cfg.backbone_cache_dir);
}

std::vector<FeatureMap> encode_all(const std::vector<LabeledImage>& data,
                                   const Backend& backend) {
    std::vector<FeatureMap> out;
    out.reserve(data.size());
    for (const auto& li : data) out.push_back(encode_image(li.image, backend));
    return out;
}

std::unique_ptr<Tokenizer> build_tokenizer(const RunConfig& cfg, const Backend& backend) {
    const int64_t grid = cfg.data_image_size / backend.patch_size();
    return std::make_unique<Tokenizer>(make_tokenizer_config(cfg), backend.feature_dim(), grid,
                                       grid, backend.patch_size(), cfg.seed);
}

Tensor pooled_backbone_features(const std::vector<ImageTensor>& images, const Backend& backend) {
    if (images.empty()) throw ConfigError("pooled_backbone_features: empty set");
    Tensor out({static_cast<int64_t>(images.size()), backend.feature_dim()});
    for (size_t i = 0; i < images.size(); ++i) {
        ImageTensor clamped = images[i];
        for (int64_t p = 0; p < clamped.pixels.numel(); ++p)
            clamped.pixels[p] = std::clamp(clamped.pixels[p], 0.0, 1.0);
        FeatureMap fm = encode_image(clamped, backend);
        for (int64_t c = 0; c < backend.feature_dim(); ++c) {
            double acc = 0.0;
            for (int64_t t = 0; t < fm.token_count(); ++t) acc += fm.tokens.at(t, c);
            out.at(static_cast<int64_t>(i), c) = acc / static_cast<double>(fm.token_count());
        }
    }
    return out;
}

}  // namespace pae
