#pragma once

#include <string>
#include <vector>

#include "pae/tensor.hpp"

namespace pae {

// Declarative description of one run. Every field has a documented
// default (the published configuration where one exists, desk-scale
// machinery sizes otherwise). Parsing rejects unknown keys.
struct RunConfig {
    // run
    uint64_t seed = 0;
    std::string out_dir = "runs/default";
    int64_t workers = 1;

    // data (hermetic synthetic set)
    int64_t data_count = 64;
    int64_t data_classes = 8;
    int64_t data_image_size = 32;
    int64_t data_grid_cell = 8;

    // backbone
    std::string backbone_id = "synthetic";
    int64_t backbone_patch = 16;
    int64_t backbone_dim = 64;
    std::string backbone_cache_dir = "cache/features";

    // latent geometry
    int64_t latent_dim = 32;
    int64_t latent_h = 16;
    int64_t latent_w = 16;

    // tokenizer
    int64_t dam_depth = 6;
    int64_t dam_hidden = 1024;
    int64_t dam_heads = 4;
    int64_t tok_proj_hidden = 64;
    int64_t tok_proj_heads = 2;
    int64_t tok_dec_hidden = 64;
    int64_t tok_dec_depth = 2;
    int64_t tok_dec_heads = 2;
    double rms_eps = 1e-6;
    bool global_rms = false;
    double tok_lr = 2e-4;
    int64_t tok_steps = 400;
    int64_t tok_batch = 4;

    // losses
    double lambda_lpips = 1.0;
    double lambda_gan = 0.5;
    bool gan_enabled = false;
    double lambda_ssr = 0.2;
    double lambda_mcr = 0.5;
    double lambda_scr = 1.0;
    std::string perceptual = "mad";

    // MCR perturbations
    double mcr_angle_small = 42.5;
    double mcr_angle_large = 85.0;
    std::string mcr_sampling = "uniform";  // uniform | fixed
    bool mcr_per_location = false;

    // prior refinement
    int64_t refine_proj_hidden = 64;
    int64_t refine_proj_heads = 2;
    int64_t refine_decoder_depth = 4;
    int64_t refine_decoder_hidden = 1024;
    int64_t refine_decoder_heads = 4;
    int64_t refine_upsample = 256;
    double refine_lowpass = 0.4;
    double refine_lambda_rep = 1.0;
    double refine_lambda_gram = 1.0;
    double refine_lr = 2e-4;
    int64_t refine_steps = 200;
    int64_t refine_batch = 4;

    // metrics
    double metrics_sigma = 0.1;
    std::vector<double> lpc_scales{0.1, 0.5, 1.0, 2.0};
    int64_t lpc_directions = 8;
    int64_t gsq_subsets = 5;
    int64_t gsq_classes = 10;

    // generator + sampler
    int64_t gen_depth = 6;
    int64_t gen_width = 256;
    int64_t gen_heads = 4;
    double gen_train_time_shift = 0.7;
    double gen_label_dropout = 0.1;
    double gen_lr = 2e-4;
    int64_t gen_steps = 400;
    int64_t gen_batch = 4;
    int64_t sampler_steps = 250;
    double sampler_time_shift = 0.4;
    double sampler_cfg_scale = 3.3;
    double sampler_cfg_interval = 0.3;
    std::string sampler_mode = "ode";  // ode | sde

    std::string hash() const;
};

// Plain-text nested key-value format: one `section.key = value` per line,
// '#' comments, unknown keys rejected. parse(serialize(c)) == c.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// Environment overrides are limited to paths and worker counts:
// PAE_OUT_DIR, PAE_CACHE_DIR, PAE_WORKERS.
void apply_env_overrides(RunConfig& cfg);

}  // namespace pae
