#pragma once

#include <functional>
#include <vector>

#include "pae/nn.hpp"

namespace pae {

struct SamplerConfig {
    int64_t steps = 250;
    double time_shift = 0.4;
    double cfg_scale = 3.3;
    double cfg_interval = 0.3;
    enum class Mode { kOde, kSde } mode = Mode::kOde;
    // guidance window: active where warped t >= interval (late-time) or
    // t <= interval when late_time_guidance is false
    bool late_time_guidance = true;
    double sde_noise = 0.5;
    uint64_t seed = 0;
};

struct GeneratorConfig {
    int64_t depth = 6;
    int64_t width = 256;
    int64_t heads = 4;
    int64_t num_classes = 10;
    int64_t latent_dim = 32;
    int64_t latent_h = 16;
    int64_t latent_w = 16;
    double train_time_shift = 0.7;
    double label_dropout = 0.1;
};

// t' = s t / (1 + (s - 1) t): order-preserving warp of [0,1] onto itself
// with endpoints fixed.
double time_warp(double t, double s);

// Interval-limited classifier-free guidance on a velocity pair. Inside
// the active window the result is v_u + w (v_c - v_u); outside it is the
// conditional velocity. w == 1 returns v_cond bit-exactly.
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w, double t,
                    double interval, bool late_time_guidance = true);

// Velocity field used by the integrator: latent tokens, warped time, label
// (kNullLabel selects the unconditional branch).
inline constexpr int64_t kNullLabel = -1;
using VelocityFn = std::function<Tensor(const Tensor& z_tokens, double t, int64_t label)>;

// Euler (ODE) or Euler-Maruyama (SDE) integration over the warped grid
// t_i = warp(i / steps, time_shift), from noise at t=0 to data at t=1.
// SDE noise anneals as (1 - t) and requires cfg_scale == 1. Outputs are
// re-projected to the RMS shell.
std::vector<Tensor> integrate_flow(const VelocityFn& velocity,
                                   const std::vector<int64_t>& labels,
                                   std::vector<int64_t> token_shape, double rms_eps,
                                   const SamplerConfig& cfg);

// Tiny class-conditional flow-matching transformer over latent tokens
// (patch-1 tokenization, adaptive-norm conditioning, zero-init output).
class FlowGenerator {
public:
    FlowGenerator(const GeneratorConfig& cfg, uint64_t seed);

    ad::Var velocity_graph(nn::Tape& tape, const Tensor& z_tokens, double t,
                           int64_t label) const;
    Tensor velocity(const Tensor& z_tokens, double t, int64_t label) const;

    // Mean squared error between predicted velocity and (z1 - z0) on one
    // batch of latent tokens; t is drawn then warped per sample.
    ad::Var flow_loss_graph(nn::Tape& tape, const std::vector<Tensor>& z1_tokens,
                            const std::vector<int64_t>& labels, Rng& stream) const;

    std::vector<Tensor> sample(const std::vector<int64_t>& labels,
                               const SamplerConfig& cfg) const;

    nn::ParamGroup& params() { return pg_; }
    const GeneratorConfig& config() const { return cfg_; }

private:
    GeneratorConfig cfg_;
    nn::ParamGroup pg_;
    nn::Linear in_proj_, out_proj_;
    nn::PosEmbedding pos_;
    nn::Linear time_mlp1_, time_mlp2_;
    nn::Param* class_table_ = nullptr;  // [num_classes + 1, width]; last row = null class

    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::Attention attn;
        nn::Mlp mlp;
        nn::Linear ada;  // width -> 6 * width, zero-init
    };
    std::vector<Block> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear final_ada_;  // width -> 2 * width, zero-init

    ad::Var condition(nn::Tape& tape, double t, int64_t label) const;  // [1 x width]
};

}  // namespace pae
