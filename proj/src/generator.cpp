#include "pae/generator.hpp"

#include <cmath>

#include "pae/error.hpp"

namespace pae {

using ad::Var;
using nn::Tape;

double time_warp(double t, double s) {
    if (s <= 0.0) throw ConfigError("time_warp: shift must be positive");
    return s * t / (1.0 + (s - 1.0) * t);
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double w, double t,
                    double interval, bool late_time_guidance) {
    if (!v_cond.same_shape(v_uncond))
        throw ConfigError("cfg_velocity: velocity shapes differ");
    if (w == 1.0) return v_cond;  // guidance identity, bit-exact
    const bool active = late_time_guidance ? (t >= interval) : (t <= interval);
    if (!active) return v_cond;
    Tensor out(v_cond.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = v_uncond[i] + w * (v_cond[i] - v_uncond[i]);
    return out;
}

std::vector<Tensor> integrate_flow(const VelocityFn& velocity,
                                   const std::vector<int64_t>& labels,
                                   std::vector<int64_t> token_shape, double rms_eps,
                                   const SamplerConfig& cfg) {
    if (cfg.steps < 1) throw ConfigError("integrate_flow: steps must be >= 1");
    if (cfg.mode == SamplerConfig::Mode::kSde && cfg.cfg_scale != 1.0)
        throw ConfigError(
            "integrate_flow: the SDE sampler runs unguided (cfg_scale 1); use ODE with "
            "guidance");
    if (token_shape.size() != 2) throw ConfigError("integrate_flow: token shape must be [N,d]");

    // warped time grid; endpoints are exactly 0 and 1
    std::vector<double> grid(static_cast<size_t>(cfg.steps) + 1);
    for (int64_t i = 0; i <= cfg.steps; ++i)
        grid[static_cast<size_t>(i)] =
            time_warp(static_cast<double>(i) / static_cast<double>(cfg.steps), cfg.time_shift);
    grid.front() = 0.0;
    grid.back() = 1.0;

    const int64_t N = token_shape[0], d = token_shape[1];
    std::vector<Tensor> out;
    out.reserve(labels.size());
    for (size_t b = 0; b < labels.size(); ++b) {
        Rng rng = Rng::substream(cfg.seed, "sample-" + std::to_string(b));
        Tensor z({N, d});
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();

        for (int64_t i = 0; i < cfg.steps; ++i) {
            const double t = grid[static_cast<size_t>(i)];
            const double dt = grid[static_cast<size_t>(i) + 1] - t;
            Tensor v;
            if (cfg.cfg_scale == 1.0) {
                v = velocity(z, t, labels[b]);
            } else {
                Tensor vc = velocity(z, t, labels[b]);
                Tensor vu = velocity(z, t, kNullLabel);
                v = cfg_velocity(vc, vu, cfg.cfg_scale, t, cfg.cfg_interval,
                                 cfg.late_time_guidance);
            }
            for (int64_t j = 0; j < z.numel(); ++j) z[j] += dt * v[j];
            if (cfg.mode == SamplerConfig::Mode::kSde) {
                // Euler-Maruyama with (1 - t)-annealed noise so the data
                // endpoint stays clean
                const double g = cfg.sde_noise * (1.0 - t) * std::sqrt(dt);
                for (int64_t j = 0; j < z.numel(); ++j) z[j] += g * rng.normal();
            }
        }

        // re-project to the RMS shell before decoding
        for (int64_t r = 0; r < N; ++r) {
            double ms = 0.0;
            for (int64_t c = 0; c < d; ++c) ms += z.at(r, c) * z.at(r, c);
            ms /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(ms + rms_eps);
            for (int64_t c = 0; c < d; ++c) z.at(r, c) *= inv;
        }
        out.push_back(std::move(z));
    }
    return out;
}

FlowGenerator::FlowGenerator(const GeneratorConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.width % cfg.heads != 0)
        throw ConfigError("FlowGenerator: width must be divisible by heads");
    Rng rng = Rng::substream(seed, "generator-init");
    const int64_t N = cfg.latent_h * cfg.latent_w;

    in_proj_ = nn::Linear(pg_, "gen.in", cfg.latent_dim, cfg.width, rng);
    pos_ = nn::PosEmbedding(pg_, "gen", N, cfg.width, rng);
    time_mlp1_ = nn::Linear(pg_, "gen.time1", cfg.width, cfg.width, rng);
    time_mlp2_ = nn::Linear(pg_, "gen.time2", cfg.width, cfg.width, rng);
    class_table_ = &pg_.add("gen.classes", {cfg.num_classes + 1, cfg.width});
    nn::init_normal(class_table_->value, rng, 0.02);

    blocks_.resize(static_cast<size_t>(cfg.depth));
    for (int64_t i = 0; i < cfg.depth; ++i) {
        auto& b = blocks_[static_cast<size_t>(i)];
        const std::string n = "gen.block" + std::to_string(i);
        b.ln1 = nn::LayerNorm(pg_, n + ".ln1", cfg.width);
        b.ln2 = nn::LayerNorm(pg_, n + ".ln2", cfg.width);
        b.attn = nn::Attention(pg_, n + ".attn", cfg.width, cfg.width, cfg.heads, rng);
        b.mlp = nn::Mlp(pg_, n + ".mlp", cfg.width, cfg.width * 4, rng);
        b.ada = nn::Linear(pg_, n + ".ada", cfg.width, 6 * cfg.width, rng, /*zero_init=*/true);
    }
    final_ln_ = nn::LayerNorm(pg_, "gen.final_ln", cfg.width);
    final_ada_ = nn::Linear(pg_, "gen.final_ada", cfg.width, 2 * cfg.width, rng, true);
    out_proj_ = nn::Linear(pg_, "gen.out", cfg.width, cfg.latent_dim, rng, /*zero_init=*/true);
}

Var FlowGenerator::condition(Tape& tape, double t, int64_t label) const {
    // sinusoidal time features -> MLP, plus the class embedding row
    const int64_t w = cfg_.width;
    Tensor sin_feat({1, w});
    const int64_t half = w / 2;
    for (int64_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        sin_feat.at(0, 2 * i) = std::sin(t * freq * 1000.0);
        if (2 * i + 1 < w) sin_feat.at(0, 2 * i + 1) = std::cos(t * freq * 1000.0);
    }
    Var temb = time_mlp2_.forward(tape, ad::gelu(time_mlp1_.forward(tape, ad::constant(sin_feat))));

    int64_t row = label;
    if (label == kNullLabel) row = cfg_.num_classes;  // null-class embedding
    if (row < 0 || row > cfg_.num_classes)
        throw ConfigError("FlowGenerator: label " + std::to_string(label) + " out of range");
    Var cemb = ad::gather_rows(tape.use(*class_table_), {row});
    return ad::add(temb, cemb);  // [1 x width]
}

Var FlowGenerator::velocity_graph(Tape& tape, const Tensor& z_tokens, double t,
                                  int64_t label) const {
    const int64_t N = cfg_.latent_h * cfg_.latent_w;
    if (z_tokens.rank() != 2 || z_tokens.dim(0) != N || z_tokens.dim(1) != cfg_.latent_dim)
        throw ConfigError("FlowGenerator: tokens must be [" + std::to_string(N) + " x " +
                          std::to_string(cfg_.latent_dim) + "], got " + z_tokens.shape_str());

    Var c = condition(tape, t, label);  // [1 x width]
    Var h = in_proj_.forward(tape, ad::constant(z_tokens));
    h = pos_.forward(tape, h);

    const int64_t w = cfg_.width;
    auto vec = [&](const Var& m, int64_t piece) {
        return ad::reshape(ad::slice_cols(m, piece * w, (piece + 1) * w), {w});
    };
    for (const auto& b : blocks_) {
        Var mods = b.ada.forward(tape, ad::gelu(c));  // [1 x 6w], zero at init
        Var g1 = vec(mods, 0), b1 = vec(mods, 1), a1 = vec(mods, 2);
        Var g2 = vec(mods, 3), b2 = vec(mods, 4), a2 = vec(mods, 5);

        Var n1 = b.ln1.forward(tape, h);
        n1 = ad::add_rowvec(ad::mul_rowvec(n1, ad::add_scalar(g1, 1.0)), b1);
        h = ad::add(h, ad::mul_rowvec(b.attn.forward(tape, n1, n1), a1));

        Var n2 = b.ln2.forward(tape, h);
        n2 = ad::add_rowvec(ad::mul_rowvec(n2, ad::add_scalar(g2, 1.0)), b2);
        h = ad::add(h, ad::mul_rowvec(b.mlp.forward(tape, n2), a2));
    }
    Var fm = final_ada_.forward(tape, ad::gelu(c));
    Var fg = ad::reshape(ad::slice_cols(fm, 0, w), {w});
    Var fb = ad::reshape(ad::slice_cols(fm, w, 2 * w), {w});
    Var n = final_ln_.forward(tape, h);
    n = ad::add_rowvec(ad::mul_rowvec(n, ad::add_scalar(fg, 1.0)), fb);
    return out_proj_.forward(tape, n);  // [N x d]
}

Tensor FlowGenerator::velocity(const Tensor& z_tokens, double t, int64_t label) const {
    Tape tape;
    return velocity_graph(tape, z_tokens, t, label)->val;
}

Var FlowGenerator::flow_loss_graph(Tape& tape, const std::vector<Tensor>& z1_tokens,
                                   const std::vector<int64_t>& labels, Rng& stream) const {
    if (z1_tokens.empty() || z1_tokens.size() != labels.size())
        throw ConfigError("flow_loss: batch is empty or sizes mismatch");
    Var total;
    for (size_t i = 0; i < z1_tokens.size(); ++i) {
        const Tensor& z1 = z1_tokens[i];
        const double t_raw = stream.uniform();
        const double t = time_warp(t_raw, cfg_.train_time_shift);
        if (t < 0.0 || t > 1.0)
            throw InternalError("flow_loss: warped time left [0,1]");

        Tensor z0(z1.shape());
        for (int64_t j = 0; j < z0.numel(); ++j) z0[j] = stream.normal();

        Tensor zt(z1.shape());
        Tensor target(z1.shape());
        for (int64_t j = 0; j < z0.numel(); ++j) {
            zt[j] = (1.0 - t) * z0[j] + t * z1[j];
            target[j] = z1[j] - z0[j];
        }

        int64_t label = labels[i];
        if (cfg_.label_dropout > 0.0 && stream.uniform() < cfg_.label_dropout)
            label = kNullLabel;

        Var v = velocity_graph(tape, zt, t, label);
        Var mse = ad::mean(ad::square(ad::sub(v, ad::constant(target))));
        total = total ? ad::add(total, mse) : mse;
    }
    return ad::scale(total, 1.0 / static_cast<double>(z1_tokens.size()));
}

std::vector<Tensor> FlowGenerator::sample(const std::vector<int64_t>& labels,
                                          const SamplerConfig& cfg) const {
    auto vel = [this](const Tensor& z, double t, int64_t label) {
        return velocity(z, t, label);
    };
    return integrate_flow(vel, labels, {cfg_.latent_h * cfg_.latent_w, cfg_.latent_dim}, 1e-6,
                          cfg);
}

}  // namespace pae
