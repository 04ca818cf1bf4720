#include "pae/losses.hpp"

#include <cmath>

#include "pae/prior.hpp"
#include "pae/rng.hpp"

namespace pae {

using ad::Var;
using nn::Tape;

namespace {

// Row-wise sum over columns: [N x C] -> [N].
Var rowsum(const Var& a) {
    const int64_t C = a->val.dim(1);
    Tensor ones({C, 1});
    for (int64_t i = 0; i < C; ++i) ones[i] = 1.0;
    return ad::reshape(ad::matmul(a, ad::constant(ones)), {a->val.dim(0)});
}

Var mean_abs_diff(const Var& a, const Var& b) { return ad::mean(ad::abs_(ad::sub(a, b))); }

// Numerically stable softplus: max(x,0) + log(1 + exp(-|x|)).
Var softplus(const Var& x) {
    Var stable = ad::log_(ad::add_scalar(ad::exp_(ad::neg(ad::abs_(x))), 1.0));
    return ad::add(ad::relu(x), stable);
}

}  // namespace

Var MeanAbsPerceptual::distance(const Var& a, const Var& b) const { return mean_abs_diff(a, b); }

RandomFeaturePerceptual::RandomFeaturePerceptual(uint64_t seed, int64_t channels) {
    Rng rng = Rng::substream(seed, "randfeat-perceptual");
    w1_ = Tensor({channels, 3, 3, 3});
    w2_ = Tensor({channels, 3, 5, 5});
    b_ = Tensor({channels});
    const double s1 = 1.0 / std::sqrt(27.0), s2 = 1.0 / std::sqrt(75.0);
    for (int64_t i = 0; i < w1_.numel(); ++i) w1_[i] = rng.normal() * s1;
    for (int64_t i = 0; i < w2_.numel(); ++i) w2_[i] = rng.normal() * s2;
}

Var RandomFeaturePerceptual::distance(const Var& a, const Var& b) const {
    auto feats = [&](const Var& x) {
        Var f1 = ad::tanh_(ad::conv2d(x, ad::constant(w1_), ad::constant(b_), 1, 1));
        Var f2 = ad::tanh_(ad::conv2d(x, ad::constant(w2_), ad::constant(b_), 2, 2));
        return std::make_pair(f1, f2);
    };
    auto [a1, a2] = feats(a);
    auto [b1, b2] = feats(b);
    return ad::add(mean_abs_diff(a1, b1), mean_abs_diff(a2, b2));
}

std::unique_ptr<PerceptualMetric> make_perceptual(const std::string& id, uint64_t seed) {
    if (id == "mad") return std::make_unique<MeanAbsPerceptual>();
    if (id == "randfeat") return std::make_unique<RandomFeaturePerceptual>(seed);
    throw ConfigError("make_perceptual: unknown backend '" + id + "'");
}

PatchDiscriminator::PatchDiscriminator(int64_t base_channels, uint64_t seed) {
    Rng rng = Rng::substream(seed, "patch-discriminator-init");
    c1_ = nn::Conv2d(pg_, "disc.c1", 3, base_channels, 3, 2, 1, rng);
    c2_ = nn::Conv2d(pg_, "disc.c2", base_channels, base_channels, 3, 2, 1, rng);
    c3_ = nn::Conv2d(pg_, "disc.c3", base_channels, 1, 3, 1, 1, rng);
}

Var PatchDiscriminator::logits(Tape& tape, const Var& image) const {
    Var h = ad::relu(c1_.forward(tape, image));
    h = ad::relu(c2_.forward(tape, h));
    return c3_.forward(tape, h);
}

ReconLoss recon_loss(const Var& x, const Var& x_hat, double lambda_lpips, double lambda_gan,
                     const PerceptualMetric& perceptual, const PatchDiscriminator* discriminator,
                     Tape* disc_tape) {
    if (!x->val.same_shape(x_hat->val))
        throw ConfigError("recon_loss: shape mismatch " + x->val.shape_str() + " vs " +
                          x_hat->val.shape_str());
    if (!x->val.all_finite() || !x_hat->val.all_finite())
        throw NumericError("recon_loss: non-finite inputs");

    ReconLoss out;
    out.l1 = mean_abs_diff(x, x_hat);
    out.total = out.l1;
    if (lambda_lpips > 0.0) {
        out.perceptual = perceptual.distance(x, x_hat);
        out.total = ad::add(out.total, ad::scale(out.perceptual, lambda_lpips));
    }
    if (lambda_gan > 0.0 && discriminator != nullptr) {
        if (disc_tape == nullptr)
            throw ConfigError("recon_loss: adversarial term requires a discriminator tape");
        // non-saturating generator objective on patch logits; softplus
        // keeps the reported component non-negative
        Var logits = discriminator->logits(*disc_tape, x_hat);
        out.adversarial = ad::mean(softplus(ad::neg(logits)));
        out.total = ad::add(out.total, ad::scale(out.adversarial, lambda_gan));
    }
    return out;
}

Var ssr_loss(const Var& latent_tokens, const Tensor& gram_ref, bool literal) {
    if (latent_tokens->val.rank() != 2) throw ConfigError("ssr_loss: tokens must be [N x d]");
    const int64_t N = latent_tokens->val.dim(0);
    if (gram_ref.rank() != 2 || gram_ref.dim(0) != N || gram_ref.dim(1) != N)
        throw ConfigError("ssr_loss: gram_ref shape " + gram_ref.shape_str() +
                          " does not match N = " + std::to_string(N));
    Var gram = literal ? ad::matmul(latent_tokens, ad::transpose(latent_tokens))
                       : gram_of_tokens(latent_tokens);
    Var fro2 = ad::sum(ad::square(ad::sub(gram, ad::constant(gram_ref))));
    if (literal) return fro2;
    return ad::scale(fro2, 1.0 / static_cast<double>(N * N));
}

PerturbedPair mcr_perturb(const Var& latent_tokens, const PerturbationSpec& spec, uint64_t seed,
                          double rms_eps) {
    if (latent_tokens->val.rank() != 2) throw ConfigError("mcr_perturb: tokens must be [N x d]");
    if (spec.angle_small_deg <= 0.0 || spec.angle_small_deg >= spec.angle_large_deg ||
        spec.angle_large_deg > 180.0)
        throw ConfigError("mcr_perturb: require 0 < small < large <= 180 degrees");
    const int64_t N = latent_tokens->val.dim(0);
    const int64_t d = latent_tokens->val.dim(1);

    Rng rng = Rng::substream(seed, "mcr-perturb");
    // One fraction drives both levels: each theta is marginally uniform in
    // (0, max] and the large step always exceeds the medium one along the
    // same direction.
    double frac = 1.0;
    if (spec.sampling == PerturbationSpec::Sampling::kUniformUpToMax)
        frac = 1.0 - rng.uniform();  // (0, 1]
    const double theta_m = frac * spec.angle_small_deg * M_PI / 180.0;
    const double theta_l = frac * spec.angle_large_deg * M_PI / 180.0;

    // Shared (or per-location) random unit direction.
    Tensor u({N, d});
    if (spec.per_location_direction) {
        for (int64_t i = 0; i < N; ++i) {
            double ss = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                u.at(i, c) = rng.normal();
                ss += u.at(i, c) * u.at(i, c);
            }
            const double inv = 1.0 / std::sqrt(ss);
            for (int64_t c = 0; c < d; ++c) u.at(i, c) *= inv;
        }
    } else {
        std::vector<double> dir(static_cast<size_t>(d));
        double ss = 0.0;
        for (auto& v : dir) {
            v = rng.normal();
            ss += v * v;
        }
        const double inv = 1.0 / std::sqrt(ss);
        for (auto& v : dir) v *= inv;
        for (int64_t i = 0; i < N; ++i)
            for (int64_t c = 0; c < d; ++c) u.at(i, c) = dir[static_cast<size_t>(c)];
    }

    // Mask rows where the rotation is undefined: zero-norm latents or
    // directions numerically parallel to the latent.
    PerturbMeta meta;
    meta.theta_small_rad = theta_m;
    meta.theta_large_rad = theta_l;
    Tensor mask({N}), inv_mask({N});
    {
        const Tensor& zv = latent_tokens->val;
        for (int64_t i = 0; i < N; ++i) {
            double zn = 0.0, dot = 0.0, un = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                zn += zv.at(i, c) * zv.at(i, c);
                dot += zv.at(i, c) * u.at(i, c);
                un += u.at(i, c) * u.at(i, c);
            }
            bool ok = zn > 0.0;
            if (ok) {
                const double cos2 = (dot * dot) / (zn * un);
                ok = cos2 < 1.0 - 1e-12;
            }
            mask[i] = ok ? 1.0 : 0.0;
            inv_mask[i] = ok ? 0.0 : 1.0;
            if (!ok) meta.skipped_locations += 1;
        }
    }

    Var uc = ad::constant(u);
    Var zhat = ad::l2_normalize_rows(latent_tokens, 1e-24);
    Var u_dot_zhat = rowsum(ad::mul(uc, zhat));                        // [N]
    Var u_perp = ad::sub(uc, ad::mul_colvec(zhat, u_dot_zhat));        // [N x d]
    Var perp_norm = ad::sqrt_(ad::add_scalar(rowsum(ad::square(u_perp)), 1e-24));
    Var ones = ad::constant(Tensor::full({N}, 1.0));
    Var uhat_perp = ad::mul_colvec(u_perp, ad::div(ones, perp_norm));  // [N x d]
    Var znorm = ad::sqrt_(ad::add_scalar(rowsum(ad::square(latent_tokens)), 1e-24));

    auto rotate = [&](double theta) {
        Var rotated = ad::add(ad::scale(latent_tokens, std::cos(theta)),
                              ad::scale(ad::mul_colvec(uhat_perp, znorm), std::sin(theta)));
        Var mixed = ad::add(ad::mul_colvec(rotated, ad::constant(mask)),
                            ad::mul_colvec(latent_tokens, ad::constant(inv_mask)));
        return ad::rms_normalize_rows(mixed, rms_eps);
    };

    PerturbedPair out;
    out.medium = rotate(theta_m);
    out.large = rotate(theta_l);
    out.meta = meta;
    return out;
}

Var mcr_loss(const Var& xhat_r, const Var& xhat_m, const Var& xhat_l,
             const PerceptualMetric& perceptual) {
    if (!xhat_r->val.same_shape(xhat_m->val) || !xhat_m->val.same_shape(xhat_l->val))
        throw ConfigError("mcr_loss: decoded shapes must match");
    Var sg_r = ad::stop_gradient(xhat_r);
    Var sg_m = ad::stop_gradient(xhat_m);
    Var medium = ad::add(mean_abs_diff(xhat_m, sg_r), perceptual.distance(xhat_m, sg_r));
    Var large = ad::add(mean_abs_diff(xhat_l, sg_m), perceptual.distance(xhat_l, sg_m));
    return ad::add(medium, large);
}

Var scr_loss(const Var& latent_tokens, const Tensor& z_t, const Tensor& z_tg,
             int64_t* flagged_zero_norms) {
    if (latent_tokens->val.rank() != 2) throw ConfigError("scr_loss: tokens must be [N x d]");
    const int64_t N = latent_tokens->val.dim(0), d = latent_tokens->val.dim(1);
    if (z_t.rank() != 2 || z_t.dim(0) != N || z_t.dim(1) != d)
        throw ConfigError("scr_loss: target tokens shape " + z_t.shape_str() +
                          " does not match latents");
    if (z_tg.numel() != d) throw ConfigError("scr_loss: pooled target length mismatch");

    constexpr double kEps = 1e-12;
    if (flagged_zero_norms) {
        *flagged_zero_norms = 0;
        for (int64_t i = 0; i < N; ++i) {
            double ss = 0.0;
            for (int64_t c = 0; c < d; ++c) ss += latent_tokens->val.at(i, c) *
                                                  latent_tokens->val.at(i, c);
            if (ss == 0.0) ++(*flagged_zero_norms);
        }
    }

    // token-level term
    Var zhat = ad::l2_normalize_rows(latent_tokens, kEps);
    Tensor zt_hat = unit_normalize_tokens(z_t, kEps);
    Var cos_tok = rowsum(ad::mul(zhat, ad::constant(zt_hat)));  // [N]
    Var tok_term = ad::mean(ad::sub(ad::constant(Tensor::full({N}, 1.0)), cos_tok));

    // pooled term
    Var pooled = ad::reshape(ad::mean_rows(latent_tokens), {1, d});
    Var pooled_hat = ad::l2_normalize_rows(pooled, kEps);
    Tensor ztg_hat = unit_normalize_tokens(z_tg.reshaped({1, d}), kEps);
    Var cos_pool = rowsum(ad::mul(pooled_hat, ad::constant(ztg_hat)));  // [1]
    Var pool_term = ad::sub(ad::constant(Tensor::scalar(1.0)),
                            ad::reshape(cos_pool, {1}));

    return ad::add(ad::reshape(pool_term, {1}), tok_term);
}

TotalLoss total_loss(const ReconLoss& recon, const std::optional<Var>& ssr,
                     const std::optional<Var>& mcr, const std::optional<Var>& scr,
                     const TotalLossWeights& w) {
    if (!recon.total) throw ConfigError("total_loss: reconstruction term is required");
    auto require = [](const std::optional<Var>& v, double weight, const char* name) {
        if (weight > 0.0 && !v.has_value())
            throw ConfigError(std::string("total_loss: component '") + name +
                              "' missing but its weight is positive");
    };
    require(ssr, w.lambda_ssr, "ssr");
    require(mcr, w.lambda_mcr, "mcr");
    require(scr, w.lambda_scr, "scr");

    TotalLoss out;
    out.total = recon.total;
    if (w.lambda_ssr > 0.0) out.total = ad::add(out.total, ad::scale(*ssr, w.lambda_ssr));
    if (w.lambda_mcr > 0.0) out.total = ad::add(out.total, ad::scale(*mcr, w.lambda_mcr));
    if (w.lambda_scr > 0.0) out.total = ad::add(out.total, ad::scale(*scr, w.lambda_scr));

    LossReport& r = out.report;
    r.total = out.total->val[0];
    r.components["l1"] = recon.l1->val[0];
    r.weights["l1"] = 1.0;
    if (recon.perceptual) {
        r.components["lpips"] = recon.perceptual->val[0];
        r.weights["lpips"] = w.lambda_lpips;
    }
    if (recon.adversarial) {
        r.components["gan"] = recon.adversarial->val[0];
        r.weights["gan"] = w.lambda_gan;
    }
    if (ssr && w.lambda_ssr > 0.0) {
        r.components["ssr"] = (*ssr)->val[0];
        r.weights["ssr"] = w.lambda_ssr;
    }
    if (mcr && w.lambda_mcr > 0.0) {
        r.components["mcr"] = (*mcr)->val[0];
        r.weights["mcr"] = w.lambda_mcr;
    }
    if (scr && w.lambda_scr > 0.0) {
        r.components["scr"] = (*scr)->val[0];
        r.weights["scr"] = w.lambda_scr;
    }
    return out;
}

}  // namespace pae
