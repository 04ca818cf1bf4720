#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "pae/nn.hpp"
#include "pae/tensor.hpp"

namespace pae {

// Pluggable perceptual distance. The hermetic default is mean absolute
// pixel difference; a fixed multi-scale random-feature distance is
// available where a learned-metric stand-in is wanted. Both are
// differentiable through the graph API.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual ad::Var distance(const ad::Var& a, const ad::Var& b) const = 0;
    virtual std::string id() const = 0;

    double distance(const Tensor& a, const Tensor& b) const {
        return distance(ad::constant(a), ad::constant(b))->val[0];
    }
};

class MeanAbsPerceptual final : public PerceptualMetric {
public:
    ad::Var distance(const ad::Var& a, const ad::Var& b) const override;
    std::string id() const override { return "mad"; }
};

// Fixed random conv filters at several scales; distance is the mean
// absolute difference of the feature stacks. Frozen at construction.
class RandomFeaturePerceptual final : public PerceptualMetric {
public:
    explicit RandomFeaturePerceptual(uint64_t seed, int64_t channels = 8);
    ad::Var distance(const ad::Var& a, const ad::Var& b) const override;
    std::string id() const override { return "randfeat"; }

private:
    Tensor w1_, w2_;  // conv stacks, stride 1 and 2
    Tensor b_;
};

std::unique_ptr<PerceptualMetric> make_perceptual(const std::string& id, uint64_t seed);

// Small convolutional patch discriminator used by the optional
// adversarial term (hinge losses, smoke scale).
class PatchDiscriminator {
public:
    PatchDiscriminator(int64_t base_channels, uint64_t seed);
    ad::Var logits(nn::Tape& tape, const ad::Var& image) const;  // [1 x hp x wp]
    nn::ParamGroup& params() { return pg_; }

private:
    nn::ParamGroup pg_;
    nn::Conv2d c1_, c2_, c3_;
};

struct LossReport {
    double total = 0.0;
    std::map<std::string, double> components;  // l1, lpips, gan, ssr, mcr, scr
    std::map<std::string, double> weights;
};

struct ReconLoss {
    ad::Var total;
    ad::Var l1;
    ad::Var perceptual;  // null when weight is 0
    ad::Var adversarial; // null when disabled
};

// L1 + lambda_lpips * perceptual + lambda_gan * adversarial. The
// adversarial term is 0 when no discriminator is supplied.
ReconLoss recon_loss(const ad::Var& x, const ad::Var& x_hat, double lambda_lpips,
                     double lambda_gan, const PerceptualMetric& perceptual,
                     const PatchDiscriminator* discriminator = nullptr,
                     nn::Tape* disc_tape = nullptr);

// || Gram(Z) - gram_ref ||_F^2 with the shared token-normalization
// convention and / N^2 scaling; `literal` skips both (raw Eq. form).
ad::Var ssr_loss(const ad::Var& latent_tokens, const Tensor& gram_ref, bool literal = false);

struct PerturbationSpec {
    double angle_small_deg = 42.5;
    double angle_large_deg = 85.0;
    enum class Sampling { kUniformUpToMax, kFixed } sampling = Sampling::kUniformUpToMax;
    bool per_location_direction = false;
};

struct PerturbMeta {
    double theta_small_rad = 0.0;
    double theta_large_rad = 0.0;
    int64_t skipped_locations = 0;  // zero-norm or direction-parallel rows
};

// Spherical perturbation of latent tokens [N x d] (rows = locations, all
// on the RMS shell): rotate each row toward a shared random direction by
// theta, then re-apply RMS normalization. Both levels share the same
// direction and the same uniform draw, so theta_l = (l/s) * theta_m > theta_m.
struct PerturbedPair {
    ad::Var medium;
    ad::Var large;
    PerturbMeta meta;
};
PerturbedPair mcr_perturb(const ad::Var& latent_tokens, const PerturbationSpec& spec,
                          uint64_t seed, double rms_eps);

// Cascaded consistency: ||x_m - sg(x_r)||_1 + perc(x_m, sg(x_r))
//                     + ||x_l - sg(x_m)||_1 + perc(x_l, sg(x_m)).
ad::Var mcr_loss(const ad::Var& xhat_r, const ad::Var& xhat_m, const ad::Var& xhat_l,
                 const PerceptualMetric& perceptual);

// (1 - cos(pooled targets)) + mean over tokens of (1 - cos(token pair)).
// All vectors are l2-normalized first (eps-guarded); zero-norm rows are
// counted into *flagged_zero_norms when provided.
ad::Var scr_loss(const ad::Var& latent_tokens, const Tensor& z_t, const Tensor& z_tg,
                 int64_t* flagged_zero_norms = nullptr);

struct TotalLossWeights {
    double lambda_lpips = 1.0;
    double lambda_gan = 0.5;
    double lambda_ssr = 0.2;
    double lambda_mcr = 0.5;
    double lambda_scr = 1.0;
};

// L_total = L_recon + lambda_ssr L_SSR + lambda_mcr L_MCR + lambda_scr L_SCR.
// Components with positive weight must be present.
struct TotalLoss {
    ad::Var total;
    LossReport report;
};
TotalLoss total_loss(const ReconLoss& recon, const std::optional<ad::Var>& ssr,
                     const std::optional<ad::Var>& mcr, const std::optional<ad::Var>& scr,
                     const TotalLossWeights& weights);

}  // namespace pae
