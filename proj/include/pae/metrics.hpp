#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pae/image.hpp"
#include "pae/losses.hpp"
#include "pae/tensor.hpp"

namespace pae {

// Integer token labels in [0, k).
struct TokenLabels {
    std::vector<int> labels;
    int k = 1;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

// Majority-vote downsampling of a pixel label grid to the latent grid.
// Ties go to the smaller original label id; distinct surviving labels are
// compacted to [0, k) preserving their order.
TokenLabels project_mask_to_latent(const Mask& mask, int64_t rows, int64_t cols);

// A_ij = exp(<z_i_hat, z_j_hat> / sigma), A_ii = 0, on l2-normalized
// tokens (zero tokens eps-normalized and counted via *flagged).
Tensor token_affinity(const Tensor& tokens, double sigma, int64_t* flagged = nullptr);

// Normalized spectral clustering: symmetric-normalized Laplacian, bottom-k
// eigenvectors, row-normalized, k-means with a fixed seed stream
// (k-means++ init, 10 restarts, best inertia). Deterministic given seed.
TokenLabels spectral_cluster(const Tensor& affinity, int64_t k, uint64_t seed,
                             int64_t* isolated = nullptr);

// Geometric-mean normalized mutual information with natural logs. When
// either entropy is zero: 1 if both partitions are constant, else 0.
double nmi(const TokenLabels& a, const TokenLabels& b);

// Spatial Structure Coherence for one latent instance.
double ssc(const Tensor& tokens, const TokenLabels& ground_truth, double sigma, uint64_t seed);

// Decoder used by LPC: latent tensor in, image tensor out.
using DecodeFn = std::function<Tensor(const Tensor&)>;

struct LpcConfig {
    std::vector<double> scales{0.1, 0.5, 1.0, 2.0};
    int64_t directions = 8;  // M per sample
    uint64_t seed = 0;
};

// Weights w_s = (1/rho_s) / sum_r (1/rho_r): smaller scales weigh more.
std::vector<double> lpc_weights(const std::vector<double>& scales);

// Multi-scale local perceptual continuity over a set of latents.
// Per sample and unit direction u: eps = rho * ||z||_2, value averages
// perc(D(z+eps u), D(z)) and perc(D(z-eps u), D(z)).
double lpc(const DecodeFn& decode, const std::vector<Tensor>& latents, const LpcConfig& cfg,
           const PerceptualMetric& perceptual);
// Single-scale variant used by tests and the multi-scale reduction.
double lpc_single_scale(const DecodeFn& decode, const std::vector<Tensor>& latents, double rho,
                        int64_t directions, uint64_t seed, const PerceptualMetric& perceptual);

struct GsqResult {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_subset;
    std::vector<std::vector<int>> subset_class_ids;
    int64_t skipped_subsets = 0;
};

// Nearest-neighbor label purity of pooled latents over random class
// subsets: per subset, mean-center, l2-normalize, 1-NN under cosine,
// score label agreement. Mean/std over subsets.
GsqResult gsq(const Tensor& pooled, const std::vector<int>& labels, int64_t subsets,
              int64_t classes_per_subset, uint64_t seed);

// Entropy-based effective rank of mean-centered features, normalized by
// the channel count. All-identical rows give 1/C (flagged via *degenerate).
double erank(const Tensor& features, bool* degenerate = nullptr);

struct GeometryReport {
    std::optional<double> ssc;
    std::optional<double> lpc;
    std::optional<double> gsq_mean;
    std::optional<double> gsq_std;
    std::optional<double> erank;
    std::map<std::string, std::string> omitted;  // field -> reason

    // eval_meta: everything needed to reproduce the numbers bit-exactly
    uint64_t seed = 0;
    double sigma = 0.1;
    std::vector<double> scales{0.1, 0.5, 1.0, 2.0};
    std::vector<double> scale_weights;
    int64_t lpc_directions = 8;
    int64_t gsq_subsets = 5;
    int64_t gsq_classes = 10;
    std::vector<std::vector<int>> gsq_subset_class_ids;

    std::string to_json() const;
    static GeometryReport from_json(const std::string& text);
};

struct GeometryInputs {
    std::vector<Tensor> latents;                 // [d x H x W] each
    std::optional<DecodeFn> decoder;
    std::optional<std::vector<Mask>> masks;      // for SSC
    std::optional<std::vector<int>> labels;      // for GSQ
};

struct GeometryConfig {
    double sigma = 0.1;
    LpcConfig lpc;
    int64_t gsq_subsets = 5;
    int64_t gsq_classes = 10;
    uint64_t seed = 0;
    std::string perceptual = "mad";
};

GeometryReport geometry_report(const GeometryInputs& inputs, const GeometryConfig& cfg);

// Latent [d x H x W] -> token matrix [(H W) x d].
Tensor latent_tokens(const Tensor& latent_chw);
// Global average pool of each latent into one row per sample.
Tensor pooled_features(const std::vector<Tensor>& latents);

}  // namespace pae
