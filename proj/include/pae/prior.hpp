#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "pae/backbone.hpp"
#include "pae/nn.hpp"

namespace pae {

// Token-level Gram conventions shared by prior refinement and SSR:
// tokens are unit-normalized per token (l2 over channels, eps-guarded)
// before the Gram product, and Frobenius losses divide by N^2 so the
// scale is resolution independent.
Tensor unit_normalize_tokens(const Tensor& tokens, double eps = 1e-12);
Tensor gram_matrix(const Tensor& tokens);  // tokens [N x C] -> [N x N]

ad::Var gram_of_tokens(const ad::Var& tokens, double eps = 1e-12);  // normalize + T T^t

// Fixed supervision bundle for one image.
struct RefinedPrior {
    Tensor z_t;      // [N x d]
    Tensor z_tg;     // [d], mean pool of z_t
    Tensor gram_ref; // [N x N], from channel-normalized refined tokens
    std::string config_hash;
};

// Spatially refined structural reference: bilinear upsample of the token
// grid, per-channel Gaussian blur with sigma = strength * 4 px, bilinear
// downsample back. strength must lie in [0,1].
FeatureMap spatial_refine(const FeatureMap& features, int64_t upsample_size,
                          double lowpass_strength);

struct RefineConfig {
    int64_t target_dim = 32;      // d
    int64_t proj_hidden = 64;     // projector width (reduced vs decoder)
    int64_t proj_heads = 2;
    int64_t decoder_depth = 4;    // reconstruction decoder (ViT-style)
    int64_t decoder_hidden = 1024;
    int64_t decoder_heads = 4;
    int64_t upsample_size = 256;
    double lowpass_strength = 0.4;
    double lambda_rep = 1.0;
    double lambda_gram = 1.0;
    double lr = 2e-4;
    int64_t steps = 200;
    int64_t batch_images = 4;
    uint64_t seed = 0;

    std::string hash() const;
};

struct LossParts {
    ad::Var total;
    std::map<std::string, double> components;
};

// Projector/decoder pair turning raw frozen features into a compact
// semantic target and its reconstruction.
class PriorRefiner {
public:
    PriorRefiner(const RefineConfig& cfg, int64_t feature_dim, int64_t grid_rows,
                 int64_t grid_cols);

    // Z_T = P^t(H), H_hat = Q^t(Z_T).
    std::pair<ad::Var, ad::Var> refine_forward(nn::Tape& tape, const ad::Var& features) const;

    nn::ParamGroup& params() { return pg_; }
    const RefineConfig& config() const { return cfg_; }
    int64_t feature_dim() const { return feature_dim_; }

private:
    RefineConfig cfg_;
    int64_t feature_dim_;
    int64_t rows_, cols_;
    nn::ParamGroup pg_;
    nn::Linear proj_embed_, proj_out_;
    nn::PosEmbedding proj_pos_;
    nn::TransformerBlock proj_block_;
    nn::Conv2d proj_conv_;
    nn::Linear dec_embed_, dec_out_;
    nn::PosEmbedding dec_pos_;
    std::vector<nn::TransformerBlock> dec_blocks_;
};

// total = lambda_rep * mean((H_hat - H)^2)
//       + lambda_gram * ||Gram(Z_T) - gram_ref||_F^2 / N^2.
// components: "rep", "gram", plus undivided "gram_fro2" for diagnostics.
LossParts refinement_loss(const ad::Var& z_t, const ad::Var& h_hat, const Tensor& h_vfm,
                          const Tensor& gram_ref, double lambda_rep, double lambda_gram);

struct RefinementArtifacts {
    struct LogEntry {
        int64_t step;
        double total;
        double rep;
        double gram;
    };
    std::vector<LogEntry> training_log;
    int64_t parameter_count = 0;
};

// Trains the refiner on precomputed features, then freezes per-image
// priors into `store_dir` (content-addressed files + manifest). Fully
// deterministic given the config seed.
RefinementArtifacts train_refinement(const RefineConfig& cfg,
                                     const std::vector<FeatureMap>& features,
                                     const std::filesystem::path& store_dir,
                                     const std::string& backbone_id);

// Prior store access. Reads verify the recorded content hashes and throw
// FormatError on any mismatch.
struct PriorStore {
    std::filesystem::path dir;
    std::string config_hash;
    std::string backbone_id;
    int64_t count = 0;

    RefinedPrior load(int64_t index) const;
};

void write_prior_store(const std::filesystem::path& dir, const std::vector<RefinedPrior>& priors,
                       const std::string& config_hash, const std::string& backbone_id);
PriorStore open_prior_store(const std::filesystem::path& dir);

}  // namespace pae
