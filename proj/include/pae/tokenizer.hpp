#pragma once

#include <optional>

#include "pae/backbone.hpp"
#include "pae/nn.hpp"

namespace pae {

// Latent code on the RMS sphere: per spatial location, the mean square
// over channels is 1 (up to 1e-3), except all-zero locations.
struct LatentCode {
    Tensor z;  // [d x H' x W']
    double rms_eps = 1e-6;
    int64_t zero_locations = 0;  // locations left at zero by the eps guard

    int64_t channels() const { return z.dim(0); }
    int64_t grid_h() const { return z.dim(1); }
    int64_t grid_w() const { return z.dim(2); }
};

struct TokenizerConfig {
    int64_t latent_dim = 32;  // d
    int64_t latent_h = 16;
    int64_t latent_w = 16;
    int64_t dam_depth = 6;    // K
    int64_t dam_hidden = 1024;
    int64_t dam_heads = 4;
    int64_t proj_hidden = 64;
    int64_t proj_heads = 2;
    int64_t dec_hidden = 64;  // pixel decoder width (ViT-style, desk scale)
    int64_t dec_depth = 2;
    int64_t dec_heads = 2;
    double rms_eps = 1e-6;
    bool global_rms = false;  // single RMS over the whole tensor instead of per location

    std::string hash() const;
};

// Scale-and-shift fusion with channel LayerNorm, Eq-style:
// H_z = LayerNorm(H_vfm * (1 + gamma) + beta), normalization over the
// channel axis with no affine terms.
ad::Var dam_fuse(const ad::Var& h_vfm, const ad::Var& gamma, const ad::Var& beta,
                 double ln_eps = 1e-6);

// Per-location RMS normalization of a [d x H x W] latent. Locations whose
// channel vector is all zero stay zero and are counted.
LatentCode rms_normalize(const Tensor& z_tilde_chw, double eps, bool global_rms = false);

class Tokenizer {
public:
    Tokenizer(const TokenizerConfig& cfg, int64_t feature_dim, int64_t token_rows,
              int64_t token_cols, int64_t pixel_patch, uint64_t seed);

    // DAM: pixel tokens cross-attend to frozen features, then modulate
    // them through the zero-initialized fusion. Returns [N x D].
    ad::Var dam_forward(nn::Tape& tape, const Tensor& h_vfm, const ImageTensor& image) const;

    // Full encode graph: image + features -> latent tokens [N' x d] on the
    // RMS shell (rows are spatial locations).
    ad::Var encode_graph(nn::Tape& tape, const Tensor& h_vfm, const ImageTensor& image) const;

    // Decode graph: latent tokens [N' x d] -> image [3 x H x W].
    ad::Var decode_graph(nn::Tape& tape, const ad::Var& latent_tokens) const;

    // Convenience non-graph entry points.
    LatentCode encode(const ImageTensor& image, const Backend& backend) const;
    ImageTensor reconstruct(const LatentCode& z) const;

    nn::ParamGroup& params() { return pg_; }
    const nn::ParamGroup& params() const { return pg_; }
    const TokenizerConfig& config() const { return cfg_; }
    int64_t token_rows() const { return rows_; }
    int64_t token_cols() const { return cols_; }
    int64_t downsample_factor() const { return factor_; }

    // Latent layout helpers.
    LatentCode latent_from_tokens(const Tensor& tokens) const;  // [N' x d] -> LatentCode
    Tensor tokens_from_latent(const LatentCode& code) const;    // LatentCode -> [N' x d]

private:
    TokenizerConfig cfg_;
    int64_t feature_dim_;
    int64_t rows_, cols_;     // backbone token grid
    int64_t patch_;           // pixel patch aligned with the backbone grid
    int64_t factor_;          // token grid -> latent grid downsample factor
    int64_t image_h_, image_w_;
    nn::ParamGroup pg_;

    // DAM
    nn::Linear pixel_embed_;
    nn::PosEmbedding pixel_pos_;
    std::vector<nn::CrossBlock> dam_blocks_;
    nn::Linear fusion_;  // W, zero-initialized; splits into (gamma, beta)

    // projector
    nn::Linear proj_embed_, proj_out_;
    nn::PosEmbedding proj_pos_;
    nn::TransformerBlock proj_block_;
    nn::Conv2d proj_conv_;

    // deprojector + pixel decoder
    nn::Linear deproj_embed_, deproj_expand_;
    nn::PosEmbedding dec_pos_;
    std::vector<nn::TransformerBlock> dec_blocks_;
    nn::Linear dec_out_;
};

}  // namespace pae
