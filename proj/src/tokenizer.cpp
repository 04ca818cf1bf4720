#include "pae/tokenizer.hpp"

#include <cmath>
#include <sstream>

#include "pae/io.hpp"

namespace pae {

using ad::Var;
using nn::Tape;

std::string TokenizerConfig::hash() const {
    std::ostringstream os;
    os << latent_dim << "|" << latent_h << "|" << latent_w << "|" << dam_depth << "|"
       << dam_hidden << "|" << dam_heads << "|" << proj_hidden << "|" << proj_heads << "|"
       << dec_hidden << "|" << dec_depth << "|" << dec_heads << "|" << rms_eps << "|"
       << global_rms;
    return hash_hex(fnv1a64(os.str()));
}

Var dam_fuse(const Var& h_vfm, const Var& gamma, const Var& beta, double ln_eps) {
    Var one_plus_gamma = ad::add_scalar(gamma, 1.0);
    Var modulated = ad::add(ad::mul(h_vfm, one_plus_gamma), beta);
    return ad::layernorm_rows(modulated, ln_eps);
}

LatentCode rms_normalize(const Tensor& z_tilde_chw, double eps, bool global_rms) {
    if (z_tilde_chw.rank() != 3) throw ConfigError("rms_normalize: expected [d,H,W]");
    if (eps <= 0.0) throw ConfigError("rms_normalize: eps must be positive");
    if (!z_tilde_chw.all_finite()) throw NumericError("rms_normalize: non-finite input");
    const int64_t d = z_tilde_chw.dim(0), H = z_tilde_chw.dim(1), W = z_tilde_chw.dim(2);

    LatentCode code;
    code.rms_eps = eps;
    code.z = Tensor({d, H, W});

    if (global_rms) {
        double ms = 0.0;
        for (int64_t i = 0; i < z_tilde_chw.numel(); ++i) ms += z_tilde_chw[i] * z_tilde_chw[i];
        ms /= static_cast<double>(z_tilde_chw.numel());
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (int64_t i = 0; i < z_tilde_chw.numel(); ++i) code.z[i] = z_tilde_chw[i] * inv;
        if (ms == 0.0) code.zero_locations = H * W;
        return code;
    }

    for (int64_t h = 0; h < H; ++h) {
        for (int64_t w = 0; w < W; ++w) {
            double ms = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                const double v = z_tilde_chw.at(c, h, w);
                ms += v * v;
            }
            ms /= static_cast<double>(d);
            if (ms == 0.0) code.zero_locations += 1;
            const double inv = 1.0 / std::sqrt(ms + eps);
            for (int64_t c = 0; c < d; ++c) code.z.at(c, h, w) = z_tilde_chw.at(c, h, w) * inv;
        }
    }
    return code;
}

Tokenizer::Tokenizer(const TokenizerConfig& cfg, int64_t feature_dim, int64_t token_rows,
                     int64_t token_cols, int64_t pixel_patch, uint64_t seed)
    : cfg_(cfg),
      feature_dim_(feature_dim),
      rows_(token_rows),
      cols_(token_cols),
      patch_(pixel_patch) {
    if (token_rows % cfg.latent_h != 0 || token_cols % cfg.latent_w != 0)
        throw ConfigError("Tokenizer: token grid " + std::to_string(token_rows) + "x" +
                          std::to_string(token_cols) +
                          " is not an integer multiple of the latent grid " +
                          std::to_string(cfg.latent_h) + "x" + std::to_string(cfg.latent_w));
    const int64_t fr = token_rows / cfg.latent_h;
    const int64_t fc = token_cols / cfg.latent_w;
    if (fr != fc)
        throw ConfigError("Tokenizer: anisotropic downsample factors are not supported");
    factor_ = fr;
    image_h_ = rows_ * patch_;
    image_w_ = cols_ * patch_;

    Rng rng = Rng::substream(seed, "tokenizer-init");
    const int64_t N = rows_ * cols_;
    const int64_t pixdim = 3 * patch_ * patch_;

    pixel_embed_ = nn::Linear(pg_, "dam.embed", pixdim, cfg.dam_hidden, rng);
    pixel_pos_ = nn::PosEmbedding(pg_, "dam", N, cfg.dam_hidden, rng);
    for (int64_t i = 0; i < cfg.dam_depth; ++i)
        dam_blocks_.emplace_back(pg_, "dam.block" + std::to_string(i), cfg.dam_hidden,
                                 feature_dim, cfg.dam_heads, cfg.dam_hidden * 4, rng);
    // W = 0 at init: training starts from H_z = LayerNorm(H_vfm) and no
    // image detail can leak through until W moves.
    fusion_ = nn::Linear(pg_, "dam.fusion", cfg.dam_hidden, 2 * feature_dim, rng,
                         /*zero_init=*/true);

    proj_embed_ = nn::Linear(pg_, "proj.embed", feature_dim, cfg.proj_hidden, rng);
    proj_pos_ = nn::PosEmbedding(pg_, "proj", N, cfg.proj_hidden, rng);
    proj_block_ = nn::TransformerBlock(pg_, "proj.block", cfg.proj_hidden, cfg.proj_heads,
                                       cfg.proj_hidden * 4, rng);
    proj_conv_ =
        nn::Conv2d(pg_, "proj.conv", cfg.proj_hidden, cfg.proj_hidden, 3, factor_, 1, rng);
    proj_out_ = nn::Linear(pg_, "proj.out", cfg.proj_hidden, cfg.latent_dim, rng);

    deproj_embed_ = nn::Linear(pg_, "deproj.embed", cfg.latent_dim, cfg.dec_hidden, rng);
    deproj_expand_ = nn::Linear(pg_, "deproj.expand", cfg.dec_hidden,
                                cfg.dec_hidden * factor_ * factor_, rng);
    dec_pos_ = nn::PosEmbedding(pg_, "dec", N, cfg.dec_hidden, rng);
    for (int64_t i = 0; i < cfg.dec_depth; ++i)
        dec_blocks_.emplace_back(pg_, "dec.block" + std::to_string(i), cfg.dec_hidden,
                                 cfg.dec_heads, cfg.dec_hidden * 4, rng);
    dec_out_ = nn::Linear(pg_, "dec.out", cfg.dec_hidden, pixdim, rng);
}

Var Tokenizer::dam_forward(Tape& tape, const Tensor& h_vfm, const ImageTensor& image) const {
    if (h_vfm.rank() != 2 || h_vfm.dim(0) != rows_ * cols_ || h_vfm.dim(1) != feature_dim_)
        throw ConfigError("dam_forward: features must be [" + std::to_string(rows_ * cols_) +
                          " x " + std::to_string(feature_dim_) + "], got " + h_vfm.shape_str());
    if (image.height() != image_h_ || image.width() != image_w_)
        throw ConfigError("dam_forward: image grid does not match feature grid (expected " +
                          std::to_string(image_h_) + "x" + std::to_string(image_w_) + ")");

    Var ctx = ad::constant(h_vfm);
    Var hp = nn::image_to_tokens(ad::constant(image.pixels), patch_);
    hp = pixel_embed_.forward(tape, hp);
    hp = pixel_pos_.forward(tape, hp);
    for (const auto& blk : dam_blocks_) hp = blk.forward(tape, hp, ctx);

    Var gb = fusion_.forward(tape, hp);  // [N x 2D]
    Var gamma = ad::slice_cols(gb, 0, feature_dim_);
    Var beta = ad::slice_cols(gb, feature_dim_, 2 * feature_dim_);
    return dam_fuse(ctx, gamma, beta);
}

Var Tokenizer::encode_graph(Tape& tape, const Tensor& h_vfm, const ImageTensor& image) const {
    Var hz = dam_forward(tape, h_vfm, image);

    Var h = proj_embed_.forward(tape, hz);
    h = proj_pos_.forward(tape, h);
    h = proj_block_.forward(tape, h);
    Var grid = nn::tokens_to_chw(h, rows_, cols_);
    grid = proj_conv_.forward(tape, grid);  // stride = downsample factor
    Var lat_tokens = nn::chw_to_tokens(grid);
    if (factor_ == 1) lat_tokens = ad::add(lat_tokens, h);  // residual when grids align
    Var z_tilde = proj_out_.forward(tape, lat_tokens);      // [N' x d]
    if (cfg_.global_rms) return ad::rms_normalize_all(z_tilde, cfg_.rms_eps);
    return ad::rms_normalize_rows(z_tilde, cfg_.rms_eps);
}

Var Tokenizer::decode_graph(Tape& tape, const Var& latent_tokens) const {
    const int64_t Nl = cfg_.latent_h * cfg_.latent_w;
    if (latent_tokens->val.rank() != 2 || latent_tokens->val.dim(0) != Nl ||
        latent_tokens->val.dim(1) != cfg_.latent_dim)
        throw ConfigError("decode_graph: latent tokens must be [" + std::to_string(Nl) + " x " +
                          std::to_string(cfg_.latent_dim) + "], got " +
                          latent_tokens->val.shape_str());

    Var h = deproj_embed_.forward(tape, latent_tokens);  // [N' x dec_hidden]
    if (factor_ > 1) {
        // pixel-shuffle expansion back to the full token grid
        Var ex = deproj_expand_.forward(tape, h);  // [N' x (dec_hidden f^2)]
        const int64_t f = factor_, C = cfg_.dec_hidden;
        const int64_t lw = cfg_.latent_w;
        std::vector<int64_t> map(static_cast<size_t>(rows_ * cols_ * C));
        int64_t o = 0;
        for (int64_t r = 0; r < rows_; ++r) {
            for (int64_t c = 0; c < cols_; ++c) {
                const int64_t lr = r / f, lc = c / f;
                const int64_t sub = (r % f) * f + (c % f);
                const int64_t src_row = lr * lw + lc;
                for (int64_t ch = 0; ch < C; ++ch)
                    map[static_cast<size_t>(o++)] = src_row * (C * f * f) + sub * C + ch;
            }
        }
        h = ad::index_gather(ex, std::move(map), {rows_ * cols_, C});
    }
    h = dec_pos_.forward(tape, h);
    for (const auto& blk : dec_blocks_) h = blk.forward(tape, h);
    Var patches = dec_out_.forward(tape, h);  // [N x 3 p^2]
    return nn::tokens_to_image(patches, rows_, cols_, patch_);
}

LatentCode Tokenizer::latent_from_tokens(const Tensor& tokens) const {
    const int64_t Nl = cfg_.latent_h * cfg_.latent_w;
    if (tokens.rank() != 2 || tokens.dim(0) != Nl || tokens.dim(1) != cfg_.latent_dim)
        throw ConfigError("latent_from_tokens: bad token shape " + tokens.shape_str());
    LatentCode code;
    code.rms_eps = cfg_.rms_eps;
    code.z = Tensor({cfg_.latent_dim, cfg_.latent_h, cfg_.latent_w});
    for (int64_t h = 0; h < cfg_.latent_h; ++h)
        for (int64_t w = 0; w < cfg_.latent_w; ++w)
            for (int64_t c = 0; c < cfg_.latent_dim; ++c)
                code.z.at(c, h, w) = tokens.at(h * cfg_.latent_w + w, c);
    return code;
}

Tensor Tokenizer::tokens_from_latent(const LatentCode& code) const {
    const int64_t Nl = cfg_.latent_h * cfg_.latent_w;
    Tensor tokens({Nl, cfg_.latent_dim});
    for (int64_t h = 0; h < cfg_.latent_h; ++h)
        for (int64_t w = 0; w < cfg_.latent_w; ++w)
            for (int64_t c = 0; c < cfg_.latent_dim; ++c)
                tokens.at(h * cfg_.latent_w + w, c) = code.z.at(c, h, w);
    return tokens;
}

LatentCode Tokenizer::encode(const ImageTensor& image, const Backend& backend) const {
    FeatureMap fm = encode_image(image, backend);
    Tape tape;
    Var tokens = encode_graph(tape, fm.tokens, image);
    LatentCode code = latent_from_tokens(tokens->val);
    for (int64_t h = 0; h < cfg_.latent_h; ++h) {
        for (int64_t w = 0; w < cfg_.latent_w; ++w) {
            double ms = 0.0;
            for (int64_t c = 0; c < cfg_.latent_dim; ++c)
                ms += code.z.at(c, h, w) * code.z.at(c, h, w);
            if (ms == 0.0) code.zero_locations += 1;
        }
    }
    return code;
}

ImageTensor Tokenizer::reconstruct(const LatentCode& code) const {
    Tape tape;
    Var img = decode_graph(tape, ad::constant(tokens_from_latent(code)));
    ImageTensor out;
    out.pixels = img->val;  // range unconstrained; clamped only at file output
    return out;
}

}  // namespace pae
