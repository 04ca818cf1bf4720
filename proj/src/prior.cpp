#include "pae/prior.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pae/io.hpp"
#include "pae/resample.hpp"

namespace pae {

using ad::Var;
using nn::Tape;

Tensor unit_normalize_tokens(const Tensor& tokens, double eps) {
    if (tokens.rank() != 2) throw ConfigError("unit_normalize_tokens: expected [N,C]");
    const int64_t N = tokens.dim(0), C = tokens.dim(1);
    Tensor out({N, C});
    for (int64_t i = 0; i < N; ++i) {
        double ss = 0.0;
        for (int64_t c = 0; c < C; ++c) ss += tokens.at(i, c) * tokens.at(i, c);
        const double inv = 1.0 / std::sqrt(ss + eps);
        for (int64_t c = 0; c < C; ++c) out.at(i, c) = tokens.at(i, c) * inv;
    }
    return out;
}

Tensor gram_matrix(const Tensor& tokens) {
    const int64_t N = tokens.dim(0), C = tokens.dim(1);
    Tensor g({N, N});
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = i; j < N; ++j) {
            double s = 0.0;
            for (int64_t c = 0; c < C; ++c) s += tokens.at(i, c) * tokens.at(j, c);
            g.at(i, j) = s;
            g.at(j, i) = s;
        }
    }
    return g;
}

Var gram_of_tokens(const Var& tokens, double eps) {
    Var n = ad::l2_normalize_rows(tokens, eps);
    return ad::matmul(n, ad::transpose(n));
}

FeatureMap spatial_refine(const FeatureMap& features, int64_t upsample_size,
                          double lowpass_strength) {
    if (lowpass_strength < 0.0 || lowpass_strength > 1.0)
        throw ConfigError("spatial_refine: lowpass strength must lie in [0,1], got " +
                          std::to_string(lowpass_strength));
    if (upsample_size < std::max(features.rows, features.cols))
        throw ConfigError("spatial_refine: upsample size below latent resolution");

    const int64_t rows = features.rows, cols = features.cols;
    const int64_t D = features.channels();
    // tokens [N x D] -> [D x rows x cols]
    Tensor chw({D, rows, cols});
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            for (int64_t d = 0; d < D; ++d) chw.at(d, r, c) = features.tokens.at(r * cols + c, d);

    constexpr double kSigmaMaxPx = 4.0;
    Tensor up = bilinear_resize(chw, upsample_size, upsample_size);
    Tensor blurred = gaussian_blur(up, lowpass_strength * kSigmaMaxPx);
    Tensor down = bilinear_resize(blurred, rows, cols);

    FeatureMap out = features;
    out.tokens = Tensor({rows * cols, D});
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            for (int64_t d = 0; d < D; ++d) out.tokens.at(r * cols + c, d) = down.at(d, r, c);
    return out;
}

std::string RefineConfig::hash() const {
    std::ostringstream os;
    os << target_dim << "|" << proj_hidden << "|" << proj_heads << "|" << decoder_depth << "|"
       << decoder_hidden << "|" << decoder_heads << "|" << upsample_size << "|"
       << lowpass_strength << "|" << lambda_rep << "|" << lambda_gram << "|" << lr << "|"
       << steps << "|" << batch_images << "|" << seed;
    return hash_hex(fnv1a64(os.str()));
}

PriorRefiner::PriorRefiner(const RefineConfig& cfg, int64_t feature_dim, int64_t grid_rows,
                           int64_t grid_cols)
    : cfg_(cfg), feature_dim_(feature_dim), rows_(grid_rows), cols_(grid_cols) {
    Rng rng = Rng::substream(cfg.seed, "prior-refiner-init");
    const int64_t N = rows_ * cols_;
    proj_embed_ = nn::Linear(pg_, "proj.embed", feature_dim, cfg.proj_hidden, rng);
    proj_pos_ = nn::PosEmbedding(pg_, "proj", N, cfg.proj_hidden, rng);
    proj_block_ = nn::TransformerBlock(pg_, "proj.block", cfg.proj_hidden, cfg.proj_heads,
                                       cfg.proj_hidden * 4, rng);
    proj_conv_ = nn::Conv2d(pg_, "proj.conv", cfg.proj_hidden, cfg.proj_hidden, 3, 1, 1, rng);
    proj_out_ = nn::Linear(pg_, "proj.out", cfg.proj_hidden, cfg.target_dim, rng);

    dec_embed_ = nn::Linear(pg_, "dec.embed", cfg.target_dim, cfg.decoder_hidden, rng);
    dec_pos_ = nn::PosEmbedding(pg_, "dec", N, cfg.decoder_hidden, rng);
    for (int64_t i = 0; i < cfg.decoder_depth; ++i)
        dec_blocks_.emplace_back(pg_, "dec.block" + std::to_string(i), cfg.decoder_hidden,
                                 cfg.decoder_heads, cfg.decoder_hidden * 4, rng);
    dec_out_ = nn::Linear(pg_, "dec.out", cfg.decoder_hidden, feature_dim, rng);
}

std::pair<Var, Var> PriorRefiner::refine_forward(Tape& tape, const Var& features) const {
    if (features->val.rank() != 2 || features->val.dim(1) != feature_dim_)
        throw ConfigError("refine_forward: features must be [N x " +
                          std::to_string(feature_dim_) + "], got " + features->val.shape_str());
    if (features->val.dim(0) != rows_ * cols_)
        throw ConfigError("refine_forward: token count does not match configured grid");

    // P^t: embed -> attention -> 3x3 conv over the grid -> linear head
    Var h = proj_embed_.forward(tape, features);
    h = proj_pos_.forward(tape, h);
    h = proj_block_.forward(tape, h);
    Var hg = nn::tokens_to_chw(h, rows_, cols_);
    hg = proj_conv_.forward(tape, hg);
    h = ad::add(h, nn::chw_to_tokens(hg));  // residual around the conv
    Var z_t = proj_out_.forward(tape, h);

    // Q^t: ViT-style reconstruction decoder
    Var d = dec_embed_.forward(tape, z_t);
    d = dec_pos_.forward(tape, d);
    for (const auto& blk : dec_blocks_) d = blk.forward(tape, d);
    Var h_hat = dec_out_.forward(tape, d);
    return {z_t, h_hat};
}

LossParts refinement_loss(const Var& z_t, const Var& h_hat, const Tensor& h_vfm,
                          const Tensor& gram_ref, double lambda_rep, double lambda_gram) {
    if (!h_vfm.all_finite() || !gram_ref.all_finite())
        throw NumericError("refinement_loss: non-finite targets");
    if (!z_t->val.all_finite() || !h_hat->val.all_finite())
        throw NumericError("refinement_loss: non-finite inputs");
    if (!h_hat->val.same_shape(h_vfm))
        throw ConfigError("refinement_loss: reconstruction shape " + h_hat->val.shape_str() +
                          " does not match features " + h_vfm.shape_str());
    const int64_t N = z_t->val.dim(0);
    if (gram_ref.rank() != 2 || gram_ref.dim(0) != N || gram_ref.dim(1) != N)
        throw ConfigError("refinement_loss: gram_ref must be [N x N]");

    Var rep = ad::mean(ad::square(ad::sub(h_hat, ad::constant(h_vfm))));
    Var diff = ad::sub(gram_of_tokens(z_t), ad::constant(gram_ref));
    Var fro2 = ad::sum(ad::square(diff));
    Var gram = ad::scale(fro2, 1.0 / static_cast<double>(N * N));

    LossParts out;
    out.total = ad::add(ad::scale(rep, lambda_rep), ad::scale(gram, lambda_gram));
    out.components["rep"] = rep->val[0];
    out.components["gram"] = gram->val[0];
    out.components["gram_fro2"] = fro2->val[0];
    return out;
}

RefinementArtifacts train_refinement(const RefineConfig& cfg,
                                     const std::vector<FeatureMap>& features,
                                     const std::filesystem::path& store_dir,
                                     const std::string& backbone_id) {
    if (features.empty()) throw ConfigError("train_refinement: empty dataset");
    const int64_t rows = features[0].rows, cols = features[0].cols;
    const int64_t D = features[0].channels();
    for (const auto& f : features)
        if (f.rows != rows || f.cols != cols || f.channels() != D)
            throw ConfigError("train_refinement: inconsistent feature grids");

    // Fixed structural references, computed once.
    std::vector<Tensor> gram_refs;
    gram_refs.reserve(features.size());
    for (const auto& f : features) {
        FeatureMap refined = spatial_refine(f, cfg.upsample_size, cfg.lowpass_strength);
        gram_refs.push_back(gram_matrix(unit_normalize_tokens(refined.tokens)));
    }

    PriorRefiner refiner(cfg, D, rows, cols);

    nn::AdamWConfig opt;
    opt.lr = cfg.lr;

    RefinementArtifacts art;
    art.parameter_count = refiner.params().total_elements();

    Rng order = Rng::substream(cfg.seed, "prior-refiner-batches");
    const int64_t n = static_cast<int64_t>(features.size());
    for (int64_t step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Var total;
        double rep_sum = 0.0, gram_sum = 0.0;
        for (int64_t b = 0; b < cfg.batch_images; ++b) {
            const int64_t i = order.uniform_int(n);
            auto [z_t, h_hat] =
                refiner.refine_forward(tape, ad::constant(features[static_cast<size_t>(i)].tokens));
            LossParts lp =
                refinement_loss(z_t, h_hat, features[static_cast<size_t>(i)].tokens,
                                gram_refs[static_cast<size_t>(i)], cfg.lambda_rep,
                                cfg.lambda_gram);
            rep_sum += lp.components.at("rep");
            gram_sum += lp.components.at("gram");
            total = total ? ad::add(total, lp.total) : lp.total;
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_images);
        total = ad::scale(total, inv_b);
        ad::backward(total);
        art.training_log.push_back(
            {step, total->val[0], rep_sum * inv_b, gram_sum * inv_b});
        nn::adamw_step(tape, opt);
    }

    // Freeze priors and write the store.
    std::vector<RefinedPrior> priors;
    priors.reserve(features.size());
    const std::string chash = cfg.hash();
    for (size_t fi = 0; fi < features.size(); ++fi) {
        Tape tape;
        auto [z_t, h_hat] = refiner.refine_forward(tape, ad::constant(features[fi].tokens));
        (void)h_hat;
        RefinedPrior p;
        p.z_t = z_t->val;
        p.z_tg = Tensor({cfg.target_dim});
        for (int64_t c = 0; c < cfg.target_dim; ++c) {
            double s = 0.0;
            for (int64_t i = 0; i < p.z_t.dim(0); ++i) s += p.z_t.at(i, c);
            p.z_tg[c] = s / static_cast<double>(p.z_t.dim(0));
        }
        p.gram_ref = gram_refs[fi];
        p.config_hash = chash;
        priors.push_back(std::move(p));
    }
    write_prior_store(store_dir, priors, chash, backbone_id);
    return art;
}

namespace {
std::string prior_file(int64_t idx, const char* kind) {
    return "img_" + std::to_string(idx) + "_" + kind + ".paet";
}
}  // namespace

void write_prior_store(const std::filesystem::path& dir, const std::vector<RefinedPrior>& priors,
                       const std::string& config_hash, const std::string& backbone_id) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "format = pae-prior-store-v1\n";
    manifest << "config_hash = " << config_hash << "\n";
    manifest << "backbone = " << backbone_id << "\n";
    manifest << "count = " << priors.size() << "\n";
    for (size_t i = 0; i < priors.size(); ++i) {
        const auto idx = static_cast<int64_t>(i);
        const auto& p = priors[i];
        const std::string zt = prior_file(idx, "zt");
        const std::string ztg = prior_file(idx, "ztg");
        const std::string gram = prior_file(idx, "gram");
        write_tensor(dir / zt, p.z_t, DType::f32);
        write_tensor(dir / ztg, p.z_tg, DType::f32);
        write_tensor(dir / gram, p.gram_ref, DType::f32);
        manifest << "entry " << idx << " " << zt << " " << file_content_hash(dir / zt) << " "
                 << ztg << " " << file_content_hash(dir / ztg) << " " << gram << " "
                 << file_content_hash(dir / gram) << "\n";
    }
    std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
    mf << manifest.str();
    if (!mf) throw FormatError("write_prior_store: cannot write manifest");
}

PriorStore open_prior_store(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.txt");
    if (!mf) throw FormatError("open_prior_store: missing manifest in " + dir.string());
    PriorStore store;
    store.dir = dir;
    std::string line;
    while (std::getline(mf, line)) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "config_hash") {
            std::string eq;
            is >> eq >> store.config_hash;
        } else if (key == "backbone") {
            std::string eq;
            is >> eq >> store.backbone_id;
        } else if (key == "count") {
            std::string eq;
            is >> eq >> store.count;
        }
    }
    return store;
}

RefinedPrior PriorStore::load(int64_t index) const {
    if (index < 0 || index >= count)
        throw ConfigError("PriorStore::load: index out of range");
    // Re-read the manifest entry and verify content hashes before use.
    std::ifstream mf(dir / "manifest.txt");
    std::string line;
    std::string zt_f, zt_h, ztg_f, ztg_h, gram_f, gram_h;
    bool found = false;
    while (std::getline(mf, line)) {
        std::istringstream is(line);
        std::string key;
        int64_t idx;
        is >> key;
        if (key != "entry") continue;
        is >> idx;
        if (idx != index) continue;
        is >> zt_f >> zt_h >> ztg_f >> ztg_h >> gram_f >> gram_h;
        found = true;
        break;
    }
    if (!found) throw FormatError("PriorStore::load: entry " + std::to_string(index) +
                                  " missing from manifest");
    auto verify = [&](const std::string& f, const std::string& h) {
        const std::string actual = file_content_hash(dir / f);
        if (actual != h)
            throw FormatError("PriorStore::load: content hash mismatch for " + f + " (expected " +
                              h + ", got " + actual + ")");
    };
    verify(zt_f, zt_h);
    verify(ztg_f, ztg_h);
    verify(gram_f, gram_h);

    RefinedPrior p;
    p.z_t = read_tensor(dir / zt_f);
    p.z_tg = read_tensor(dir / ztg_f);
    p.gram_ref = read_tensor(dir / gram_f);
    p.config_hash = config_hash;
    return p;
}

}  // namespace pae
