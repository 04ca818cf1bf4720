#include "pae/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pae/io.hpp"

namespace pae::nn {

using ad::Var;

// ------------------------------------------------------------- ParamGroup

Param& ParamGroup::add(const std::string& name, std::vector<int64_t> shape) {
    if (index_.count(name)) throw ConfigError("ParamGroup: duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back(Param{name, Tensor(std::move(shape)), {}, {}, 0});
    return params_.back();
}

Param& ParamGroup::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamGroup: unknown parameter " + name);
    return params_[it->second];
}

const Param& ParamGroup::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamGroup: unknown parameter " + name);
    return params_[it->second];
}

bool ParamGroup::has(const std::string& name) const { return index_.count(name) > 0; }

int64_t ParamGroup::total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

namespace {
std::string sanitize(const std::string& name) {
    std::string s = name;
    for (auto& c : s)
        if (c == '/' || c == '.') c = '_';
    return s;
}
}  // namespace

void ParamGroup::save(const std::filesystem::path& dir, uint64_t seed, int64_t step,
                      const std::string& config_hash) const {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "format = pae-checkpoint-v1\n";
    manifest << "seed = " << seed << "\n";
    manifest << "step = " << step << "\n";
    manifest << "config_hash = " << config_hash << "\n";
    for (const auto& p : params_) {
        const std::string fname = sanitize(p.name) + ".paet";
        write_tensor(dir / fname, p.value, DType::f64);
        manifest << "param " << p.name << " " << fname << " " << p.value.shape_str() << "\n";
    }
    std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
    mf << manifest.str();
    if (!mf) throw FormatError("ParamGroup::save: cannot write manifest in " + dir.string());
}

void ParamGroup::load(const std::filesystem::path& dir) {
    for (auto& p : params_) {
        const auto path = dir / (sanitize(p.name) + ".paet");
        Tensor t = read_tensor(path);
        if (!t.same_shape(p.value))
            throw ConfigError("ParamGroup::load: shape mismatch for " + p.name + ": file " +
                              t.shape_str() + " vs model " + p.value.shape_str());
        p.value = std::move(t);
    }
}

// ------------------------------------------------------------------ AdamW

void adamw_step(Tape& tape, const AdamWConfig& cfg) {
    // A parameter may be bound several times (e.g. weight sharing across a
    // batch loop); sum its gradients before updating, and update once.
    std::map<Param*, Tensor> grads;
    for (auto& b : tape.bindings()) {
        if (!b.node->has_grad) continue;
        auto it = grads.find(b.param);
        if (it == grads.end())
            grads.emplace(b.param, b.node->grad);
        else
            it->second += b.node->grad;
    }
    for (auto& [p, g] : grads) {
        if (p->m.numel() == 0) {
            p->m = Tensor(p->value.shape());
            p->v = Tensor(p->value.shape());
        }
        p->steps += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->steps));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->steps));
        const int64_t n = p->value.numel();
        for (int64_t i = 0; i < n; ++i) {
            p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g[i];
            p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = p->m[i] / bc1;
            const double vhat = p->v[i] / bc2;
            p->value[i] -=
                cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p->value[i]);
        }
    }
}

// ------------------------------------------------------------ initializers

void init_normal(Tensor& t, Rng& rng, double std) {
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) t[i] = rng.normal() * std;
}

void init_zeros(Tensor& t) {
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) t[i] = 0.0;
}

void init_identity_like(Tensor& t) {
    if (t.rank() != 2) throw ConfigError("init_identity_like: rank-2 only");
    init_zeros(t);
    const int64_t k = std::min(t.dim(0), t.dim(1));
    for (int64_t i = 0; i < k; ++i) t.at(i, i) = 1.0;
}

// ----------------------------------------------------------------- Linear

Linear::Linear(ParamGroup& pg, const std::string& name, int64_t in, int64_t out, Rng& rng,
               bool zero_init) {
    w_ = &pg.add(name + ".w", {in, out});
    b_ = &pg.add(name + ".b", {out});
    if (zero_init) {
        init_zeros(w_->value);
    } else {
        init_normal(w_->value, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    }
    init_zeros(b_->value);
}

Var Linear::forward(Tape& t, const Var& x) const {
    return ad::add_rowvec(ad::matmul(x, t.use(*w_)), t.use(*b_));
}

// -------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(ParamGroup& pg, const std::string& name, int64_t dim, double eps)
    : eps_(eps) {
    gain_ = &pg.add(name + ".g", {dim});
    bias_ = &pg.add(name + ".b", {dim});
    for (int64_t i = 0; i < dim; ++i) gain_->value[i] = 1.0;
    init_zeros(bias_->value);
}

Var LayerNorm::forward(Tape& t, const Var& x) const {
    return ad::add_rowvec(ad::mul_rowvec(ad::layernorm_rows(x, eps_), t.use(*gain_)),
                          t.use(*bias_));
}

// -------------------------------------------------------------- Attention

Attention::Attention(ParamGroup& pg, const std::string& name, int64_t dim, int64_t ctx_dim,
                     int64_t heads, Rng& rng)
    : heads_(heads), dim_(dim) {
    if (dim % heads != 0) throw ConfigError("Attention: dim must be divisible by heads");
    q_ = Linear(pg, name + ".q", dim, dim, rng);
    k_ = Linear(pg, name + ".k", ctx_dim, dim, rng);
    v_ = Linear(pg, name + ".v", ctx_dim, dim, rng);
    out_ = Linear(pg, name + ".o", dim, dim, rng);
}

Var Attention::forward(Tape& t, const Var& x, const Var& ctx) const {
    const int64_t dh = dim_ / heads_;
    Var q = q_.forward(t, x);
    Var k = k_.forward(t, ctx);
    Var v = v_.forward(t, ctx);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads_));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int64_t h = 0; h < heads_; ++h) {
        Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
        head_outs.push_back(ad::matmul(attn, vh));
    }
    Var merged = heads_ == 1 ? head_outs[0] : ad::concat_cols(head_outs);
    return out_.forward(t, merged);
}

// -------------------------------------------------------------------- Mlp

Mlp::Mlp(ParamGroup& pg, const std::string& name, int64_t dim, int64_t hidden, Rng& rng) {
    fc1_ = Linear(pg, name + ".fc1", dim, hidden, rng);
    fc2_ = Linear(pg, name + ".fc2", hidden, dim, rng);
}

Var Mlp::forward(Tape& t, const Var& x) const {
    return fc2_.forward(t, ad::gelu(fc1_.forward(t, x)));
}

// --------------------------------------------------------- TransformerBlock

TransformerBlock::TransformerBlock(ParamGroup& pg, const std::string& name, int64_t dim,
                                   int64_t heads, int64_t mlp_hidden, Rng& rng) {
    ln1_ = LayerNorm(pg, name + ".ln1", dim);
    ln2_ = LayerNorm(pg, name + ".ln2", dim);
    attn_ = Attention(pg, name + ".attn", dim, dim, heads, rng);
    mlp_ = Mlp(pg, name + ".mlp", dim, mlp_hidden, rng);
}

Var TransformerBlock::forward(Tape& t, const Var& x) const {
    Var h = x;
    {
        Var n = ln1_.forward(t, h);
        h = ad::add(h, attn_.forward(t, n, n));
    }
    h = ad::add(h, mlp_.forward(t, ln2_.forward(t, h)));
    return h;
}

// --------------------------------------------------------------- CrossBlock

CrossBlock::CrossBlock(ParamGroup& pg, const std::string& name, int64_t dim, int64_t ctx_dim,
                       int64_t heads, int64_t mlp_hidden, Rng& rng) {
    ln1_ = LayerNorm(pg, name + ".ln1", dim);
    ln2_ = LayerNorm(pg, name + ".ln2", dim);
    ln3_ = LayerNorm(pg, name + ".ln3", dim);
    self_attn_ = Attention(pg, name + ".self", dim, dim, heads, rng);
    cross_attn_ = Attention(pg, name + ".cross", dim, ctx_dim, heads, rng);
    mlp_ = Mlp(pg, name + ".mlp", dim, mlp_hidden, rng);
}

Var CrossBlock::forward(Tape& t, const Var& x, const Var& ctx) const {
    Var h = x;
    {
        Var n = ln1_.forward(t, h);
        h = ad::add(h, self_attn_.forward(t, n, n));
    }
    h = ad::add(h, cross_attn_.forward(t, ln2_.forward(t, h), ctx));
    h = ad::add(h, mlp_.forward(t, ln3_.forward(t, h)));
    return h;
}

// ------------------------------------------------------------------ Conv2d

Conv2d::Conv2d(ParamGroup& pg, const std::string& name, int64_t cin, int64_t cout, int64_t k,
               int64_t stride, int64_t pad, Rng& rng)
    : stride_(stride), pad_(pad) {
    w_ = &pg.add(name + ".w", {cout, cin, k, k});
    b_ = &pg.add(name + ".b", {cout});
    init_normal(w_->value, rng, 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
    init_zeros(b_->value);
}

Var Conv2d::forward(Tape& t, const Var& x) const {
    return ad::conv2d(x, t.use(*w_), t.use(*b_), stride_, pad_);
}

// ------------------------------------------------------------ PosEmbedding

PosEmbedding::PosEmbedding(ParamGroup& pg, const std::string& name, int64_t n, int64_t dim,
                           Rng& rng) {
    (void)rng;
    // Learned from zero: keeps fresh models exactly input-linear (zero
    // features in, zero tokens out) while training fills positions in.
    e_ = &pg.add(name + ".pos", {n, dim});
    init_zeros(e_->value);
}

Var PosEmbedding::forward(Tape& t, const Var& x) const { return ad::add(x, t.use(*e_)); }

// --------------------------------------------------------- layout shuffles

Var image_to_tokens(const Var& img, int64_t patch) {
    if (img->val.rank() != 3) throw ConfigError("image_to_tokens: expected [C,H,W]");
    const int64_t C = img->val.dim(0), H = img->val.dim(1), W = img->val.dim(2);
    if (H % patch != 0 || W % patch != 0)
        throw ConfigError("image_to_tokens: image dims not divisible by patch size");
    const int64_t rows = H / patch, cols = W / patch;
    const int64_t N = rows * cols, P = C * patch * patch;
    std::vector<int64_t> map(static_cast<size_t>(N * P));
    int64_t o = 0;
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            for (int64_t ch = 0; ch < C; ++ch) {
                for (int64_t i = 0; i < patch; ++i) {
                    for (int64_t j = 0; j < patch; ++j) {
                        const int64_t ih = r * patch + i, iw = c * patch + j;
                        map[static_cast<size_t>(o++)] = (ch * H + ih) * W + iw;
                    }
                }
            }
        }
    }
    return ad::index_gather(img, std::move(map), {N, P});
}

Var tokens_to_image(const Var& tokens, int64_t rows, int64_t cols, int64_t patch) {
    if (tokens->val.rank() != 2) throw ConfigError("tokens_to_image: expected [N,P]");
    const int64_t N = tokens->val.dim(0), P = tokens->val.dim(1);
    if (N != rows * cols) throw ConfigError("tokens_to_image: grid size mismatch");
    if (P % (patch * patch) != 0) throw ConfigError("tokens_to_image: bad patch payload");
    const int64_t C = P / (patch * patch);
    const int64_t H = rows * patch, W = cols * patch;
    std::vector<int64_t> map(static_cast<size_t>(C * H * W));
    for (int64_t ch = 0; ch < C; ++ch) {
        for (int64_t ih = 0; ih < H; ++ih) {
            for (int64_t iw = 0; iw < W; ++iw) {
                const int64_t r = ih / patch, i = ih % patch;
                const int64_t c = iw / patch, j = iw % patch;
                const int64_t tok = r * cols + c;
                const int64_t within = (ch * patch + i) * patch + j;
                map[static_cast<size_t>((ch * H + ih) * W + iw)] = tok * P + within;
            }
        }
    }
    return ad::index_gather(tokens, std::move(map), {C, H, W});
}

Var tokens_to_chw(const Var& tokens, int64_t rows, int64_t cols) {
    if (tokens->val.rank() != 2) throw ConfigError("tokens_to_chw: expected [N,C]");
    const int64_t N = tokens->val.dim(0), C = tokens->val.dim(1);
    if (N != rows * cols) throw ConfigError("tokens_to_chw: grid size mismatch");
    std::vector<int64_t> map(static_cast<size_t>(N * C));
    for (int64_t ch = 0; ch < C; ++ch)
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                map[static_cast<size_t>((ch * rows + r) * cols + c)] = (r * cols + c) * C + ch;
    return ad::index_gather(tokens, std::move(map), {C, rows, cols});
}

Var chw_to_tokens(const Var& chw) {
    if (chw->val.rank() != 3) throw ConfigError("chw_to_tokens: expected [C,H,W]");
    const int64_t C = chw->val.dim(0), H = chw->val.dim(1), W = chw->val.dim(2);
    std::vector<int64_t> map(static_cast<size_t>(C * H * W));
    for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
            for (int64_t c = 0; c < C; ++c)
                map[static_cast<size_t>((h * W + w) * C + c)] = (c * H + h) * W + w;
    return ad::index_gather(chw, std::move(map), {H * W, C});
}

}  // namespace pae::nn
