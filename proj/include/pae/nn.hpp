#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pae/autodiff.hpp"
#include "pae/rng.hpp"
#include "pae/tensor.hpp"

namespace pae::nn {

// Named trainable tensor plus AdamW state.
struct Param {
    std::string name;
    Tensor value;
    Tensor m, v;  // AdamW moments, allocated on first step
    int64_t steps = 0;
};

// Flat registry of parameters owned by a model. Names are unique; layers
// keep raw Param pointers, so storage is a deque (stable addresses under
// push_back).
class ParamGroup {
public:
    ParamGroup() = default;
    ParamGroup(const ParamGroup&) = delete;
    ParamGroup& operator=(const ParamGroup&) = delete;

    Param& add(const std::string& name, std::vector<int64_t> shape);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::deque<Param>& params() { return params_; }
    const std::deque<Param>& params() const { return params_; }
    int64_t total_elements() const;

    // One container file per parameter plus a manifest listing names,
    // shapes, step count, seed, and config hash.
    void save(const std::filesystem::path& dir, uint64_t seed, int64_t step,
              const std::string& config_hash) const;
    void load(const std::filesystem::path& dir);

private:
    std::deque<Param> params_;
    std::map<std::string, size_t> index_;
};

// Per-forward-pass record of which parameters were bound to which graph
// leaves so the optimizer can read gradients after backward().
class Tape {
public:
    ad::Var use(Param& p) {
        auto v = ad::leaf(p.value, true);
        bound_.push_back({&p, v});
        return v;
    }

    struct Binding {
        Param* param;
        ad::Var node;
    };
    std::vector<Binding>& bindings() { return bound_; }

private:
    std::vector<Binding> bound_;
};

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Applies one AdamW update from the gradients accumulated on the tape.
// Parameters bound multiple times in one pass receive summed gradients.
void adamw_step(Tape& tape, const AdamWConfig& cfg);

// ---- initializers ----
void init_normal(Tensor& t, Rng& rng, double std);
void init_zeros(Tensor& t);
void init_identity_like(Tensor& t);  // square or rectangular eye

// ---- layers ----
// Layers hold references into a ParamGroup; construction registers
// parameters, forward() binds them on the given tape.

class Linear {
public:
    Linear() = default;
    Linear(ParamGroup& pg, const std::string& name, int64_t in, int64_t out, Rng& rng,
           bool zero_init = false);
    ad::Var forward(Tape& t, const ad::Var& x) const;  // x: [N x in]
    Param& weight() { return *w_; }
    Param& bias() { return *b_; }

private:
    Param* w_ = nullptr;  // [in x out]
    Param* b_ = nullptr;  // [out]
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamGroup& pg, const std::string& name, int64_t dim, double eps = 1e-6);
    ad::Var forward(Tape& t, const ad::Var& x) const;  // x: [N x dim]

private:
    Param* gain_ = nullptr;
    Param* bias_ = nullptr;
    double eps_ = 1e-6;
};

// Multi-head attention. Self-attention when ctx is the same Var as x;
// cross-attention when ctx comes from another source.
class Attention {
public:
    Attention() = default;
    Attention(ParamGroup& pg, const std::string& name, int64_t dim, int64_t ctx_dim,
              int64_t heads, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x, const ad::Var& ctx) const;

private:
    Linear q_, k_, v_, out_;
    int64_t heads_ = 1;
    int64_t dim_ = 0;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(ParamGroup& pg, const std::string& name, int64_t dim, int64_t hidden, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x) const;

private:
    Linear fc1_, fc2_;
};

// Pre-norm transformer block: x += attn(ln(x)); x += mlp(ln(x)).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParamGroup& pg, const std::string& name, int64_t dim, int64_t heads,
                     int64_t mlp_hidden, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x) const;

private:
    LayerNorm ln1_, ln2_;
    Attention attn_;
    Mlp mlp_;
};

// Pre-norm block with an extra cross-attention stage reading a fixed
// context sequence: self-attn, then cross-attn, then MLP.
class CrossBlock {
public:
    CrossBlock() = default;
    CrossBlock(ParamGroup& pg, const std::string& name, int64_t dim, int64_t ctx_dim,
               int64_t heads, int64_t mlp_hidden, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x, const ad::Var& ctx) const;

private:
    LayerNorm ln1_, ln2_, ln3_;
    Attention self_attn_, cross_attn_;
    Mlp mlp_;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamGroup& pg, const std::string& name, int64_t cin, int64_t cout, int64_t k,
           int64_t stride, int64_t pad, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x) const;  // x: [cin x H x W]

private:
    Param* w_ = nullptr;
    Param* b_ = nullptr;
    int64_t stride_ = 1, pad_ = 0;
};

// Learned positional embedding added to a token sequence.
class PosEmbedding {
public:
    PosEmbedding() = default;
    PosEmbedding(ParamGroup& pg, const std::string& name, int64_t n, int64_t dim, Rng& rng);
    ad::Var forward(Tape& t, const ad::Var& x) const;

private:
    Param* e_ = nullptr;
};

// ---- layout shuffles (exact inverse-permutation gradients) ----

// [3 x H x W] image -> [N x (3 p^2)] patch tokens, row-major patch grid.
ad::Var image_to_tokens(const ad::Var& img, int64_t patch);
// [N x (3 p^2)] -> [3 x H x W]
ad::Var tokens_to_image(const ad::Var& tokens, int64_t rows, int64_t cols, int64_t patch);
// [N x C] token grid (row-major over rows x cols) -> [C x rows x cols]
ad::Var tokens_to_chw(const ad::Var& tokens, int64_t rows, int64_t cols);
// [C x H x W] -> [(H W) x C]
ad::Var chw_to_tokens(const ad::Var& chw);

}  // namespace pae::nn
