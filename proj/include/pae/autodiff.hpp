#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pae/tensor.hpp"

namespace pae::ad {

// Reverse-mode automatic differentiation over Tensor values.
//
// Graphs are built dynamically per forward pass and freed when the last
// Var goes out of scope. Node creation order is a topological order by
// construction (parents exist before children), so backward() just walks
// reachable nodes in descending creation order.
//
// Everything runs in double precision: the gradient test suites compare
// against central finite differences at step 1e-4, which float32 cannot
// resolve.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;              // valid only when has_grad
    bool requires_grad = false;
    bool has_grad = false;
    uint64_t order = 0;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
};

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bp);
Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);

// Accumulate g into n's gradient (no-op when n does not require grad).
void accum(Node& n, const Tensor& g);

// Backpropagate from a scalar root (numel == 1).
void backward(const Var& root);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var relu(const Var& a);
Var gelu(const Var& a);  // exact erf form
Var tanh_(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var abs_(const Var& a);  // subgradient 0 at 0
Var square(const Var& a);

// ---- reductions ----
Var sum(const Var& a);   // -> scalar
Var mean(const Var& a);  // -> scalar
Var mean_rows(const Var& a);  // [N x C] -> [C], mean over rows
Var sum_rows(const Var& a);   // [N x C] -> [C]

// ---- linear algebra / shape ----
Var matmul(const Var& a, const Var& b);        // [M x K] * [K x N]
Var transpose(const Var& a);                   // 2-D
Var reshape(const Var& a, std::vector<int64_t> shape);
Var slice_cols(const Var& a, int64_t c0, int64_t c1);  // [N x C] -> [N x (c1-c0)]
Var slice_rows(const Var& a, int64_t r0, int64_t r1);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& table, const std::vector<int64_t>& idx);

// Pure index shuffle: out[i] = in[index_map[i]]; index_map must be a
// permutation-like gather (each output reads one input element).
Var index_gather(const Var& a, std::vector<int64_t> index_map, std::vector<int64_t> out_shape);

// ---- broadcast helpers over [N x C] ----
Var add_rowvec(const Var& a, const Var& v);  // v: [C]
Var mul_rowvec(const Var& a, const Var& v);
Var add_colvec(const Var& a, const Var& v);  // v: [N]
Var mul_colvec(const Var& a, const Var& v);

// ---- fused row-wise normalizations over [N x C] ----
Var softmax_rows(const Var& a);
Var layernorm_rows(const Var& a, double eps);        // zero mean / unit var per row
Var rms_normalize_rows(const Var& a, double eps);    // x / sqrt(mean(x^2)+eps) per row
Var rms_normalize_all(const Var& a, double eps);     // single RMS over the whole tensor
Var l2_normalize_rows(const Var& a, double eps);     // x / max(||x||, eps') per row

// ---- convolution over [Cin x H x W] ----
Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);

// ---- graph control ----
Var stop_gradient(const Var& a);

}  // namespace pae::ad
