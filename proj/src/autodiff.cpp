#include "pae/autodiff.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace pae::ad {

namespace {

std::atomic<uint64_t> g_order{1};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(Tensor& t, int64_t r, int64_t c) { return MapMat(t.data(), r, c); }
CMapMat as_mat(const Tensor& t, int64_t r, int64_t c) { return CMapMat(t.data(), r, c); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw ConfigError(std::string(op) + ": shape mismatch " + a->val.shape_str() + " vs " +
                          b->val.shape_str());
}

void require_rank2(const Var& a, const char* op) {
    if (a->val.rank() != 2) throw ConfigError(std::string(op) + ": expected rank-2 tensor");
}

// Shorthand for unary elementwise ops: y = f(x), dx += dy * dfdx(x, y).
Var unary(const Var& a, double (*f)(double), double (*dfdx)(double, double)) {
    Tensor out(a->val.shape());
    const int64_t n = a->val.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = f(a->val[i]);
    return make(std::move(out), {a}, [a, dfdx](Node& self) {
        Tensor g(a->val.shape());
        const int64_t m = g.numel();
        for (int64_t i = 0; i < m; ++i) g[i] = self.grad[i] * dfdx(a->val[i], self.val[i]);
        accum(*a, g);
    });
}

}  // namespace

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->order = g_order.fetch_add(1);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return n;
}

Var constant(Tensor t) { return make(std::move(t), {}, nullptr); }

Var leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->order = g_order.fetch_add(1);
    n->requires_grad = requires_grad;
    return n;
}

void accum(Node& n, const Tensor& g) {
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void backward(const Var& root) {
    if (root->val.numel() != 1)
        throw ConfigError("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Collect reachable nodes; creation order is already topological.
    std::vector<Node*> nodes;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const Node* a, const Node* b) { return a->order > b->order; });

    root->grad = Tensor::full(root->val.shape(), 1.0);
    root->has_grad = true;
    for (Node* n : nodes) {
        if (n->has_grad && n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a->val;
    out += b->val;
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        accum(*a, self.grad);
        accum(*b, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a->val;
    out -= b->val;
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        accum(*a, self.grad);
        Tensor g = self.grad;
        g *= -1.0;
        accum(*b, g);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] * b->val[i];
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        const int64_t m = self.val.numel();
        Tensor ga(a->val.shape()), gb(b->val.shape());
        for (int64_t i = 0; i < m; ++i) {
            ga[i] = self.grad[i] * b->val[i];
            gb[i] = self.grad[i] * a->val[i];
        }
        accum(*a, ga);
        accum(*b, gb);
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] / b->val[i];
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        const int64_t m = self.val.numel();
        Tensor ga(a->val.shape()), gb(b->val.shape());
        for (int64_t i = 0; i < m; ++i) {
            const double inv = 1.0 / b->val[i];
            ga[i] = self.grad[i] * inv;
            gb[i] = -self.grad[i] * a->val[i] * inv * inv;
        }
        accum(*a, ga);
        accum(*b, gb);
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    out *= s;
    return make(std::move(out), {a}, [a, s](Node& self) {
        Tensor g = self.grad;
        g *= s;
        accum(*a, g);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->val;
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] += s;
    return make(std::move(out), {a}, [a](Node& self) { accum(*a, self.grad); });
}

Var relu(const Var& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            return cdf + x * pdf;
        });
}

Var tanh_(const Var& a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Var exp_(const Var& a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_(const Var& a) {
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
    return unary(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Var abs_(const Var& a) {
    return unary(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
    return unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(pairwise_sum(a->val.data(), a->val.numel()));
    return make(std::move(out), {a}, [a](Node& self) {
        accum(*a, Tensor::full(a->val.shape(), self.grad[0]));
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a->val.numel());
    Tensor out = Tensor::scalar(pairwise_sum(a->val.data(), a->val.numel()) / n);
    return make(std::move(out), {a}, [a, n](Node& self) {
        accum(*a, Tensor::full(a->val.shape(), self.grad[0] / n));
    });
}

Var sum_rows(const Var& a) {
    require_rank2(a, "sum_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    Tensor out({C});
    for (int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int64_t r = 0; r < N; ++r) s += a->val.at(r, c);
        out[c] = s;
    }
    return make(std::move(out), {a}, [a, N, C](Node& self) {
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < C; ++c) g.at(r, c) = self.grad[c];
        accum(*a, g);
    });
}

Var mean_rows(const Var& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a->val.dim(0))); }

// ---------------------------------------------------------- linalg and shape

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int64_t M = a->val.dim(0), K = a->val.dim(1), N = b->val.dim(1);
    if (b->val.dim(0) != K)
        throw ConfigError("matmul: inner dimension mismatch " + a->val.shape_str() + " * " +
                          b->val.shape_str());
    Tensor out({M, N});
    as_mat(out, M, N) = as_mat(a->val, M, K) * as_mat(b->val, K, N);
    return make(std::move(out), {a, b}, [a, b, M, K, N](Node& self) {
        if (a->requires_grad) {
            Tensor ga({M, K});
            as_mat(ga, M, K) = as_mat(self.grad, M, N) * as_mat(b->val, K, N).transpose();
            accum(*a, ga);
        }
        if (b->requires_grad) {
            Tensor gb({K, N});
            as_mat(gb, K, N) = as_mat(a->val, M, K).transpose() * as_mat(self.grad, M, N);
            accum(*b, gb);
        }
    });
}

Var transpose(const Var& a) {
    require_rank2(a, "transpose");
    const int64_t M = a->val.dim(0), N = a->val.dim(1);
    Tensor out({N, M});
    as_mat(out, N, M) = as_mat(a->val, M, N).transpose();
    return make(std::move(out), {a}, [a, M, N](Node& self) {
        Tensor g({M, N});
        as_mat(g, M, N) = as_mat(self.grad, N, M).transpose();
        accum(*a, g);
    });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a->val.reshaped(shape);
    return make(std::move(out), {a}, [a](Node& self) {
        accum(*a, self.grad.reshaped(a->val.shape()));
    });
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
    require_rank2(a, "slice_cols");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (c0 < 0 || c1 > C || c0 >= c1) throw ConfigError("slice_cols: bad range");
    Tensor out({N, c1 - c0});
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = c0; c < c1; ++c) out.at(r, c - c0) = a->val.at(r, c);
    return make(std::move(out), {a}, [a, N, C, c0, c1](Node& self) {
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r)
            for (int64_t c = c0; c < c1; ++c) g.at(r, c) = self.grad.at(r, c - c0);
        accum(*a, g);
    });
}

Var slice_rows(const Var& a, int64_t r0, int64_t r1) {
    require_rank2(a, "slice_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (r0 < 0 || r1 > N || r0 >= r1) throw ConfigError("slice_rows: bad range");
    Tensor out({r1 - r0, C});
    for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r - r0, c) = a->val.at(r, c);
    return make(std::move(out), {a}, [a, N, C, r0, r1](Node& self) {
        Tensor g({N, C});
        for (int64_t r = r0; r < r1; ++r)
            for (int64_t c = 0; c < C; ++c) g.at(r, c) = self.grad.at(r - r0, c);
        accum(*a, g);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("concat_cols: empty input");
    const int64_t N = parts[0]->val.dim(0);
    int64_t C = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p->val.dim(0) != N) throw ConfigError("concat_cols: row count mismatch");
        C += p->val.dim(1);
    }
    Tensor out({N, C});
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t pc = p->val.dim(1);
        for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < pc; ++c) out.at(r, off + c) = p->val.at(r, c);
        off += pc;
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make(std::move(out), parents, [parts, N](Node& self) {
        int64_t off = 0;
        for (const auto& p : parts) {
            const int64_t pc = p->val.dim(1);
            Tensor g({N, pc});
            for (int64_t r = 0; r < N; ++r)
                for (int64_t c = 0; c < pc; ++c) g.at(r, c) = self.grad.at(r, off + c);
            accum(*p, g);
            off += pc;
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("concat_rows: empty input");
    const int64_t C = parts[0]->val.dim(1);
    int64_t N = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        if (p->val.dim(1) != C) throw ConfigError("concat_rows: column count mismatch");
        N += p->val.dim(0);
    }
    Tensor out({N, C});
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t pr = p->val.dim(0);
        for (int64_t r = 0; r < pr; ++r)
            for (int64_t c = 0; c < C; ++c) out.at(off + r, c) = p->val.at(r, c);
        off += pr;
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make(std::move(out), parents, [parts, C](Node& self) {
        int64_t off = 0;
        for (const auto& p : parts) {
            const int64_t pr = p->val.dim(0);
            Tensor g({pr, C});
            for (int64_t r = 0; r < pr; ++r)
                for (int64_t c = 0; c < C; ++c) g.at(r, c) = self.grad.at(off + r, c);
            accum(*p, g);
            off += pr;
        }
    });
}

Var gather_rows(const Var& table, const std::vector<int64_t>& idx) {
    require_rank2(table, "gather_rows");
    const int64_t K = table->val.dim(0), C = table->val.dim(1);
    const int64_t N = static_cast<int64_t>(idx.size());
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r) {
        if (idx[static_cast<size_t>(r)] < 0 || idx[static_cast<size_t>(r)] >= K)
            throw ConfigError("gather_rows: index out of range");
        for (int64_t c = 0; c < C; ++c)
            out.at(r, c) = table->val.at(idx[static_cast<size_t>(r)], c);
    }
    return make(std::move(out), {table}, [table, idx, K, C, N](Node& self) {
        Tensor g({K, C});
        for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < C; ++c)
                g.at(idx[static_cast<size_t>(r)], c) += self.grad.at(r, c);
        accum(*table, g);
    });
}

Var index_gather(const Var& a, std::vector<int64_t> index_map, std::vector<int64_t> out_shape) {
    if (Tensor::numel_of(out_shape) != static_cast<int64_t>(index_map.size()))
        throw ConfigError("index_gather: map size does not match output shape");
    Tensor out(out_shape);
    const int64_t n = out.numel();
    const int64_t in_n = a->val.numel();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t j = index_map[static_cast<size_t>(i)];
        if (j < 0 || j >= in_n) throw ConfigError("index_gather: index out of range");
        out[i] = a->val[j];
    }
    return make(std::move(out), {a}, [a, map = std::move(index_map)](Node& self) {
        Tensor g(a->val.shape());
        const int64_t m = self.val.numel();
        for (int64_t i = 0; i < m; ++i) g[map[static_cast<size_t>(i)]] += self.grad[i];
        accum(*a, g);
    });
}

// ----------------------------------------------------------------- broadcast

Var add_rowvec(const Var& a, const Var& v) {
    require_rank2(a, "add_rowvec");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (v->val.numel() != C) throw ConfigError("add_rowvec: vector length mismatch");
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) + v->val[c];
    return make(std::move(out), {a, v}, [a, v, N, C](Node& self) {
        accum(*a, self.grad);
        if (v->requires_grad) {
            Tensor gv(v->val.shape());
            for (int64_t c = 0; c < C; ++c) {
                double s = 0.0;
                for (int64_t r = 0; r < N; ++r) s += self.grad.at(r, c);
                gv[c] = s;
            }
            accum(*v, gv);
        }
    });
}

Var mul_rowvec(const Var& a, const Var& v) {
    require_rank2(a, "mul_rowvec");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (v->val.numel() != C) throw ConfigError("mul_rowvec: vector length mismatch");
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) * v->val[c];
    return make(std::move(out), {a, v}, [a, v, N, C](Node& self) {
        if (a->requires_grad) {
            Tensor ga({N, C});
            for (int64_t r = 0; r < N; ++r)
                for (int64_t c = 0; c < C; ++c) ga.at(r, c) = self.grad.at(r, c) * v->val[c];
            accum(*a, ga);
        }
        if (v->requires_grad) {
            Tensor gv(v->val.shape());
            for (int64_t c = 0; c < C; ++c) {
                double s = 0.0;
                for (int64_t r = 0; r < N; ++r) s += self.grad.at(r, c) * a->val.at(r, c);
                gv[c] = s;
            }
            accum(*v, gv);
        }
    });
}

Var add_colvec(const Var& a, const Var& v) {
    require_rank2(a, "add_colvec");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (v->val.numel() != N) throw ConfigError("add_colvec: vector length mismatch");
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) + v->val[r];
    return make(std::move(out), {a, v}, [a, v, N, C](Node& self) {
        accum(*a, self.grad);
        if (v->requires_grad) {
            Tensor gv(v->val.shape());
            for (int64_t r = 0; r < N; ++r) {
                double s = 0.0;
                for (int64_t c = 0; c < C; ++c) s += self.grad.at(r, c);
                gv[r] = s;
            }
            accum(*v, gv);
        }
    });
}

Var mul_colvec(const Var& a, const Var& v) {
    require_rank2(a, "mul_colvec");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    if (v->val.numel() != N) throw ConfigError("mul_colvec: vector length mismatch");
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) * v->val[r];
    return make(std::move(out), {a, v}, [a, v, N, C](Node& self) {
        if (a->requires_grad) {
            Tensor ga({N, C});
            for (int64_t r = 0; r < N; ++r)
                for (int64_t c = 0; c < C; ++c) ga.at(r, c) = self.grad.at(r, c) * v->val[r];
            accum(*a, ga);
        }
        if (v->requires_grad) {
            Tensor gv(v->val.shape());
            for (int64_t r = 0; r < N; ++r) {
                double s = 0.0;
                for (int64_t c = 0; c < C; ++c) s += self.grad.at(r, c) * a->val.at(r, c);
                gv[r] = s;
            }
            accum(*v, gv);
        }
    });
}

// ------------------------------------------------------ fused normalizations

Var softmax_rows(const Var& a) {
    require_rank2(a, "softmax_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    Tensor out({N, C});
    for (int64_t r = 0; r < N; ++r) {
        double mx = a->val.at(r, 0);
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, a->val.at(r, c));
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            out.at(r, c) = std::exp(a->val.at(r, c) - mx);
            z += out.at(r, c);
        }
        for (int64_t c = 0; c < C; ++c) out.at(r, c) /= z;
    }
    return make(std::move(out), {a}, [a, N, C](Node& self) {
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r) {
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += self.grad.at(r, c) * self.val.at(r, c);
            for (int64_t c = 0; c < C; ++c)
                g.at(r, c) = self.val.at(r, c) * (self.grad.at(r, c) - dot);
        }
        accum(*a, g);
    });
}

Var layernorm_rows(const Var& a, double eps) {
    require_rank2(a, "layernorm_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    Tensor out({N, C});
    Tensor inv_std({N});
    for (int64_t r = 0; r < N; ++r) {
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += a->val.at(r, c);
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = a->val.at(r, c) - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = (a->val.at(r, c) - mu) * is;
    }
    return make(std::move(out), {a}, [a, N, C, inv_std](Node& self) {
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r) {
            double gmean = 0.0, gxmean = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                gmean += self.grad.at(r, c);
                gxmean += self.grad.at(r, c) * self.val.at(r, c);
            }
            gmean /= static_cast<double>(C);
            gxmean /= static_cast<double>(C);
            for (int64_t c = 0; c < C; ++c)
                g.at(r, c) =
                    inv_std[r] * (self.grad.at(r, c) - gmean - self.val.at(r, c) * gxmean);
        }
        accum(*a, g);
    });
}

Var rms_normalize_rows(const Var& a, double eps) {
    require_rank2(a, "rms_normalize_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    Tensor out({N, C});
    Tensor inv_r({N});
    for (int64_t r = 0; r < N; ++r) {
        double ms = 0.0;
        for (int64_t c = 0; c < C; ++c) ms += a->val.at(r, c) * a->val.at(r, c);
        ms /= static_cast<double>(C);
        const double ir = 1.0 / std::sqrt(ms + eps);
        inv_r[r] = ir;
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) * ir;
    }
    return make(std::move(out), {a}, [a, N, C, inv_r](Node& self) {
        // y = x / r, r = sqrt(mean(x^2)+eps):
        // dx_j = g_j / r - x_j * (sum_i g_i x_i) / (C r^3)
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r) {
            double gx = 0.0;
            for (int64_t c = 0; c < C; ++c) gx += self.grad.at(r, c) * a->val.at(r, c);
            const double ir = inv_r[r];
            const double k = gx * ir * ir * ir / static_cast<double>(C);
            for (int64_t c = 0; c < C; ++c)
                g.at(r, c) = self.grad.at(r, c) * ir - a->val.at(r, c) * k;
        }
        accum(*a, g);
    });
}

Var rms_normalize_all(const Var& a, double eps) {
    const int64_t n = a->val.numel();
    double ms = 0.0;
    for (int64_t i = 0; i < n; ++i) ms += a->val[i] * a->val[i];
    ms /= static_cast<double>(n);
    const double ir = 1.0 / std::sqrt(ms + eps);
    Tensor out = a->val;
    out *= ir;
    return make(std::move(out), {a}, [a, n, ir](Node& self) {
        double gx = 0.0;
        for (int64_t i = 0; i < n; ++i) gx += self.grad[i] * a->val[i];
        const double k = gx * ir * ir * ir / static_cast<double>(n);
        Tensor g(a->val.shape());
        for (int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * ir - a->val[i] * k;
        accum(*a, g);
    });
}

Var l2_normalize_rows(const Var& a, double eps) {
    require_rank2(a, "l2_normalize_rows");
    const int64_t N = a->val.dim(0), C = a->val.dim(1);
    Tensor out({N, C});
    Tensor inv_n({N});
    for (int64_t r = 0; r < N; ++r) {
        double ss = 0.0;
        for (int64_t c = 0; c < C; ++c) ss += a->val.at(r, c) * a->val.at(r, c);
        const double in = 1.0 / std::sqrt(ss + eps);
        inv_n[r] = in;
        for (int64_t c = 0; c < C; ++c) out.at(r, c) = a->val.at(r, c) * in;
    }
    return make(std::move(out), {a}, [a, N, C, inv_n](Node& self) {
        // y = x / sqrt(||x||^2 + eps): dx_j = g_j * in - x_j * (g.x) * in^3
        Tensor g({N, C});
        for (int64_t r = 0; r < N; ++r) {
            double gx = 0.0;
            for (int64_t c = 0; c < C; ++c) gx += self.grad.at(r, c) * a->val.at(r, c);
            const double in = inv_n[r];
            const double k = gx * in * in * in;
            for (int64_t c = 0; c < C; ++c)
                g.at(r, c) = self.grad.at(r, c) * in - a->val.at(r, c) * k;
        }
        accum(*a, g);
    });
}

// --------------------------------------------------------------- convolution

Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
    if (x->val.rank() != 3 || w->val.rank() != 4)
        throw ConfigError("conv2d: expects x [Cin,H,W], w [Cout,Cin,k,k]");
    const int64_t Cin = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    const int64_t Cout = w->val.dim(0), k = w->val.dim(2);
    if (w->val.dim(1) != Cin || w->val.dim(3) != k)
        throw ConfigError("conv2d: weight shape mismatch");
    if (b->val.numel() != Cout) throw ConfigError("conv2d: bias length mismatch");
    const int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const int64_t Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ConfigError("conv2d: empty output");

    Tensor out({Cout, Ho, Wo});
    auto widx = [Cin, k](int64_t o, int64_t c, int64_t i, int64_t j) {
        return ((o * Cin + c) * k + i) * k + j;
    };
    for (int64_t o = 0; o < Cout; ++o) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double s = b->val[o];
                for (int64_t c = 0; c < Cin; ++c) {
                    for (int64_t i = 0; i < k; ++i) {
                        const int64_t ih = oh * stride + i - pad;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t j = 0; j < k; ++j) {
                            const int64_t iw = ow * stride + j - pad;
                            if (iw < 0 || iw >= W) continue;
                            s += x->val.at(c, ih, iw) * w->val[widx(o, c, i, j)];
                        }
                    }
                }
                out.at(o, oh, ow) = s;
            }
        }
    }
    return make(std::move(out), {x, w, b},
                [x, w, b, Cin, H, W, Cout, k, Ho, Wo, stride, pad, widx](Node& self) {
        Tensor gx({Cin, H, W}), gw(w->val.shape()), gb({Cout});
        for (int64_t o = 0; o < Cout; ++o) {
            for (int64_t oh = 0; oh < Ho; ++oh) {
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    const double g = self.grad.at(o, oh, ow);
                    gb[o] += g;
                    for (int64_t c = 0; c < Cin; ++c) {
                        for (int64_t i = 0; i < k; ++i) {
                            const int64_t ih = oh * stride + i - pad;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t j = 0; j < k; ++j) {
                                const int64_t iw = ow * stride + j - pad;
                                if (iw < 0 || iw >= W) continue;
                                gx.at(c, ih, iw) += g * w->val[widx(o, c, i, j)];
                                gw[widx(o, c, i, j)] += g * x->val.at(c, ih, iw);
                            }
                        }
                    }
                }
            }
        }
        accum(*x, gx);
        accum(*w, gw);
        accum(*b, gb);
    });
}

// ------------------------------------------------------------- graph control

Var stop_gradient(const Var& a) {
    // Shares the value but severs the graph: nothing flows upstream.
    return constant(a->val);
}

}  // namespace pae::ad
