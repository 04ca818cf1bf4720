#include "pae/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"
#include "pae/rng.hpp"

namespace pae {

using json = nlohmann::json;

TokenLabels project_mask_to_latent(const Mask& mask, int64_t rows, int64_t cols) {
    if (rows <= 0 || cols <= 0) throw ConfigError("project_mask_to_latent: bad grid");
    if (mask.h % rows != 0 || mask.w % cols != 0)
        throw ConfigError("project_mask_to_latent: mask " + std::to_string(mask.h) + "x" +
                          std::to_string(mask.w) + " not divisible by grid " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    const int64_t bh = mask.h / rows, bw = mask.w / cols;

    std::vector<int> voted(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            std::map<int, int64_t> counts;  // ordered: ties resolve to smaller id
            for (int64_t y = r * bh; y < (r + 1) * bh; ++y)
                for (int64_t x = c * bw; x < (c + 1) * bw; ++x) counts[mask.at(y, x)] += 1;
            int best = counts.begin()->first;
            int64_t best_n = counts.begin()->second;
            for (const auto& [label, n] : counts) {
                if (n > best_n) {
                    best = label;
                    best_n = n;
                }
            }
            voted[static_cast<size_t>(r * cols + c)] = best;
        }
    }

    // compact surviving labels to [0, k) preserving ascending original ids
    std::set<int> distinct(voted.begin(), voted.end());
    std::map<int, int> remap;
    int next = 0;
    for (int v : distinct) remap[v] = next++;

    TokenLabels out;
    out.k = next;
    out.labels.reserve(voted.size());
    for (int v : voted) out.labels.push_back(remap[v]);
    return out;
}

Tensor token_affinity(const Tensor& tokens, double sigma, int64_t* flagged) {
    if (sigma <= 0.0)
        throw ConfigError("token_affinity: sigma must be positive, got " + std::to_string(sigma));
    if (tokens.rank() != 2) throw ConfigError("token_affinity: tokens must be [N x d]");
    const int64_t N = tokens.dim(0), d = tokens.dim(1);

    constexpr double kEps = 1e-12;
    if (flagged) *flagged = 0;
    Tensor hat({N, d});
    for (int64_t i = 0; i < N; ++i) {
        double ss = 0.0;
        for (int64_t c = 0; c < d; ++c) ss += tokens.at(i, c) * tokens.at(i, c);
        if (ss == 0.0 && flagged) ++(*flagged);
        const double inv = 1.0 / std::sqrt(ss + kEps);
        for (int64_t c = 0; c < d; ++c) hat.at(i, c) = tokens.at(i, c) * inv;
    }

    Tensor a({N, N});
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = i + 1; j < N; ++j) {
            double dot = 0.0;
            for (int64_t c = 0; c < d; ++c) dot += hat.at(i, c) * hat.at(j, c);
            const double v = std::exp(dot / sigma);
            a.at(i, j) = v;
            a.at(j, i) = v;
        }
    }
    return a;
}

namespace {

// k-means with k-means++ seeding; deterministic reductions, tie to the
// lower index.
struct KMeansResult {
    std::vector<int> labels;
    double inertia = 0.0;
};

KMeansResult kmeans_once(const Tensor& rows, int64_t k, Rng& rng) {
    const int64_t N = rows.dim(0), D = rows.dim(1);
    auto dist2 = [&](int64_t i, const std::vector<double>& c) {
        double s = 0.0;
        for (int64_t d = 0; d < D; ++d) {
            const double v = rows.at(i, d) - c[static_cast<size_t>(d)];
            s += v * v;
        }
        return s;
    };

    // k-means++ seeding
    std::vector<std::vector<double>> centers;
    centers.reserve(static_cast<size_t>(k));
    std::vector<double> mind2(static_cast<size_t>(N), 0.0);
    {
        const int64_t first = rng.uniform_int(N);
        centers.emplace_back(rows.data() + first * D, rows.data() + (first + 1) * D);
        for (int64_t i = 0; i < N; ++i) mind2[static_cast<size_t>(i)] = dist2(i, centers[0]);
        while (static_cast<int64_t>(centers.size()) < k) {
            double total = 0.0;
            for (double v : mind2) total += v;
            int64_t pick = 0;
            if (total <= 0.0) {
                pick = rng.uniform_int(N);  // all points coincide with centers
            } else {
                double r = rng.uniform() * total;
                double acc = 0.0;
                pick = N - 1;
                for (int64_t i = 0; i < N; ++i) {
                    acc += mind2[static_cast<size_t>(i)];
                    if (r <= acc) {
                        pick = i;
                        break;
                    }
                }
            }
            centers.emplace_back(rows.data() + pick * D, rows.data() + (pick + 1) * D);
            for (int64_t i = 0; i < N; ++i)
                mind2[static_cast<size_t>(i)] =
                    std::min(mind2[static_cast<size_t>(i)], dist2(i, centers.back()));
        }
    }

    std::vector<int> labels(static_cast<size_t>(N), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int64_t i = 0; i < N; ++i) {
            int best = 0;
            double bestd = dist2(i, centers[0]);
            for (int64_t c = 1; c < k; ++c) {
                const double d = dist2(i, centers[static_cast<size_t>(c)]);
                if (d < bestd) {
                    bestd = d;
                    best = static_cast<int>(c);
                }
            }
            if (labels[static_cast<size_t>(i)] != best) {
                labels[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        // recompute centers; empty clusters keep their previous position
        std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                              std::vector<double>(static_cast<size_t>(D), 0.0));
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (int64_t i = 0; i < N; ++i) {
            const auto c = static_cast<size_t>(labels[static_cast<size_t>(i)]);
            counts[c] += 1;
            for (int64_t d = 0; d < D; ++d) sums[c][static_cast<size_t>(d)] += rows.at(i, d);
        }
        for (int64_t c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] == 0) continue;
            for (int64_t d = 0; d < D; ++d)
                centers[static_cast<size_t>(c)][static_cast<size_t>(d)] =
                    sums[static_cast<size_t>(c)][static_cast<size_t>(d)] /
                    static_cast<double>(counts[static_cast<size_t>(c)]);
        }
        if (!changed) break;
    }

    KMeansResult res;
    res.labels = std::move(labels);
    for (int64_t i = 0; i < N; ++i)
        res.inertia += dist2(i, centers[static_cast<size_t>(res.labels[static_cast<size_t>(i)])]);
    return res;
}

}  // namespace

TokenLabels spectral_cluster(const Tensor& affinity, int64_t k, uint64_t seed,
                             int64_t* isolated) {
    if (affinity.rank() != 2 || affinity.dim(0) != affinity.dim(1))
        throw ConfigError("spectral_cluster: affinity must be square");
    const int64_t N = affinity.dim(0);
    if (k < 1 || k > N) throw ConfigError("spectral_cluster: need 1 <= k <= N");

    TokenLabels out;
    out.k = static_cast<int>(k);
    if (k == 1) {
        out.labels.assign(static_cast<size_t>(N), 0);
        return out;
    }

    // Constant clustering guard: a structureless affinity (all
    // off-diagonal entries equal, e.g. identical tokens) has a fully
    // degenerate eigenspace; any split would be arbitrary, so the
    // partition collapses to a single cluster.
    {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < N; ++j) {
                if (i == j) continue;
                lo = std::min(lo, affinity.at(i, j));
                hi = std::max(hi, affinity.at(i, j));
            }
        }
        if (N > 1 && hi - lo <= 1e-12 * std::max(1.0, hi)) {
            out.labels.assign(static_cast<size_t>(N), 0);
            return out;
        }
    }

    Eigen::MatrixXd A(N, N);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) A(i, j) = affinity.at(i, j);
    Eigen::VectorXd deg = A.rowwise().sum();
    if (isolated) *isolated = 0;
    Eigen::VectorXd dinv(N);
    for (int64_t i = 0; i < N; ++i) {
        if (deg(i) <= 0.0) {
            dinv(i) = 0.0;  // isolated row: embeds at the origin
            if (isolated) ++(*isolated);
        } else {
            dinv(i) = 1.0 / std::sqrt(deg(i));
        }
    }
    Eigen::MatrixXd lsym =
        Eigen::MatrixXd::Identity(N, N) - dinv.asDiagonal() * A * dinv.asDiagonal();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lsym);
    if (es.info() != Eigen::Success)
        throw NumericError("spectral_cluster: eigendecomposition failed");
    // bottom-k eigenvectors (ascending eigenvalues), rows unit-normalized
    Tensor emb({N, k});
    for (int64_t i = 0; i < N; ++i) {
        double ss = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            emb.at(i, c) = es.eigenvectors()(i, c);
            ss += emb.at(i, c) * emb.at(i, c);
        }
        if (ss > 0.0) {
            const double inv = 1.0 / std::sqrt(ss);
            for (int64_t c = 0; c < k; ++c) emb.at(i, c) *= inv;
        }
    }

    // 10 restarts from a fixed seed stream, keep best inertia
    Rng base = Rng::substream(seed, "spectral-kmeans");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < 10; ++r) {
        Rng rng(base.next_u64());
        KMeansResult cand = kmeans_once(emb, k, rng);
        if (cand.inertia < best.inertia) best = std::move(cand);
    }
    out.labels = std::move(best.labels);
    return out;
}

double nmi(const TokenLabels& a, const TokenLabels& b) {
    if (a.size() != b.size()) throw ConfigError("nmi: label vectors must have equal length");
    const int64_t n = a.size();
    if (n == 0) throw ConfigError("nmi: empty labels");

    std::map<std::pair<int, int>, int64_t> joint;
    std::map<int, int64_t> ca, cb;
    for (int64_t i = 0; i < n; ++i) {
        joint[{a.labels[static_cast<size_t>(i)], b.labels[static_cast<size_t>(i)]}] += 1;
        ca[a.labels[static_cast<size_t>(i)]] += 1;
        cb[b.labels[static_cast<size_t>(i)]] += 1;
    }
    auto entropy = [n](const std::map<int, int64_t>& counts) {
        double h = 0.0;
        for (const auto& [_, c] : counts) {
            const double p = static_cast<double>(c) / static_cast<double>(n);
            h -= p * std::log(p);
        }
        return h;
    };
    const double ha = entropy(ca), hb = entropy(cb);
    if (ha == 0.0 || hb == 0.0) {
        // zero-entropy guard: two constant partitions are identical
        return (ha == 0.0 && hb == 0.0) ? 1.0 : 0.0;
    }
    double mi = 0.0;
    for (const auto& [ab, c] : joint) {
        const double pij = static_cast<double>(c) / static_cast<double>(n);
        const double pi = static_cast<double>(ca[ab.first]) / static_cast<double>(n);
        const double qj = static_cast<double>(cb[ab.second]) / static_cast<double>(n);
        mi += pij * std::log(pij / (pi * qj));
    }
    double v = mi / std::sqrt(ha * hb);
    return std::clamp(v, 0.0, 1.0);
}

double ssc(const Tensor& tokens, const TokenLabels& ground_truth, double sigma, uint64_t seed) {
    if (tokens.dim(0) != ground_truth.size())
        throw ConfigError("ssc: token count does not match label count");
    TokenLabels pred = spectral_cluster(token_affinity(tokens, sigma),
                                        std::max(1, ground_truth.k), seed);
    return nmi(ground_truth, pred);
}

std::vector<double> lpc_weights(const std::vector<double>& scales) {
    if (scales.empty()) throw ConfigError("lpc_weights: empty scale set");
    double denom = 0.0;
    for (double r : scales) {
        if (r <= 0.0) throw ConfigError("lpc_weights: scales must be positive");
        denom += 1.0 / r;
    }
    std::vector<double> w;
    w.reserve(scales.size());
    for (double r : scales) w.push_back((1.0 / r) / denom);
    return w;
}

double lpc_single_scale(const DecodeFn& decode, const std::vector<Tensor>& latents, double rho,
                        int64_t directions, uint64_t seed, const PerceptualMetric& perceptual) {
    if (latents.empty()) throw ConfigError("lpc: empty latent set");
    if (directions < 1) throw ConfigError("lpc: need at least one direction");

    std::vector<double> values;
    values.reserve(latents.size() * static_cast<size_t>(directions));
    for (size_t s = 0; s < latents.size(); ++s) {
        const Tensor& z = latents[s];
        Tensor base = decode(z);
        double znorm = 0.0;
        for (int64_t i = 0; i < z.numel(); ++i) znorm += z[i] * z[i];
        znorm = std::sqrt(znorm);
        const double eps = rho * znorm;

        Rng rng = Rng::substream(seed, "lpc-sample-" + std::to_string(s));
        for (int64_t m = 0; m < directions; ++m) {
            Tensor u(z.shape());
            double ss = 0.0;
            for (int64_t i = 0; i < u.numel(); ++i) {
                u[i] = rng.normal();
                ss += u[i] * u[i];
            }
            const double inv = 1.0 / std::sqrt(ss);
            Tensor plus = z, minus = z;
            for (int64_t i = 0; i < u.numel(); ++i) {
                const double step = eps * u[i] * inv;
                plus[i] += step;
                minus[i] -= step;
            }
            const double dp = perceptual.distance(decode(plus), base);
            const double dm = perceptual.distance(decode(minus), base);
            values.push_back(0.5 * (dp + dm));
        }
    }
    return pairwise_sum(values) / static_cast<double>(values.size());
}

double lpc(const DecodeFn& decode, const std::vector<Tensor>& latents, const LpcConfig& cfg,
           const PerceptualMetric& perceptual) {
    const auto w = lpc_weights(cfg.scales);
    double total = 0.0;
    for (size_t s = 0; s < cfg.scales.size(); ++s) {
        total += w[s] * lpc_single_scale(decode, latents, cfg.scales[s], cfg.directions,
                                         cfg.seed + s, perceptual);
    }
    return total;
}

GsqResult gsq(const Tensor& pooled, const std::vector<int>& labels, int64_t subsets,
              int64_t classes_per_subset, uint64_t seed) {
    if (pooled.rank() != 2) throw ConfigError("gsq: pooled features must be [N x d]");
    const int64_t N = pooled.dim(0), d = pooled.dim(1);
    if (static_cast<int64_t>(labels.size()) != N)
        throw ConfigError("gsq: label count does not match samples");
    if (subsets < 1) throw ConfigError("gsq: need at least one subset");

    std::set<int> class_set(labels.begin(), labels.end());
    std::vector<int> classes(class_set.begin(), class_set.end());
    const int64_t total_classes = static_cast<int64_t>(classes.size());
    const int64_t pick = std::min(classes_per_subset, total_classes);

    GsqResult res;
    Rng rng = Rng::substream(seed, "gsq-subsets");
    for (int64_t s = 0; s < subsets; ++s) {
        // sample `pick` distinct classes (partial Fisher-Yates)
        std::vector<int> pool = classes;
        std::vector<int> chosen;
        for (int64_t i = 0; i < pick; ++i) {
            const int64_t j = i + rng.uniform_int(static_cast<int64_t>(pool.size()) - i);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            chosen.push_back(pool[static_cast<size_t>(i)]);
        }
        std::sort(chosen.begin(), chosen.end());
        std::set<int> chosen_set(chosen.begin(), chosen.end());

        std::vector<int64_t> idx;
        for (int64_t i = 0; i < N; ++i)
            if (chosen_set.count(labels[static_cast<size_t>(i)])) idx.push_back(i);
        if (idx.size() < 2) {
            res.skipped_subsets += 1;
            continue;
        }
        const auto n = static_cast<int64_t>(idx.size());

        // center by subset mean, l2-normalize
        std::vector<double> mean(static_cast<size_t>(d), 0.0);
        for (int64_t i : idx)
            for (int64_t c = 0; c < d; ++c)
                mean[static_cast<size_t>(c)] += pooled.at(i, c) / static_cast<double>(n);
        Tensor f({n, d});
        for (int64_t r = 0; r < n; ++r) {
            double ss = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                f.at(r, c) = pooled.at(idx[static_cast<size_t>(r)], c) -
                             mean[static_cast<size_t>(c)];
                ss += f.at(r, c) * f.at(r, c);
            }
            const double inv = 1.0 / std::sqrt(ss + 1e-12);
            for (int64_t c = 0; c < d; ++c) f.at(r, c) *= inv;
        }

        // 1-NN by cosine; ties resolve to the smaller index
        int64_t hits = 0;
        for (int64_t i = 0; i < n; ++i) {
            int64_t best = -1;
            double best_cos = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double dot = 0.0;
                for (int64_t c = 0; c < d; ++c) dot += f.at(i, c) * f.at(j, c);
                if (dot > best_cos) {
                    best_cos = dot;
                    best = j;
                }
            }
            if (labels[static_cast<size_t>(idx[static_cast<size_t>(i)])] ==
                labels[static_cast<size_t>(idx[static_cast<size_t>(best)])])
                ++hits;
        }
        res.per_subset.push_back(static_cast<double>(hits) / static_cast<double>(n));
        res.subset_class_ids.push_back(chosen);
    }

    if (res.per_subset.empty())
        throw ConfigError("gsq: every subset was skipped (too few samples)");
    res.mean = pairwise_sum(res.per_subset) / static_cast<double>(res.per_subset.size());
    double var = 0.0;
    for (double v : res.per_subset) var += (v - res.mean) * (v - res.mean);
    res.stddev = std::sqrt(var / static_cast<double>(res.per_subset.size()));
    return res;
}

double erank(const Tensor& features, bool* degenerate) {
    if (features.rank() != 2) throw ConfigError("erank: features must be [N x C]");
    const int64_t N = features.dim(0), C = features.dim(1);
    if (N < 2) throw ConfigError("erank: need at least 2 rows");
    if (degenerate) *degenerate = false;

    Eigen::MatrixXd f(N, C);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c) f(i, c) = features.at(i, c);
    f.rowwise() -= f.colwise().mean();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
    const auto& sv = svd.singularValues();
    const double total = sv.sum();
    if (total <= 0.0) {
        // rank 0 after centering: all rows identical
        if (degenerate) *degenerate = true;
        return 1.0 / static_cast<double>(C);
    }
    double h = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        const double p = sv(i) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::exp(h) / static_cast<double>(C);
}

Tensor latent_tokens(const Tensor& latent_chw) {
    if (latent_chw.rank() != 3) throw ConfigError("latent_tokens: expected [d,H,W]");
    const int64_t d = latent_chw.dim(0), H = latent_chw.dim(1), W = latent_chw.dim(2);
    Tensor out({H * W, d});
    for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
            for (int64_t c = 0; c < d; ++c) out.at(h * W + w, c) = latent_chw.at(c, h, w);
    return out;
}

Tensor pooled_features(const std::vector<Tensor>& latents) {
    if (latents.empty()) throw ConfigError("pooled_features: empty set");
    const int64_t d = latents[0].dim(0);
    Tensor out({static_cast<int64_t>(latents.size()), d});
    for (size_t i = 0; i < latents.size(); ++i) {
        const Tensor& z = latents[i];
        if (z.rank() != 3 || z.dim(0) != d) throw ConfigError("pooled_features: shape mismatch");
        const int64_t hw = z.dim(1) * z.dim(2);
        for (int64_t c = 0; c < d; ++c) {
            double s = pairwise_sum(z.data() + c * hw, hw);
            out.at(static_cast<int64_t>(i), c) = s / static_cast<double>(hw);
        }
    }
    return out;
}

GeometryReport geometry_report(const GeometryInputs& inputs, const GeometryConfig& cfg) {
    if (inputs.latents.empty()) throw ConfigError("geometry_report: no latents");
    auto perceptual = make_perceptual(cfg.perceptual, cfg.seed);

    GeometryReport rep;
    rep.seed = cfg.seed;
    rep.sigma = cfg.sigma;
    rep.scales = cfg.lpc.scales;
    rep.scale_weights = lpc_weights(cfg.lpc.scales);
    rep.lpc_directions = cfg.lpc.directions;
    rep.gsq_subsets = cfg.gsq_subsets;
    rep.gsq_classes = cfg.gsq_classes;

    // SSC: mean over instances with masks
    if (inputs.masks.has_value()) {
        if (inputs.masks->size() != inputs.latents.size())
            throw ConfigError("geometry_report: mask count does not match latents");
        std::vector<double> vals;
        for (size_t i = 0; i < inputs.latents.size(); ++i) {
            const Tensor& z = inputs.latents[i];
            TokenLabels gt =
                project_mask_to_latent((*inputs.masks)[i], z.dim(1), z.dim(2));
            vals.push_back(ssc(latent_tokens(z), gt, cfg.sigma, cfg.seed));
        }
        rep.ssc = pairwise_sum(vals) / static_cast<double>(vals.size());
    } else {
        rep.omitted["ssc"] = "masks unavailable";
    }

    // LPC needs a decoder
    if (inputs.decoder.has_value()) {
        LpcConfig lc = cfg.lpc;
        lc.seed = cfg.seed;
        rep.lpc = lpc(*inputs.decoder, inputs.latents, lc, *perceptual);
    } else {
        rep.omitted["lpc"] = "decoder unavailable";
    }

    // GSQ needs labels
    if (inputs.labels.has_value()) {
        GsqResult g = gsq(pooled_features(inputs.latents), *inputs.labels, cfg.gsq_subsets,
                          cfg.gsq_classes, cfg.seed);
        rep.gsq_mean = g.mean;
        rep.gsq_std = g.stddev;
        rep.gsq_subset_class_ids = g.subset_class_ids;
    } else {
        rep.omitted["gsq"] = "labels unavailable";
    }

    rep.erank = erank(pooled_features(inputs.latents));
    return rep;
}

std::string GeometryReport::to_json() const {
    json j;
    auto put_opt = [&](const char* name, const std::optional<double>& v) {
        if (v.has_value()) j[name] = *v;
    };
    put_opt("ssc", ssc);
    put_opt("lpc", lpc);
    put_opt("gsq_mean", gsq_mean);
    put_opt("gsq_std", gsq_std);
    put_opt("erank", erank);
    j["omitted"] = omitted;
    j["eval_meta"] = {
        {"seed", seed},
        {"sigma", sigma},
        {"scales", scales},
        {"scale_weights", scale_weights},
        {"lpc_directions", lpc_directions},
        {"gsq_subsets", gsq_subsets},
        {"gsq_classes", gsq_classes},
        {"gsq_subset_class_ids", gsq_subset_class_ids},
    };
    return j.dump(2);
}

GeometryReport GeometryReport::from_json(const std::string& text) {
    json j = json::parse(text);
    GeometryReport rep;
    auto get_opt = [&](const char* name) -> std::optional<double> {
        if (j.contains(name)) return j[name].get<double>();
        return std::nullopt;
    };
    rep.ssc = get_opt("ssc");
    rep.lpc = get_opt("lpc");
    rep.gsq_mean = get_opt("gsq_mean");
    rep.gsq_std = get_opt("gsq_std");
    rep.erank = get_opt("erank");
    rep.omitted = j["omitted"].get<std::map<std::string, std::string>>();
    const auto& m = j["eval_meta"];
    rep.seed = m["seed"].get<uint64_t>();
    rep.sigma = m["sigma"].get<double>();
    rep.scales = m["scales"].get<std::vector<double>>();
    rep.scale_weights = m["scale_weights"].get<std::vector<double>>();
    rep.lpc_directions = m["lpc_directions"].get<int64_t>();
    rep.gsq_subsets = m["gsq_subsets"].get<int64_t>();
    rep.gsq_classes = m["gsq_classes"].get<int64_t>();
    rep.gsq_subset_class_ids = m["gsq_subset_class_ids"].get<std::vector<std::vector<int>>>();
    return rep;
}

}  // namespace pae
