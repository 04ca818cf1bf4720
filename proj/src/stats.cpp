#include "pae/stats.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace pae {

namespace {

// Symmetric PSD square root via eigendecomposition; small negative
// eigenvalues from roundoff clamp to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const Tensor& features_a, const Tensor& features_b, bool* warned) {
    if (features_a.rank() != 2 || features_b.rank() != 2)
        throw ConfigError("fid: features must be [n x d]");
    const int64_t n = features_a.dim(0), m = features_b.dim(0);
    const int64_t d = features_a.dim(1);
    if (features_b.dim(1) != d)
        throw ConfigError("fid: feature dimensions differ (" + std::to_string(d) + " vs " +
                          std::to_string(features_b.dim(1)) + ")");
    if (n < 2 || m < 2) throw ConfigError("fid: need at least 2 samples per set");
    if (warned) *warned = (n < d || m < d);

    auto to_eigen = [](const Tensor& t) {
        Eigen::MatrixXd out(t.dim(0), t.dim(1));
        for (int64_t i = 0; i < t.dim(0); ++i)
            for (int64_t j = 0; j < t.dim(1); ++j) out(i, j) = t.at(i, j);
        return out;
    };
    Eigen::MatrixXd a = to_eigen(features_a);
    Eigen::MatrixXd b = to_eigen(features_b);

    Eigen::VectorXd mu_a = a.colwise().mean();
    Eigen::VectorXd mu_b = b.colwise().mean();
    a.rowwise() -= mu_a.transpose();
    b.rowwise() -= mu_b.transpose();
    Eigen::MatrixXd ca = (a.transpose() * a) / static_cast<double>(n - 1);
    Eigen::MatrixXd cb = (b.transpose() * b) / static_cast<double>(m - 1);
    ca += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    cb += 1e-6 * Eigen::MatrixXd::Identity(d, d);

    // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})
    Eigen::MatrixXd ra = sqrtm_psd(ca);
    Eigen::MatrixXd inner = ra * cb * ra;
    inner = 0.5 * (inner + inner.transpose());
    const double trace_term = sqrtm_psd(inner).trace();

    const double mean_term = (mu_a - mu_b).squaredNorm();
    double v = mean_term + ca.trace() + cb.trace() - 2.0 * trace_term;
    return v > 0.0 ? v : 0.0;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ConfigError("pearson: length mismatch");
    const auto n = static_cast<int64_t>(x.size());
    if (n < 2) return std::nullopt;
    double mx = 0, my = 0;
    for (int64_t i = 0; i < n; ++i) {
        mx += x[static_cast<size_t>(i)];
        my += y[static_cast<size_t>(i)];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double dx = x[static_cast<size_t>(i)] - mx;
        const double dy = y[static_cast<size_t>(i)] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

}  // namespace pae
