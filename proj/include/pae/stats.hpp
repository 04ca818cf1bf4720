#pragma once

#include <optional>

#include "pae/tensor.hpp"

namespace pae {

// Frechet distance between Gaussian fits of two feature sets [n x d] and
// [m x d]: ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), computed
// through the symmetric square root. Covariances are regularized by
// +1e-6 I. Sets *warned when n or m < d (covariance is rank-deficient).
double fid(const Tensor& features_a, const Tensor& features_b, bool* warned = nullptr);

// Pearson correlation; nullopt when fewer than two points or either
// variance vanishes.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace pae
