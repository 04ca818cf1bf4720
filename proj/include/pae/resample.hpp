#pragma once

#include "pae/tensor.hpp"

namespace pae {

// Plain-tensor spatial ops used to build fixed supervision targets.
// These run outside the autodiff graph (targets are frozen).

// Bilinear resize of a [C x H x W] tensor, half-pixel center convention
// with edge clamping. Constants are preserved exactly.
Tensor bilinear_resize(const Tensor& chw, int64_t out_h, int64_t out_w);

// Separable Gaussian blur per channel, kernel truncated at radius
// ceil(3*sigma) and renormalized at image borders so constants survive.
// sigma == 0 is the identity.
Tensor gaussian_blur(const Tensor& chw, double sigma);

}  // namespace pae
