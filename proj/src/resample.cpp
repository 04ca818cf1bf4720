#include "pae/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pae {

Tensor bilinear_resize(const Tensor& chw, int64_t out_h, int64_t out_w) {
    if (chw.rank() != 3) throw ConfigError("bilinear_resize: expected [C,H,W]");
    if (out_h <= 0 || out_w <= 0) throw ConfigError("bilinear_resize: bad output size");
    const int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    Tensor out({C, out_h, out_w});

    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (int64_t oy = 0; oy < out_h; ++oy) {
        // half-pixel centers: source = (dst + 0.5) * scale - 0.5
        const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        const int64_t y0 = static_cast<int64_t>(std::floor(fy));
        const double wy = fy - static_cast<double>(y0);
        const int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1);
        const int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
        for (int64_t ox = 0; ox < out_w; ++ox) {
            const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            const int64_t x0 = static_cast<int64_t>(std::floor(fx));
            const double wx = fx - static_cast<double>(x0);
            const int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1);
            const int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
            for (int64_t c = 0; c < C; ++c) {
                const double top =
                    chw.at(c, y0c, x0c) * (1.0 - wx) + chw.at(c, y0c, x1c) * wx;
                const double bot =
                    chw.at(c, y1c, x0c) * (1.0 - wx) + chw.at(c, y1c, x1c) * wx;
                out.at(c, oy, ox) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Tensor gaussian_blur(const Tensor& chw, double sigma) {
    if (chw.rank() != 3) throw ConfigError("gaussian_blur: expected [C,H,W]");
    if (sigma < 0.0) throw ConfigError("gaussian_blur: negative sigma");
    if (sigma == 0.0) return chw;
    const int64_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);

    const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    for (int64_t i = -radius; i <= radius; ++i)
        kernel[static_cast<size_t>(i + radius)] =
            std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));

    // horizontal then vertical pass; borders renormalize over in-bounds taps
    Tensor tmp({C, H, W});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                double s = 0.0, wsum = 0.0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t xx = x + i;
                    if (xx < 0 || xx >= W) continue;
                    const double k = kernel[static_cast<size_t>(i + radius)];
                    s += k * chw.at(c, y, xx);
                    wsum += k;
                }
                tmp.at(c, y, x) = s / wsum;
            }
        }
    }
    Tensor out({C, H, W});
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                double s = 0.0, wsum = 0.0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t yy = y + i;
                    if (yy < 0 || yy >= H) continue;
                    const double k = kernel[static_cast<size_t>(i + radius)];
                    s += k * tmp.at(c, yy, x);
                    wsum += k;
                }
                out.at(c, y, x) = s / wsum;
            }
        }
    }
    return out;
}

}  // namespace pae
