#include "pae/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pae/error.hpp"

namespace pae {

ImageTensor make_image(int64_t h, int64_t w) { return ImageTensor{Tensor({3, h, w})}; }

void validate_image(const ImageTensor& img) {
    if (img.pixels.rank() != 3 || img.pixels.dim(0) != 3)
        throw ConfigError("image: expected [3,H,W], got " + img.pixels.shape_str());
    const int64_t n = img.pixels.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double v = img.pixels[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            throw ConfigError("image: pixel values must lie in [0,1]");
    }
}

std::vector<LabeledImage> make_synthetic_dataset(int64_t count, int64_t classes, int64_t size,
                                                 int64_t grid_cell, uint64_t seed) {
    if (count <= 0 || classes <= 0) throw ConfigError("make_synthetic_dataset: empty request");
    if (size % grid_cell != 0)
        throw ConfigError("make_synthetic_dataset: size must be divisible by grid cell");

    // Class attribute tables come from a dedicated substream so the same
    // classes reappear for any sample count.
    Rng class_rng = Rng::substream(seed, "dataset-classes");
    struct ClassStyle {
        double fx, fy, phase_scale;
        double color[3];
        double bg_tint;
    };
    // Class attributes dominate instance attributes so pooled features
    // separate by class, standing in for the strong semantics a frozen
    // encoder would carry.
    std::vector<ClassStyle> styles(static_cast<size_t>(classes));
    for (auto& s : styles) {
        s.fx = class_rng.uniform(1.5, 6.0);
        s.fy = class_rng.uniform(1.5, 6.0);
        s.phase_scale = class_rng.uniform(0.0, 1.0);
        for (auto& c : s.color) c = class_rng.uniform(0.2, 0.9);
        s.bg_tint = class_rng.uniform(-0.12, 0.12);
    }

    Rng rng = Rng::substream(seed, "dataset-samples");
    const int64_t cells = size / grid_cell;

    std::vector<LabeledImage> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t idx = 0; idx < count; ++idx) {
        const int cls = static_cast<int>(idx % classes);  // balanced classes
        const ClassStyle& st = styles[static_cast<size_t>(cls)];

        // Object rectangle snapped to the cell grid, 1/2 to 3/4 of each side.
        const int64_t min_span = std::max<int64_t>(1, cells / 2);
        const int64_t max_span = std::max<int64_t>(min_span, (3 * cells) / 4);
        const int64_t ow = min_span + rng.uniform_int(max_span - min_span + 1);
        const int64_t oh = min_span + rng.uniform_int(max_span - min_span + 1);
        const int64_t ox = rng.uniform_int(cells - ow + 1);
        const int64_t oy = rng.uniform_int(cells - oh + 1);
        const double phase = rng.uniform(0.0, 2.0 * M_PI) * st.phase_scale;
        const double bg_slope_x = rng.uniform(-0.06, 0.06);
        const double bg_slope_y = rng.uniform(-0.06, 0.06);
        const double bg_level = rng.uniform(0.40, 0.50);

        LabeledImage li;
        li.class_id = cls;
        li.image = make_image(size, size);
        li.mask.h = size;
        li.mask.w = size;
        li.mask.labels.assign(static_cast<size_t>(size * size), 0);

        for (int64_t y = 0; y < size; ++y) {
            for (int64_t x = 0; x < size; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(size);
                const double v = static_cast<double>(y) / static_cast<double>(size);
                const bool inside = (x / grid_cell >= ox && x / grid_cell < ox + ow &&
                                     y / grid_cell >= oy && y / grid_cell < oy + oh);
                for (int64_t ch = 0; ch < 3; ++ch) {
                    double val;
                    if (inside) {
                        const double wave =
                            0.5 + 0.5 * std::sin(2.0 * M_PI * (st.fx * u + st.fy * v) + phase);
                        val = 0.8 * st.color[ch] + 0.2 * wave;
                    } else {
                        val = bg_level + bg_slope_x * (u - 0.5) + bg_slope_y * (v - 0.5) +
                              st.bg_tint;
                    }
                    li.image.pixels.at(ch, y, x) = std::clamp(val, 0.0, 1.0);
                }
                if (inside) li.mask.at(y, x) = 1;
            }
        }
        out.push_back(std::move(li));
    }
    return out;
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& img) {
    const int64_t h = img.height(), w = img.width();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("write_ppm: cannot open " + path.string());
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                const double v = std::clamp(img.pixels.at(c, y, x), 0.0, 1.0);
                f.put(static_cast<char>(std::lround(v * 255.0)));
            }
        }
    }
    if (!f) throw FormatError("write_ppm: short write to " + path.string());
}

}  // namespace pae
