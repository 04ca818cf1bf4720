#pragma once

#include <filesystem>
#include <vector>

#include "pae/rng.hpp"
#include "pae/tensor.hpp"

namespace pae {

// RGB image, channels-first [3 x H x W], values in [0, 1].
struct ImageTensor {
    Tensor pixels;

    int64_t height() const { return pixels.dim(1); }
    int64_t width() const { return pixels.dim(2); }
};

ImageTensor make_image(int64_t h, int64_t w);
void validate_image(const ImageTensor& img);

// Integer label grid [H x W] stored densely.
struct Mask {
    std::vector<int> labels;
    int64_t h = 0, w = 0;

    int at(int64_t r, int64_t c) const { return labels[static_cast<size_t>(r * w + c)]; }
    int& at(int64_t r, int64_t c) { return labels[static_cast<size_t>(r * w + c)]; }
};

struct LabeledImage {
    ImageTensor image;
    Mask mask;     // 0 = background, 1.. = object segments
    int class_id;  // semantic class of the object
};

// Hermetic dataset: each class owns a grating texture and base color; each
// sample places one object rectangle (snapped to a cell grid) over a smooth
// background. Masks mark background/object, class_id gives the semantic
// label. Deterministic given (count, classes, size, seed).
std::vector<LabeledImage> make_synthetic_dataset(int64_t count, int64_t classes, int64_t size,
                                                 int64_t grid_cell, uint64_t seed);

// Plain binary PPM (P6) writer; values clamped to [0,1] at file boundary.
void write_ppm(const std::filesystem::path& path, const ImageTensor& img);

}  // namespace pae
