#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "pae/image.hpp"
#include "pae/tensor.hpp"

namespace pae {

// Frozen-encoder token features for one image plus grid metadata.
struct FeatureMap {
    Tensor tokens;  // [N x D]
    int64_t rows = 0, cols = 0;
    std::string source_id;
    int64_t image_size = 0;

    int64_t token_count() const { return tokens.dim(0); }
    int64_t channels() const { return tokens.dim(1); }
};

// A frozen representation encoder. Implementations are immutable after
// construction and safe for concurrent encode() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual FeatureMap encode(const ImageTensor& image) const = 0;
    virtual int64_t patch_size() const = 0;
    virtual int64_t feature_dim() const = 0;
    virtual std::string id() const = 0;
};

// Hermetic stand-in for a frozen VFM: each non-overlapping patch is
// flattened, mapped through a fixed seed-derived Gaussian projection
// [patch_dim -> D], then the token grid is smoothed once with a 3x3 mean
// filter (averaging over in-bounds neighbors). Linear end to end.
class SyntheticBackend : public Backend {
public:
    SyntheticBackend(uint64_t seed, int64_t patch = 16, int64_t dim = 64);

    FeatureMap encode(const ImageTensor& image) const override;
    int64_t patch_size() const override { return patch_; }
    int64_t feature_dim() const override { return dim_; }
    std::string id() const override;

    uint64_t seed() const { return seed_; }
    const Tensor& projection() const { return proj_; }

private:
    uint64_t seed_;
    int64_t patch_;
    int64_t dim_;
    Tensor proj_;  // [3*patch^2 x D]
};

// Ingestion path for real pretrained encoders: features are produced out
// of band and dropped into a cache directory keyed by content hash; this
// backend only reads them. Preprocessing beyond [0,1] scaling is the
// producer's concern.
class ExternalBackend : public Backend {
public:
    ExternalBackend(std::filesystem::path cache_dir, std::string backend_id, int64_t patch,
                    int64_t dim);

    FeatureMap encode(const ImageTensor& image) const override;
    int64_t patch_size() const override { return patch_; }
    int64_t feature_dim() const override { return dim_; }
    std::string id() const override { return id_; }

private:
    std::filesystem::path cache_dir_;
    std::string id_;
    int64_t patch_;
    int64_t dim_;
};

// Checked encode: validates divisibility and output invariants.
FeatureMap encode_image(const ImageTensor& image, const Backend& backend);

// Cache key: content hash of (image bytes as f32, backend id, seed string).
std::string feature_cache_key(const ImageTensor& image, const std::string& backend_id);

// Write/read a FeatureMap into a cache directory under its key.
void write_feature_cache(const std::filesystem::path& dir, const std::string& key,
                         const FeatureMap& fm);

std::unique_ptr<Backend> make_backend(const std::string& id, uint64_t seed, int64_t patch,
                                      int64_t dim, const std::filesystem::path& cache_dir);

}  // namespace pae
