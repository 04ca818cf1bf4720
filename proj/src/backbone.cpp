#include "pae/backbone.hpp"

#include <cstring>
#include <fstream>

#include "pae/io.hpp"
#include "pae/rng.hpp"

namespace pae {

namespace {

// One pass of 3x3 mean filtering over the token grid; border tokens
// average over their in-bounds neighbors only, so constants (and zeros)
// are preserved and the map stays linear.
Tensor smooth_token_grid(const Tensor& tokens, int64_t rows, int64_t cols) {
    const int64_t D = tokens.dim(1);
    Tensor out({rows * cols, D});
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            int64_t count = 0;
            for (int64_t dr = -1; dr <= 1; ++dr) {
                for (int64_t dc = -1; dc <= 1; ++dc) {
                    const int64_t rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                    ++count;
                    const int64_t src = rr * cols + cc;
                    for (int64_t d = 0; d < D; ++d)
                        out.at(r * cols + c, d) += tokens.at(src, d);
                }
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (int64_t d = 0; d < D; ++d) out.at(r * cols + c, d) *= inv;
        }
    }
    return out;
}

}  // namespace

SyntheticBackend::SyntheticBackend(uint64_t seed, int64_t patch, int64_t dim)
    : seed_(seed), patch_(patch), dim_(dim) {
    if (patch <= 0 || dim <= 0) throw ConfigError("SyntheticBackend: bad patch/dim");
    const int64_t patch_dim = 3 * patch * patch;
    proj_ = Tensor({patch_dim, dim});
    Rng rng = Rng::substream(seed, "synthetic-backend-proj");
    const double scale = 1.0 / std::sqrt(static_cast<double>(patch_dim));
    for (int64_t i = 0; i < proj_.numel(); ++i) proj_[i] = rng.normal() * scale;
}

std::string SyntheticBackend::id() const {
    return "synthetic-p" + std::to_string(patch_) + "-d" + std::to_string(dim_) + "-s" +
           std::to_string(seed_);
}

FeatureMap SyntheticBackend::encode(const ImageTensor& image) const {
    const int64_t H = image.height(), W = image.width();
    if (H % patch_ != 0 || W % patch_ != 0)
        throw ConfigError("SyntheticBackend: image " + std::to_string(H) + "x" +
                          std::to_string(W) + " not divisible by patch size " +
                          std::to_string(patch_));
    const int64_t rows = H / patch_, cols = W / patch_;
    const int64_t N = rows * cols;
    const int64_t patch_dim = 3 * patch_ * patch_;

    Tensor raw({N, dim_});
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            // Flatten in (channel, y, x) order within the patch.
            std::vector<double> flat(static_cast<size_t>(patch_dim));
            int64_t k = 0;
            for (int64_t ch = 0; ch < 3; ++ch)
                for (int64_t y = 0; y < patch_; ++y)
                    for (int64_t x = 0; x < patch_; ++x)
                        flat[static_cast<size_t>(k++)] =
                            image.pixels.at(ch, r * patch_ + y, c * patch_ + x);
            for (int64_t d = 0; d < dim_; ++d) {
                double s = 0.0;
                for (int64_t i = 0; i < patch_dim; ++i)
                    s += flat[static_cast<size_t>(i)] * proj_.at(i, d);
                raw.at(r * cols + c, d) = s;
            }
        }
    }

    FeatureMap fm;
    fm.tokens = smooth_token_grid(raw, rows, cols);
    fm.rows = rows;
    fm.cols = cols;
    fm.source_id = id();
    fm.image_size = H;
    return fm;
}

ExternalBackend::ExternalBackend(std::filesystem::path cache_dir, std::string backend_id,
                                 int64_t patch, int64_t dim)
    : cache_dir_(std::move(cache_dir)), id_(std::move(backend_id)), patch_(patch), dim_(dim) {}

FeatureMap ExternalBackend::encode(const ImageTensor& image) const {
    const std::string key = feature_cache_key(image, id_);
    const auto path = cache_dir_ / (key + ".paet");
    if (!std::filesystem::exists(path)) {
        throw BackendError("external backend '" + id_ + "': missing feature cache file " +
                           path.string());
    }
    Tensor tokens = read_tensor(path);
    if (tokens.rank() != 2 || tokens.dim(1) != dim_)
        throw ConfigError("external backend '" + id_ + "': cached tensor has shape " +
                          tokens.shape_str() + ", expected [N x " + std::to_string(dim_) + "]");
    const int64_t H = image.height(), W = image.width();
    if (H % patch_ != 0 || W % patch_ != 0)
        throw ConfigError("external backend: image dims not divisible by patch size");
    FeatureMap fm;
    fm.rows = H / patch_;
    fm.cols = W / patch_;
    if (fm.rows * fm.cols != tokens.dim(0))
        throw ConfigError("external backend: cached token count does not match image grid");
    fm.tokens = std::move(tokens);
    fm.source_id = id_;
    fm.image_size = H;
    return fm;
}

FeatureMap encode_image(const ImageTensor& image, const Backend& backend) {
    const int64_t H = image.height(), W = image.width();
    const int64_t p = backend.patch_size();
    if (H % p != 0 || W % p != 0)
        throw ConfigError("encode_image: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by backend patch size " + std::to_string(p));
    FeatureMap fm = backend.encode(image);
    if (fm.rows * fm.cols != fm.token_count())
        throw InternalError("encode_image: grid metadata inconsistent with token count");
    if (!fm.tokens.all_finite()) throw NumericError("encode_image: non-finite features");
    return fm;
}

std::string feature_cache_key(const ImageTensor& image, const std::string& backend_id) {
    uint64_t h = 0xcbf29ce484222325ULL;
    const int64_t n = image.pixels.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float v = static_cast<float>(image.pixels[i]);
        unsigned char bytes[4];
        std::memcpy(bytes, &v, 4);
        h = fnv1a64(bytes, 4, h);
    }
    h = fnv1a64(backend_id, h);
    return hash_hex(h);
}

void write_feature_cache(const std::filesystem::path& dir, const std::string& key,
                         const FeatureMap& fm) {
    std::filesystem::create_directories(dir);
    write_tensor(dir / (key + ".paet"), fm.tokens, DType::f32);
}

std::unique_ptr<Backend> make_backend(const std::string& id, uint64_t seed, int64_t patch,
                                      int64_t dim, const std::filesystem::path& cache_dir) {
    if (id == "synthetic") return std::make_unique<SyntheticBackend>(seed, patch, dim);
    if (id.rfind("external:", 0) == 0)
        return std::make_unique<ExternalBackend>(cache_dir, id.substr(9), patch, dim);
    throw ConfigError("make_backend: unknown backend id '" + id +
                      "' (expected 'synthetic' or 'external:<name>')");
}

}  // namespace pae
