#pragma once

#include <memory>

#include "pae/backbone.hpp"
#include "pae/config.hpp"
#include "pae/generator.hpp"
#include "pae/metrics.hpp"
#include "pae/prior.hpp"
#include "pae/train.hpp"

namespace pae {

// RunConfig -> per-module configurations. Single source of truth for the
// mapping used by the CLI, the sweep harness, and the acceptance suite.
RefineConfig make_refine_config(const RunConfig& cfg);
TokenizerConfig make_tokenizer_config(const RunConfig& cfg);
GeneratorConfig make_generator_config(const RunConfig& cfg);
SamplerConfig make_sampler_config(const RunConfig& cfg);
TokenizerTrainOptions make_tokenizer_train_options(const RunConfig& cfg);
GeneratorTrainOptions make_generator_train_options(const RunConfig& cfg);
GeometryConfig make_geometry_config(const RunConfig& cfg);

std::vector<LabeledImage> build_dataset(const RunConfig& cfg);
std::unique_ptr<Backend> build_backend(const RunConfig& cfg);
std::vector<FeatureMap> encode_all(const std::vector<LabeledImage>& data,
                                   const Backend& backend);

// Tokenizer wired to the dataset geometry implied by the config.
std::unique_ptr<Tokenizer> build_tokenizer(const RunConfig& cfg, const Backend& backend);

// Pooled backbone features of a set of images (rows = samples), the
// hermetic stand-in feature extractor for FID proxies. Decoded images are
// clamped to [0,1] before re-encoding.
Tensor pooled_backbone_features(const std::vector<ImageTensor>& images, const Backend& backend);

}  // namespace pae
