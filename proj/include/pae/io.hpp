#pragma once

#include <filesystem>
#include <string>

#include "pae/tensor.hpp"

namespace pae {

// Tensor container format shared by every stage and the CLI:
//   magic   "PAET"      4 bytes
//   version u16 LE      currently 1
//   dtype   u8          0 = IEEE-754 binary32, 1 = IEEE-754 binary64
//   rank    u8
//   dims    rank x u32 LE
//   payload row-major, little-endian
//
// Externally consumed artifacts (features, priors, latents) are written
// as float32; float64 is used for optimizer checkpoints where lossless
// round trips matter.
enum class DType : uint8_t { f32 = 0, f64 = 1 };

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f32);
Tensor read_tensor(const std::filesystem::path& path);

// FNV-1a 64 over the raw file bytes, hex-encoded. Store manifests record
// these so consumers can verify artifacts before use.
std::string file_content_hash(const std::filesystem::path& path);

std::string hash_hex(uint64_t h);

}  // namespace pae
