#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pae/config.hpp"
#include "pae/image.hpp"
#include "pae/tensor.hpp"

namespace pae {

// One process owns a run directory through an exclusive lock file;
// completed runs are free to read concurrently.
class RunDir {
public:
    RunDir(std::filesystem::path root, const RunConfig& cfg, bool take_lock = true);
    ~RunDir();

    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
    std::filesystem::path priors() const { return root_ / "priors"; }
    std::filesystem::path latents() const { return root_ / "latents"; }
    std::filesystem::path reports() const { return root_ / "reports"; }

    // Append-only line records.
    void log(const std::string& line);

private:
    std::filesystem::path root_;
    bool locked_ = false;
};

// Latent dumps shared with the metrics CLI: one container per sample plus
// optional labels and masks.
void write_latent_dump(const std::filesystem::path& dir, const std::vector<Tensor>& latents,
                       const std::vector<int>* labels, const std::vector<Mask>* masks);

struct LatentDump {
    std::vector<Tensor> latents;
    std::vector<int> labels;  // empty when absent
    std::vector<Mask> masks;  // empty when absent
};
LatentDump read_latent_dump(const std::filesystem::path& dir);

}  // namespace pae
