#include "pae/store.hpp"

#include <unistd.h>

#include <cmath>
#include <fstream>

#include "pae/io.hpp"

namespace pae {

namespace fs = std::filesystem;

RunDir::RunDir(fs::path root, const RunConfig& cfg, bool take_lock) : root_(std::move(root)) {
    fs::create_directories(root_);
    fs::create_directories(root_ / "checkpoints");
    fs::create_directories(root_ / "priors");
    fs::create_directories(root_ / "latents");
    fs::create_directories(root_ / "reports");

    if (take_lock) {
        const auto lock = root_ / "lock";
        if (fs::exists(lock))
            throw ConfigError("RunDir: " + lock.string() +
                              " exists; another process owns this run directory");
        std::ofstream f(lock);
        f << "pid " << ::getpid() << "\n";
        if (!f) throw FormatError("RunDir: cannot create lock file");
        locked_ = true;
    }

    // config snapshot
    std::ofstream snap(root_ / "config.txt", std::ios::trunc);
    snap << serialize_config(cfg);
}

RunDir::~RunDir() {
    if (locked_) {
        std::error_code ec;
        fs::remove(root_ / "lock", ec);
    }
}

void RunDir::log(const std::string& line) {
    std::ofstream f(root_ / "log", std::ios::app);
    f << line << "\n";
}

void write_latent_dump(const fs::path& dir, const std::vector<Tensor>& latents,
                       const std::vector<int>* labels, const std::vector<Mask>* masks) {
    fs::create_directories(dir);
    for (size_t i = 0; i < latents.size(); ++i)
        write_tensor(dir / ("latent_" + std::to_string(i) + ".paet"), latents[i], DType::f32);
    std::ofstream count(dir / "count.txt", std::ios::trunc);
    count << latents.size() << "\n";

    if (labels) {
        if (labels->size() != latents.size())
            throw ConfigError("write_latent_dump: label count mismatch");
        Tensor lt({static_cast<int64_t>(labels->size())});
        for (size_t i = 0; i < labels->size(); ++i) lt[static_cast<int64_t>(i)] = (*labels)[i];
        write_tensor(dir / "labels.paet", lt, DType::f32);
    }
    if (masks) {
        if (masks->size() != latents.size())
            throw ConfigError("write_latent_dump: mask count mismatch");
        for (size_t i = 0; i < masks->size(); ++i) {
            const Mask& m = (*masks)[i];
            Tensor mt({m.h, m.w});
            for (int64_t p = 0; p < m.h * m.w; ++p) mt[p] = m.labels[static_cast<size_t>(p)];
            write_tensor(dir / ("mask_" + std::to_string(i) + ".paet"), mt, DType::f32);
        }
    }
}

LatentDump read_latent_dump(const fs::path& dir) {
    std::ifstream count(dir / "count.txt");
    if (!count) throw FormatError("read_latent_dump: missing count.txt in " + dir.string());
    size_t n = 0;
    count >> n;

    LatentDump out;
    for (size_t i = 0; i < n; ++i)
        out.latents.push_back(read_tensor(dir / ("latent_" + std::to_string(i) + ".paet")));

    if (fs::exists(dir / "labels.paet")) {
        Tensor lt = read_tensor(dir / "labels.paet");
        for (int64_t i = 0; i < lt.numel(); ++i)
            out.labels.push_back(static_cast<int>(std::lround(lt[i])));
    }
    for (size_t i = 0; i < n; ++i) {
        const auto path = dir / ("mask_" + std::to_string(i) + ".paet");
        if (!fs::exists(path)) break;
        Tensor mt = read_tensor(path);
        Mask m;
        m.h = mt.dim(0);
        m.w = mt.dim(1);
        m.labels.resize(static_cast<size_t>(mt.numel()));
        for (int64_t p = 0; p < mt.numel(); ++p)
            m.labels[static_cast<size_t>(p)] = static_cast<int>(std::lround(mt[p]));
        out.masks.push_back(std::move(m));
    }
    return out;
}

}  // namespace pae
