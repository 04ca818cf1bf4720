// Command-line front end for the full pipeline: prior refinement,
// tokenizer and generator training, sampling, latent-geometry metrics,
// pilot sweeps, and run reports. Every subcommand is driven by a config
// file plus an optional seed override; reruns with the same (config,
// seed) reproduce all artifacts bit-exactly.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pae/io.hpp"
#include "pae/pipeline.hpp"
#include "pae/stats.hpp"
#include "pae/store.hpp"
#include "pae/sweep.hpp"

namespace fs = std::filesystem;
using namespace pae;

namespace {

struct CommonArgs {
    std::string config_path;
    int64_t seed_override = -1;

    RunConfig load() const {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : load_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        apply_env_overrides(cfg);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file");
    cmd->add_option("--seed", args.seed_override, "override the config seed");
}

int cmd_refine_prior(const CommonArgs& common) {
    RunConfig cfg = common.load();
    RunDir run(cfg.out_dir, cfg);
    auto data = build_dataset(cfg);
    auto backend = build_backend(cfg);
    auto features = encode_all(data, *backend);

    auto art = train_refinement(make_refine_config(cfg), features, run.priors(), backend->id());
    run.log("refine-prior steps=" + std::to_string(art.training_log.size()) +
            " params=" + std::to_string(art.parameter_count));
    for (const auto& e : art.training_log)
        run.log("refine step=" + std::to_string(e.step) + " total=" + std::to_string(e.total) +
                " rep=" + std::to_string(e.rep) + " gram=" + std::to_string(e.gram));
    if (!art.training_log.empty()) {
        std::cout << "refine-prior: " << art.training_log.size() << " steps, loss "
                  << art.training_log.front().total << " -> " << art.training_log.back().total
                  << "\n";
    } else {
        std::cout << "refine-prior: priors frozen at initialization (0 steps)\n";
    }
    std::cout << "prior store: " << run.priors().string() << "\n";
    return 0;
}

int cmd_train_tokenizer(const CommonArgs& common) {
    RunConfig cfg = common.load();
    RunDir run(cfg.out_dir, cfg);
    auto data = build_dataset(cfg);
    auto backend = build_backend(cfg);
    auto features = encode_all(data, *backend);

    const bool needs_priors = cfg.lambda_ssr > 0.0 || cfg.lambda_scr > 0.0;
    std::optional<PriorStore> store;
    if (needs_priors) {
        store = open_prior_store(run.priors());
        if (store->config_hash != make_refine_config(cfg).hash())
            throw ConfigError(
                "train-tokenizer: prior store was built from a different refine config; rerun "
                "refine-prior");
    }

    auto tok = build_tokenizer(cfg, *backend);
    auto res = train_tokenizer_loop(*tok, data, features, store ? &*store : nullptr,
                                    make_tokenizer_train_options(cfg));
    tok->params().save(run.checkpoints() / "tokenizer", cfg.seed,
                       static_cast<int64_t>(res.total_curve.size()),
                       make_tokenizer_config(cfg).hash());
    for (size_t s = 0; s < res.reports.size(); ++s)
        run.log(loss_report_line(static_cast<int64_t>(s), res.reports[s]));
    run.log("train-tokenizer l1 " + std::to_string(res.initial_l1) + " -> " +
            std::to_string(res.final_l1));

    // latent dump for the metrics stage
    std::vector<Tensor> latents;
    std::vector<int> labels;
    std::vector<Mask> masks;
    for (const auto& li : data) {
        latents.push_back(tok->encode(li.image, *backend).z);
        labels.push_back(li.class_id);
        masks.push_back(li.mask);
    }
    write_latent_dump(run.latents(), latents, &labels, &masks);

    std::cout << "train-tokenizer: L1 " << res.initial_l1 << " -> " << res.final_l1 << " over "
              << res.total_curve.size() << " steps\n";
    std::cout << "checkpoint: " << (run.checkpoints() / "tokenizer").string() << "\n";
    return 0;
}

int cmd_train_generator(const CommonArgs& common) {
    RunConfig cfg = common.load();
    RunDir run(cfg.out_dir, cfg);
    auto data = build_dataset(cfg);
    auto backend = build_backend(cfg);

    auto tok = build_tokenizer(cfg, *backend);
    tok->params().load(run.checkpoints() / "tokenizer");

    std::vector<Tensor> latent_tokens;
    std::vector<int64_t> labels;
    for (const auto& li : data) {
        latent_tokens.push_back(tok->tokens_from_latent(tok->encode(li.image, *backend)));
        labels.push_back(li.class_id);
    }
    FlowGenerator gen(make_generator_config(cfg), cfg.seed);
    auto res = train_generator_loop(gen, latent_tokens, labels,
                                    make_generator_train_options(cfg));
    gen.params().save(run.checkpoints() / "generator", cfg.seed,
                      static_cast<int64_t>(res.curve.size()), cfg.hash());
    run.log("train-generator flow_loss " + std::to_string(res.initial_loss) + " -> " +
            std::to_string(res.final_loss));
    std::cout << "train-generator: flow loss " << res.initial_loss << " -> " << res.final_loss
              << "\n";
    return 0;
}

int cmd_sample(const CommonArgs& common, int64_t count) {
    RunConfig cfg = common.load();
    RunDir run(cfg.out_dir, cfg, /*take_lock=*/false);
    auto backend = build_backend(cfg);

    auto tok = build_tokenizer(cfg, *backend);
    tok->params().load(run.checkpoints() / "tokenizer");
    FlowGenerator gen(make_generator_config(cfg), cfg.seed);
    gen.params().load(run.checkpoints() / "generator");

    if (count <= 0) count = cfg.data_classes;
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < count; ++i) labels.push_back(i % cfg.data_classes);

    auto sampled = gen.sample(labels, make_sampler_config(cfg));
    const fs::path out = run.root() / "samples";
    fs::create_directories(out);
    for (size_t i = 0; i < sampled.size(); ++i) {
        LatentCode code = tok->latent_from_tokens(sampled[i]);
        write_tensor(out / ("sample_" + std::to_string(i) + ".paet"), code.z, DType::f32);
        write_ppm(out / ("sample_" + std::to_string(i) + ".ppm"), tok->reconstruct(code));
    }
    run.log("sample count=" + std::to_string(sampled.size()));
    std::cout << "sample: wrote " << sampled.size() << " latents + images to " << out.string()
              << "\n";
    return 0;
}

int cmd_metrics(const CommonArgs& common, const std::string& latents_dir,
                const std::string& tokenizer_ckpt, double sigma_override,
                const std::string& scales_csv, int64_t subsets_override) {
    RunConfig cfg = common.load();
    GeometryConfig gc = make_geometry_config(cfg);
    if (sigma_override > 0) gc.sigma = sigma_override;
    if (subsets_override > 0) gc.gsq_subsets = subsets_override;
    if (!scales_csv.empty()) {
        gc.lpc.scales.clear();
        std::stringstream ss(scales_csv);
        std::string item;
        while (std::getline(ss, item, ',')) gc.lpc.scales.push_back(std::stod(item));
    }

    const fs::path dir = latents_dir.empty() ? fs::path(cfg.out_dir) / "latents"
                                             : fs::path(latents_dir);
    LatentDump dump = read_latent_dump(dir);

    GeometryInputs in;
    in.latents = dump.latents;
    if (!dump.labels.empty()) in.labels = dump.labels;
    if (!dump.masks.empty()) in.masks = dump.masks;

    std::unique_ptr<Backend> backend;
    std::unique_ptr<Tokenizer> tok;
    if (!tokenizer_ckpt.empty()) {
        backend = build_backend(cfg);
        tok = build_tokenizer(cfg, *backend);
        tok->params().load(tokenizer_ckpt);
        in.decoder = DecodeFn([&cfg, tokp = tok.get()](const Tensor& z_chw) {
            LatentCode code;
            code.z = z_chw;
            code.rms_eps = cfg.rms_eps;
            return tokp->reconstruct(code).pixels;
        });
    }

    GeometryReport rep = geometry_report(in, gc);
    const std::string text = rep.to_json();
    std::cout << text << "\n";
    const fs::path out = fs::path(cfg.out_dir) / "reports";
    fs::create_directories(out);
    std::ofstream f(out / "geometry.json", std::ios::trunc);
    f << text << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& common, const std::string& knob, const std::string& values_csv) {
    RunConfig cfg = common.load();
    std::vector<double> values;
    std::stringstream ss(values_csv);
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(std::stod(item));

    SweepReport rep = pilot_sweep(parse_knob(knob), values, cfg);
    const std::string text = rep.to_json();
    std::cout << text << "\n";
    const fs::path out = fs::path(cfg.out_dir) / "reports";
    fs::create_directories(out);
    std::ofstream f(out / ("sweep_" + rep.knob + ".json"), std::ios::trunc);
    f << text << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    const fs::path root(run_dir);
    if (!fs::exists(root)) throw ConfigError("report: no run directory at " + run_dir);
    std::cout << "run directory: " << root.string() << "\n";
    if (fs::exists(root / "config.txt")) {
        std::cout << "-- config snapshot --\n";
        std::ifstream f(root / "config.txt");
        std::cout << f.rdbuf();
    }
    if (fs::exists(root / "log")) {
        std::cout << "-- log --\n";
        std::ifstream f(root / "log");
        std::cout << f.rdbuf();
    }
    const fs::path reports = root / "reports";
    if (fs::exists(reports)) {
        for (const auto& entry : fs::directory_iterator(reports)) {
            std::cout << "-- " << entry.path().filename().string() << " --\n";
            std::ifstream f(entry.path());
            std::cout << f.rdbuf();
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prior-aligned autoencoder pipeline"};
    app.require_subcommand(1);

    CommonArgs refine_args, tok_args, gen_args, sample_args, metrics_args, sweep_args;

    auto* refine = app.add_subcommand("refine-prior", "train the prior refiner, freeze targets");
    add_common(refine, refine_args);

    auto* toktrain = app.add_subcommand("train-tokenizer", "train the tokenizer");
    add_common(toktrain, tok_args);

    auto* gentrain = app.add_subcommand("train-generator", "train the latent flow generator");
    add_common(gentrain, gen_args);

    auto* sample = app.add_subcommand("sample", "sample latents and decode images");
    add_common(sample, sample_args);
    int64_t sample_count = 0;
    sample->add_option("--count", sample_count, "number of samples (default: one per class)");

    auto* metrics = app.add_subcommand("metrics", "latent-geometry diagnostics");
    add_common(metrics, metrics_args);
    std::string latents_dir, tokenizer_ckpt, scales_csv;
    double sigma_override = 0;
    int64_t subsets_override = 0;
    metrics->add_option("--latents", latents_dir, "latent dump directory");
    metrics->add_option("--tokenizer", tokenizer_ckpt, "tokenizer checkpoint (enables LPC)");
    metrics->add_option("--sigma", sigma_override, "affinity temperature");
    metrics->add_option("--scales", scales_csv, "comma-separated LPC scales");
    metrics->add_option("--subsets", subsets_override, "GSQ subset count");

    auto* sweep = app.add_subcommand("sweep", "pilot sweep over one knob");
    add_common(sweep, sweep_args);
    std::string knob = "lambda_ssr", values_csv = "0,0.2";
    sweep->add_option("--knob", knob, "dim | lambda_ssr | lambda_mcr | lambda_scr");
    sweep->add_option("--values", values_csv, "comma-separated knob values");

    auto* report = app.add_subcommand("report", "print a run directory summary");
    std::string report_dir = "runs/default";
    report->add_option("--run", report_dir, "run directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (refine->parsed()) return cmd_refine_prior(refine_args);
        if (toktrain->parsed()) return cmd_train_tokenizer(tok_args);
        if (gentrain->parsed()) return cmd_train_generator(gen_args);
        if (sample->parsed()) return cmd_sample(sample_args, sample_count);
        if (metrics->parsed())
            return cmd_metrics(metrics_args, latents_dir, tokenizer_ckpt, sigma_override,
                               scales_csv, subsets_override);
        if (sweep->parsed()) return cmd_sweep(sweep_args, knob, values_csv);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
