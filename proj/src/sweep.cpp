#include "pae/sweep.hpp"

#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "pae/pipeline.hpp"
#include "pae/stats.hpp"

namespace pae {

namespace fs = std::filesystem;
using json = nlohmann::json;

SweepKnob parse_knob(const std::string& name) {
    if (name == "dim") return SweepKnob::kLatentDim;
    if (name == "lambda_ssr") return SweepKnob::kLambdaSsr;
    if (name == "lambda_mcr") return SweepKnob::kLambdaMcr;
    if (name == "lambda_scr") return SweepKnob::kLambdaScr;
    throw ConfigError("pilot_sweep: unknown knob '" + name +
                      "' (expected dim | lambda_ssr | lambda_mcr | lambda_scr)");
}

std::string knob_name(SweepKnob k) {
    switch (k) {
        case SweepKnob::kLatentDim: return "dim";
        case SweepKnob::kLambdaSsr: return "lambda_ssr";
        case SweepKnob::kLambdaMcr: return "lambda_mcr";
        case SweepKnob::kLambdaScr: return "lambda_scr";
    }
    return "?";
}

double goodness_transform(const std::string& metric, double value) {
    if (metric == "lpc") return -value;                           // lower is better
    if (metric == "gfid") return -value;                          // lower is better
    if (metric == "gsq") return std::log(std::max(value, 1e-9));  // skew reduction
    return value;  // ssc, erank: higher is better
}

namespace {

// Full toy pipeline for one configuration: refine priors, train the
// tokenizer, measure geometry + rFID proxy, train a small generator,
// sample, measure the gFID proxy.
SweepRow run_variant(const RunConfig& cfg, double knob_value) {
    SweepRow row;
    row.knob_value = knob_value;

    auto data = build_dataset(cfg);
    auto backend = build_backend(cfg);
    auto features = encode_all(data, *backend);

    const fs::path tmp = fs::temp_directory_path() /
                         ("pae_sweep_" + cfg.hash() + "_v" + std::to_string(knob_value));
    fs::remove_all(tmp);
    train_refinement(make_refine_config(cfg), features, tmp / "priors", backend->id());
    PriorStore store = open_prior_store(tmp / "priors");

    auto tok = build_tokenizer(cfg, *backend);
    train_tokenizer_loop(*tok, data, features, &store, make_tokenizer_train_options(cfg));

    std::vector<Tensor> latents;
    std::vector<Mask> masks;
    std::vector<int> labels;
    std::vector<Tensor> latent_tokens_list;
    std::vector<int64_t> labels64;
    for (const auto& li : data) {
        LatentCode code = tok->encode(li.image, *backend);
        latents.push_back(code.z);
        latent_tokens_list.push_back(tok->tokens_from_latent(code));
        masks.push_back(li.mask);
        labels.push_back(li.class_id);
        labels64.push_back(li.class_id);
    }

    GeometryInputs gi;
    gi.latents = latents;
    gi.masks = masks;
    gi.labels = labels;
    gi.decoder = DecodeFn([&](const Tensor& z_chw) {
        LatentCode code;
        code.z = z_chw;
        code.rms_eps = cfg.rms_eps;
        return tok->reconstruct(code).pixels;
    });
    GeometryReport rep = geometry_report(gi, make_geometry_config(cfg));
    row.ssc = rep.ssc.value_or(0.0);
    row.lpc = rep.lpc.value_or(0.0);
    row.gsq = rep.gsq_mean.value_or(0.0);
    row.erank = rep.erank.value_or(0.0);

    std::vector<ImageTensor> originals, recons;
    for (size_t i = 0; i < data.size(); ++i) {
        originals.push_back(data[i].image);
        LatentCode code;
        code.z = latents[i];
        code.rms_eps = cfg.rms_eps;
        recons.push_back(tok->reconstruct(code));
    }
    row.rfid_proxy = fid(pooled_backbone_features(originals, *backend),
                         pooled_backbone_features(recons, *backend));

    FlowGenerator gen(make_generator_config(cfg), cfg.seed);
    train_generator_loop(gen, latent_tokens_list, labels64, make_generator_train_options(cfg));

    SamplerConfig sc = make_sampler_config(cfg);
    sc.seed = cfg.seed + 1;
    std::vector<int64_t> sample_labels;
    for (int64_t i = 0; i < cfg.data_count; ++i)
        sample_labels.push_back(i % cfg.data_classes);  // class-uniform
    auto sampled = gen.sample(sample_labels, sc);
    std::vector<ImageTensor> generated;
    for (const auto& zt : sampled)
        generated.push_back(tok->reconstruct(tok->latent_from_tokens(zt)));
    row.gfid_proxy = fid(pooled_backbone_features(originals, *backend),
                         pooled_backbone_features(generated, *backend));

    fs::remove_all(tmp);
    return row;
}

}  // namespace

SweepReport pilot_sweep(SweepKnob knob, const std::vector<double>& values,
                        const RunConfig& base) {
    if (values.empty()) throw ConfigError("pilot_sweep: no knob values given");

    SweepReport report;
    report.knob = knob_name(knob);

    for (double v : values) {
        RunConfig cfg = base;  // shared seed across variants
        switch (knob) {
            case SweepKnob::kLatentDim: cfg.latent_dim = static_cast<int64_t>(v); break;
            case SweepKnob::kLambdaSsr: cfg.lambda_ssr = v; break;
            case SweepKnob::kLambdaMcr: cfg.lambda_mcr = v; break;
            case SweepKnob::kLambdaScr: cfg.lambda_scr = v; break;
        }
        try {
            report.rows.push_back(run_variant(cfg, v));
        } catch (const std::exception& e) {
            SweepRow row;
            row.knob_value = v;
            row.failed = true;
            row.error = e.what();
            report.rows.push_back(row);
            report.flags.push_back("variant " + std::to_string(v) + " failed: " + e.what());
        }
    }

    // Pearson r per metric against the generation proxy, sign-normalized
    // so positive r reads "better geometry, better generation".
    std::vector<double> outcome;
    for (const auto& r : report.rows)
        if (!r.failed) outcome.push_back(goodness_transform("gfid", r.gfid_proxy));
    for (const char* m : {"ssc", "lpc", "gsq", "erank"}) {
        std::vector<double> xs;
        for (const auto& r : report.rows) {
            if (r.failed) continue;
            const double v = m == std::string("ssc")   ? r.ssc
                             : m == std::string("lpc") ? r.lpc
                             : m == std::string("gsq") ? r.gsq
                                                       : r.erank;
            xs.push_back(goodness_transform(m, v));
        }
        auto r = pearson(xs, outcome);
        report.pearson_r[m] = r;
        if (!r.has_value())
            report.flags.push_back(std::string("pearson undefined for ") + m +
                                   " (fewer than 2 usable variants or zero variance)");
    }
    return report;
}

std::string SweepReport::to_json() const {
    json j;
    j["knob"] = knob;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        json row;
        row["knob_value"] = r.knob_value;
        row["failed"] = r.failed;
        if (r.failed) {
            row["error"] = r.error;
        } else {
            row["rfid_proxy"] = r.rfid_proxy;
            row["ssc"] = r.ssc;
            row["lpc"] = r.lpc;
            row["gsq"] = r.gsq;
            row["erank"] = r.erank;
            row["gfid_proxy"] = r.gfid_proxy;
        }
        j["rows"].push_back(row);
    }
    json pr;
    for (const auto& [name, r] : pearson_r) {
        if (r.has_value())
            pr[name] = *r;
        else
            pr[name] = nullptr;
    }
    j["pearson_r"] = pr;
    j["flags"] = flags;
    return j.dump(2);
}

}  // namespace pae
