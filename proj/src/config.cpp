#include "pae/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pae/io.hpp"
#include "pae/rng.hpp"

namespace pae {

namespace {

struct Field {
    enum class Type { kInt, kUint, kDouble, kBool, kString, kDoubleList } type;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double parse_double(const std::string& s, const std::string& key) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + s + "' for " + key);
    }
}

int64_t parse_int(const std::string& s, const std::string& key) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value '" + s + "' for " + key);
    }
}

// The schema: one entry per key, in serialization order.
const std::map<std::string, Field>& schema() {
    static const std::map<std::string, Field> s = [] {
        std::map<std::string, Field> m;
        auto add_i = [&m](const std::string& k, int64_t RunConfig::*p) {
            m[k] = Field{Field::Type::kInt,
                         [p](const RunConfig& c) { return std::to_string(c.*p); },
                         [p, k](RunConfig& c, const std::string& v) { c.*p = parse_int(v, k); }};
        };
        auto add_u = [&m](const std::string& k, uint64_t RunConfig::*p) {
            m[k] = Field{Field::Type::kUint,
                         [p](const RunConfig& c) { return std::to_string(c.*p); },
                         [p, k](RunConfig& c, const std::string& v) {
                             c.*p = static_cast<uint64_t>(parse_int(v, k));
                         }};
        };
        auto add_d = [&m](const std::string& k, double RunConfig::*p) {
            m[k] = Field{Field::Type::kDouble,
                         [p](const RunConfig& c) { return fmt_double(c.*p); },
                         [p, k](RunConfig& c, const std::string& v) {
                             c.*p = parse_double(v, k);
                         }};
        };
        auto add_b = [&m](const std::string& k, bool RunConfig::*p) {
            m[k] = Field{Field::Type::kBool,
                         [p](const RunConfig& c) { return c.*p ? "true" : "false"; },
                         [p, k](RunConfig& c, const std::string& v) {
                             if (v == "true")
                                 c.*p = true;
                             else if (v == "false")
                                 c.*p = false;
                             else
                                 throw ConfigError("config: bad boolean '" + v + "' for " + k);
                         }};
        };
        auto add_s = [&m](const std::string& k, std::string RunConfig::*p) {
            m[k] = Field{Field::Type::kString,
                         [p](const RunConfig& c) { return c.*p; },
                         [p](RunConfig& c, const std::string& v) { c.*p = v; }};
        };
        auto add_dl = [&m](const std::string& k, std::vector<double> RunConfig::*p) {
            m[k] = Field{Field::Type::kDoubleList,
                         [p](const RunConfig& c) {
                             std::string out;
                             for (size_t i = 0; i < (c.*p).size(); ++i) {
                                 if (i) out += ",";
                                 out += fmt_double((c.*p)[i]);
                             }
                             return out;
                         },
                         [p, k](RunConfig& c, const std::string& v) {
                             std::vector<double> vals;
                             std::stringstream ss(v);
                             std::string item;
                             while (std::getline(ss, item, ','))
                                 vals.push_back(parse_double(item, k));
                             if (vals.empty())
                                 throw ConfigError("config: empty list for " + k);
                             c.*p = std::move(vals);
                         }};
        };

        add_u("run.seed", &RunConfig::seed);
        add_s("run.out_dir", &RunConfig::out_dir);
        add_i("run.workers", &RunConfig::workers);
        add_i("data.count", &RunConfig::data_count);
        add_i("data.classes", &RunConfig::data_classes);
        add_i("data.image_size", &RunConfig::data_image_size);
        add_i("data.grid_cell", &RunConfig::data_grid_cell);
        add_s("backbone.id", &RunConfig::backbone_id);
        add_i("backbone.patch", &RunConfig::backbone_patch);
        add_i("backbone.dim", &RunConfig::backbone_dim);
        add_s("backbone.cache_dir", &RunConfig::backbone_cache_dir);
        add_i("latent.dim", &RunConfig::latent_dim);
        add_i("latent.h", &RunConfig::latent_h);
        add_i("latent.w", &RunConfig::latent_w);
        add_i("tokenizer.dam_depth", &RunConfig::dam_depth);
        add_i("tokenizer.dam_hidden", &RunConfig::dam_hidden);
        add_i("tokenizer.dam_heads", &RunConfig::dam_heads);
        add_i("tokenizer.proj_hidden", &RunConfig::tok_proj_hidden);
        add_i("tokenizer.proj_heads", &RunConfig::tok_proj_heads);
        add_i("tokenizer.dec_hidden", &RunConfig::tok_dec_hidden);
        add_i("tokenizer.dec_depth", &RunConfig::tok_dec_depth);
        add_i("tokenizer.dec_heads", &RunConfig::tok_dec_heads);
        add_d("tokenizer.rms_eps", &RunConfig::rms_eps);
        add_b("tokenizer.global_rms", &RunConfig::global_rms);
        add_d("tokenizer.lr", &RunConfig::tok_lr);
        add_i("tokenizer.steps", &RunConfig::tok_steps);
        add_i("tokenizer.batch", &RunConfig::tok_batch);
        add_d("loss.lambda_lpips", &RunConfig::lambda_lpips);
        add_d("loss.lambda_gan", &RunConfig::lambda_gan);
        add_b("loss.gan_enabled", &RunConfig::gan_enabled);
        add_d("loss.lambda_ssr", &RunConfig::lambda_ssr);
        add_d("loss.lambda_mcr", &RunConfig::lambda_mcr);
        add_d("loss.lambda_scr", &RunConfig::lambda_scr);
        add_s("loss.perceptual", &RunConfig::perceptual);
        add_d("mcr.angle_small", &RunConfig::mcr_angle_small);
        add_d("mcr.angle_large", &RunConfig::mcr_angle_large);
        add_s("mcr.sampling", &RunConfig::mcr_sampling);
        add_b("mcr.per_location", &RunConfig::mcr_per_location);
        add_i("refine.proj_hidden", &RunConfig::refine_proj_hidden);
        add_i("refine.proj_heads", &RunConfig::refine_proj_heads);
        add_i("refine.decoder_depth", &RunConfig::refine_decoder_depth);
        add_i("refine.decoder_hidden", &RunConfig::refine_decoder_hidden);
        add_i("refine.decoder_heads", &RunConfig::refine_decoder_heads);
        add_i("refine.upsample", &RunConfig::refine_upsample);
        add_d("refine.lowpass", &RunConfig::refine_lowpass);
        add_d("refine.lambda_rep", &RunConfig::refine_lambda_rep);
        add_d("refine.lambda_gram", &RunConfig::refine_lambda_gram);
        add_d("refine.lr", &RunConfig::refine_lr);
        add_i("refine.steps", &RunConfig::refine_steps);
        add_i("refine.batch", &RunConfig::refine_batch);
        add_d("metrics.sigma", &RunConfig::metrics_sigma);
        add_dl("metrics.lpc_scales", &RunConfig::lpc_scales);
        add_i("metrics.lpc_directions", &RunConfig::lpc_directions);
        add_i("metrics.gsq_subsets", &RunConfig::gsq_subsets);
        add_i("metrics.gsq_classes", &RunConfig::gsq_classes);
        add_i("generator.depth", &RunConfig::gen_depth);
        add_i("generator.width", &RunConfig::gen_width);
        add_i("generator.heads", &RunConfig::gen_heads);
        add_d("generator.train_time_shift", &RunConfig::gen_train_time_shift);
        add_d("generator.label_dropout", &RunConfig::gen_label_dropout);
        add_d("generator.lr", &RunConfig::gen_lr);
        add_i("generator.steps", &RunConfig::gen_steps);
        add_i("generator.batch", &RunConfig::gen_batch);
        add_i("sampler.steps", &RunConfig::sampler_steps);
        add_d("sampler.time_shift", &RunConfig::sampler_time_shift);
        add_d("sampler.cfg_scale", &RunConfig::sampler_cfg_scale);
        add_d("sampler.cfg_interval", &RunConfig::sampler_cfg_interval);
        add_s("sampler.mode", &RunConfig::sampler_mode);
        return m;
    }();
    return s;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = schema().find(key);
        if (it == schema().end())
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        it->second.set(cfg, value);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("load_config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [key, field] : schema()) os << key << " = " << field.get(cfg) << "\n";
    return os.str();
}

std::string RunConfig::hash() const { return hash_hex(fnv1a64(serialize_config(*this))); }

void apply_env_overrides(RunConfig& cfg) {
    if (const char* v = std::getenv("PAE_OUT_DIR")) cfg.out_dir = v;
    if (const char* v = std::getenv("PAE_CACHE_DIR")) cfg.backbone_cache_dir = v;
    if (const char* v = std::getenv("PAE_WORKERS")) cfg.workers = parse_int(v, "PAE_WORKERS");
}

}  // namespace pae
