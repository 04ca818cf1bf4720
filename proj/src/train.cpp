#include "pae/train.hpp"

#include <sstream>

namespace pae {

using ad::Var;
using nn::Tape;

std::string loss_report_line(int64_t step, const LossReport& report) {
    std::ostringstream os;
    os << "step " << step << " total=" << report.total;
    for (const auto& [name, value] : report.components) os << " " << name << "=" << value;
    return os.str();
}

double eval_l1(const Tokenizer& tok, const std::vector<LabeledImage>& data,
               const std::vector<FeatureMap>& features) {
    std::vector<double> vals;
    vals.reserve(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        Tape tape;
        Var z = tok.encode_graph(tape, features[i].tokens, data[i].image);
        Var xhat = tok.decode_graph(tape, z);
        Var l1 = ad::mean(ad::abs_(ad::sub(xhat, ad::constant(data[i].image.pixels))));
        vals.push_back(l1->val[0]);
    }
    return pairwise_sum(vals) / static_cast<double>(vals.size());
}

TokenizerTrainResult train_tokenizer_loop(Tokenizer& tok, const std::vector<LabeledImage>& data,
                                          const std::vector<FeatureMap>& features,
                                          const PriorStore* priors,
                                          const TokenizerTrainOptions& opt) {
    if (data.empty() || data.size() != features.size())
        throw ConfigError("train_tokenizer_loop: dataset/features mismatch or empty");
    const bool needs_priors = opt.weights.lambda_ssr > 0.0 || opt.weights.lambda_scr > 0.0;
    if (needs_priors && priors == nullptr)
        throw ConfigError(
            "train_tokenizer_loop: ssr/scr weights are positive but no prior store given");
    if (priors && priors->count < static_cast<int64_t>(data.size()))
        throw ConfigError("train_tokenizer_loop: prior store smaller than dataset");

    auto perceptual = make_perceptual(opt.perceptual, opt.seed);
    std::optional<PatchDiscriminator> disc;
    if (opt.gan_enabled && opt.weights.lambda_gan > 0.0) disc.emplace(8, opt.seed);

    // Priors are verified once up front (content hashes), then held.
    std::vector<RefinedPrior> prior_cache;
    if (needs_priors) {
        prior_cache.reserve(data.size());
        for (size_t i = 0; i < data.size(); ++i)
            prior_cache.push_back(priors->load(static_cast<int64_t>(i)));
    }

    TokenizerTrainResult res;
    res.initial_l1 = eval_l1(tok, data, features);

    nn::AdamWConfig gen_opt;
    gen_opt.lr = opt.lr;
    nn::AdamWConfig disc_opt;
    disc_opt.lr = opt.lr;

    Rng order = Rng::substream(opt.seed, "tokenizer-batches");
    Rng perturb_seeds = Rng::substream(opt.seed, "tokenizer-perturb-seeds");
    const auto n = static_cast<int64_t>(data.size());

    for (int64_t step = 0; step < opt.steps; ++step) {
        Tape tape;
        Tape disc_tape;  // generator-side adversarial bindings are separate
        Var total;
        LossReport step_report;
        int64_t report_count = 0;
        for (int64_t b = 0; b < opt.batch; ++b) {
            const auto i = static_cast<size_t>(order.uniform_int(n));
            Var z = tok.encode_graph(tape, features[i].tokens, data[i].image);
            Var xhat = tok.decode_graph(tape, z);

            ReconLoss recon = recon_loss(ad::constant(data[i].image.pixels), xhat,
                                         opt.weights.lambda_lpips, opt.weights.lambda_gan,
                                         *perceptual, disc ? &*disc : nullptr,
                                         disc ? &disc_tape : nullptr);

            std::optional<Var> ssr, mcr, scr;
            if (opt.weights.lambda_ssr > 0.0)
                ssr = ssr_loss(z, prior_cache[i].gram_ref);
            if (opt.weights.lambda_scr > 0.0)
                scr = scr_loss(z, prior_cache[i].z_t, prior_cache[i].z_tg);
            if (opt.weights.lambda_mcr > 0.0) {
                auto pp = mcr_perturb(z, opt.perturb, perturb_seeds.next_u64(),
                                      tok.config().rms_eps);
                Var xm = tok.decode_graph(tape, pp.medium);
                Var xl = tok.decode_graph(tape, pp.large);
                mcr = mcr_loss(xhat, xm, xl, *perceptual);
            }

            TotalLoss tl = total_loss(recon, ssr, mcr, scr, opt.weights);
            total = total ? ad::add(total, tl.total) : tl.total;
            step_report.total += tl.report.total;
            for (const auto& [name, value] : tl.report.components)
                step_report.components[name] += value;
            step_report.weights = tl.report.weights;
            ++report_count;
        }
        total = ad::scale(total, 1.0 / static_cast<double>(opt.batch));
        ad::backward(total);
        res.total_curve.push_back(total->val[0]);
        step_report.total /= static_cast<double>(report_count);
        for (auto& [name, value] : step_report.components)
            value /= static_cast<double>(report_count);
        res.reports.push_back(std::move(step_report));
        nn::adamw_step(tape, gen_opt);

        // discriminator step on fresh decodes (hinge objective)
        if (disc) {
            const auto i = static_cast<size_t>(order.uniform_int(n));
            Tape dtape;
            Var z = tok.encode_graph(dtape, features[i].tokens, data[i].image);
            Var fake = tok.decode_graph(dtape, z);
            Tape disc_only;
            Var logit_real =
                disc->logits(disc_only, ad::constant(data[i].image.pixels));
            Var logit_fake = disc->logits(disc_only, ad::constant(fake->val));
            Var ld = ad::add(ad::mean(ad::relu(ad::add_scalar(ad::neg(logit_real), 1.0))),
                             ad::mean(ad::relu(ad::add_scalar(logit_fake, 1.0))));
            ad::backward(ld);
            nn::adamw_step(disc_only, disc_opt);
        }
    }

    res.final_l1 = eval_l1(tok, data, features);
    return res;
}

namespace {

double eval_flow_loss(const FlowGenerator& gen, const std::vector<Tensor>& latent_tokens,
                      const std::vector<int64_t>& labels, uint64_t eval_seed) {
    // fixed draws so before/after comparisons measure the model, not the noise
    Rng stream(eval_seed);
    Tape tape;
    Var loss = gen.flow_loss_graph(tape, latent_tokens, labels, stream);
    return loss->val[0];
}

}  // namespace

GeneratorTrainResult train_generator_loop(FlowGenerator& gen,
                                          const std::vector<Tensor>& latent_tokens,
                                          const std::vector<int64_t>& labels,
                                          const GeneratorTrainOptions& opt) {
    if (latent_tokens.empty() || latent_tokens.size() != labels.size())
        throw ConfigError("train_generator_loop: latents/labels mismatch or empty");

    GeneratorTrainResult res;
    const uint64_t eval_seed = Rng::substream(opt.seed, "generator-eval").next_u64();
    res.initial_loss = eval_flow_loss(gen, latent_tokens, labels, eval_seed);

    nn::AdamWConfig adam;
    adam.lr = opt.lr;
    Rng order = Rng::substream(opt.seed, "generator-batches");
    Rng stream = Rng::substream(opt.seed, "generator-draws");
    const auto n = static_cast<int64_t>(latent_tokens.size());

    for (int64_t step = 0; step < opt.steps; ++step) {
        std::vector<Tensor> batch;
        std::vector<int64_t> batch_labels;
        for (int64_t b = 0; b < opt.batch; ++b) {
            const auto i = static_cast<size_t>(order.uniform_int(n));
            batch.push_back(latent_tokens[i]);
            batch_labels.push_back(labels[i]);
        }
        Tape tape;
        Var loss = gen.flow_loss_graph(tape, batch, batch_labels, stream);
        ad::backward(loss);
        res.curve.push_back(loss->val[0]);
        nn::adamw_step(tape, adam);
    }

    res.final_loss = eval_flow_loss(gen, latent_tokens, labels, eval_seed);
    return res;
}

}  // namespace pae
