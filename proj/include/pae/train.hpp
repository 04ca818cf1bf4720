#pragma once

#include <vector>

#include "pae/generator.hpp"
#include "pae/losses.hpp"
#include "pae/prior.hpp"
#include "pae/tokenizer.hpp"

namespace pae {

struct TokenizerTrainOptions {
    TotalLossWeights weights;
    bool gan_enabled = false;
    PerturbationSpec perturb;
    std::string perceptual = "mad";
    double lr = 2e-4;
    int64_t steps = 400;
    int64_t batch = 4;
    uint64_t seed = 0;
};

struct TokenizerTrainResult {
    double initial_l1 = 0.0;  // dataset mean |x - x_hat| before training
    double final_l1 = 0.0;    // and after
    std::vector<double> total_curve;
    std::vector<LossReport> reports;  // one flat name->value record per step
};

// Training-log line for one step: "step N total=V name=value ...".
std::string loss_report_line(int64_t step, const LossReport& report);

// Full-dataset mean reconstruction L1 under the current parameters.
double eval_l1(const Tokenizer& tok, const std::vector<LabeledImage>& data,
               const std::vector<FeatureMap>& features);

// Joint objective training: reconstruction plus the prior-alignment
// regularizers whose weights are positive. `priors` may be null only when
// both lambda_ssr and lambda_scr are zero.
TokenizerTrainResult train_tokenizer_loop(Tokenizer& tok, const std::vector<LabeledImage>& data,
                                          const std::vector<FeatureMap>& features,
                                          const PriorStore* priors,
                                          const TokenizerTrainOptions& opt);

struct GeneratorTrainOptions {
    double lr = 2e-4;
    int64_t steps = 400;
    int64_t batch = 4;
    uint64_t seed = 0;
};

struct GeneratorTrainResult {
    double initial_loss = 0.0;  // fixed-draw evaluation before training
    double final_loss = 0.0;
    std::vector<double> curve;
};

GeneratorTrainResult train_generator_loop(FlowGenerator& gen,
                                          const std::vector<Tensor>& latent_tokens,
                                          const std::vector<int64_t>& labels,
                                          const GeneratorTrainOptions& opt);

}  // namespace pae
