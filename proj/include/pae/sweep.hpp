#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pae/config.hpp"

namespace pae {

enum class SweepKnob { kLatentDim, kLambdaSsr, kLambdaMcr, kLambdaScr };

SweepKnob parse_knob(const std::string& name);
std::string knob_name(SweepKnob k);

struct SweepRow {
    double knob_value = 0.0;
    bool failed = false;
    std::string error;
    double rfid_proxy = 0.0;
    double ssc = 0.0;
    double lpc = 0.0;
    double gsq = 0.0;
    double erank = 0.0;
    double gfid_proxy = 0.0;
};

struct SweepReport {
    std::string knob;
    std::vector<SweepRow> rows;
    // Pearson r of each metric against the generation proxy after the
    // sign normalization that makes "positive r" mean "better geometry,
    // better generation". nullopt when undefined (fewer than 2 usable rows
    // or zero variance), mirrored by the flags below.
    std::map<std::string, std::optional<double>> pearson_r;
    std::vector<std::string> flags;

    std::string to_json() const;
};

// Trains one toy tokenizer (plus a small generator) per knob value on a
// shared-seed dataset, evaluates the geometry metrics and FID proxies,
// and correlates metrics with the generation proxy.
SweepReport pilot_sweep(SweepKnob knob, const std::vector<double>& values,
                        const RunConfig& base);

// Sign normalization used before correlating: metrics where lower is
// better flip sign; GSQ passes through a log to reduce scale skew.
double goodness_transform(const std::string& metric, double value);

}  // namespace pae
