#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynhd/token_filter.hpp"
#include "dynhd/trajectory.hpp"

namespace dynhd::sim {

enum class HallucinationMode { stagnation, rebound, mixed };

/// One task family. Factual semantic entropies follow
/// start * exp(-rate * p) with progress p = 1 - t/T. Hallucinated samples
/// leave that law once p reaches the onset: stagnation relaxes linearly to
/// `plateau_level` by t = 0, rebound adds a ramp rising to `plateau_level`.
struct RegimeSpec {
    double decay_rate = 3.0;
    double start_entropy = 3.0;
    /// Token-level Gaussian noise; also scales per-sample and per-token jitter.
    double noise_scale = 0.1;
    HallucinationMode hallucination_mode = HallucinationMode::mixed;
    double rebound_onset_fraction = 0.75;
    double plateau_level = 0.6;
    /// Expected share of each sequence made of non-semantic padding tokens.
    double padding_fraction = 0.7;
    std::vector<double> query_cluster_center;
    /// Share of a hallucinated answer's semantic tokens that carry the error.
    double error_token_fraction = 0.4;

    void validate(int d_q) const;
};

/// Entropy of a factual semantic token at step t.
double factual_entropy(const RegimeSpec& r, int t, int T);

/// Entropy of an error-carrying token of a hallucinated sample at step t.
double hallucinated_entropy(const RegimeSpec& r, HallucinationMode mode, int t, int T);

struct SimulationConfig {
    std::vector<RegimeSpec> regimes;
    int n_factual = 1000;
    int n_hallucinated = 1000;
    int T = 32;
    int l = 24;
    int d_q = 8;
    int vocab_size = 32000;
    /// Per-sample jitter of the padding share around the regime's value.
    double padding_jitter = 0.15;
    /// Standard deviation of query embeddings around their cluster centre.
    double query_spread = 0.1;
    std::uint64_t seed = 0;

    /// Two regimes with distinct decay laws, mixed hallucination morphology,
    /// 70% padding, 1000 + 1000 samples.
    static SimulationConfig defaults();

    nlohmann::json to_json() const;
    /// Missing fields keep the values of defaults().
    static SimulationConfig from_json(const nlohmann::json& j);
    static SimulationConfig load(const std::string& path);
};

/// Labeled synthetic dataset in shuffled order. Regimes are assigned round-robin.
Dataset simulate_dataset(const SimulationConfig& cfg);

/// Per-class mean and standard deviation of each evidence component over t.
void emit_plot_csv(const Dataset& dataset, const IgnoreSpec& spec, int k, std::ostream& out);
void emit_plot_csv(const Dataset& dataset, const IgnoreSpec& spec, int k, const std::string& path);

}  // namespace dynhd::sim
