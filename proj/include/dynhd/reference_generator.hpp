#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dynhd/diffnet.hpp"
#include "dynhd/evidence.hpp"

namespace dynhd {

/// Sinusoidal code of the normalized step t/T: entries (sin(f_i x), cos(f_i x))
/// interleaved, with f_i = pi * 2^i for i = 0 .. dim/2 - 1.
nn::Vector timestep_embed(int t, int T, int dim);

/// Fallback query embedding for records that only carry text: signed feature
/// hashing of lowercase alphanumeric words into `dim` buckets, L2-normalized.
/// Text without words maps to the zero vector.
std::vector<double> hashed_query_embedding(std::string_view text, int dim);

struct GeneratorArch {
    int timestep_dim = 16;
    std::vector<int> hidden{64, 64};
};

/// Maps (query embedding, timestep embedding) to the evidence expected of a
/// factual response at that step.
class ReferenceGenerator {
public:
    ReferenceGenerator() = default;

    /// The output layer starts at zero, so an untrained generator predicts (0, 0, 0).
    static ReferenceGenerator create(int query_dim, const GeneratorArch& arch, std::uint64_t seed);

    EvidenceVector predict_reference(std::span<const double> query, int t, int T) const;
    EvidenceTrajectory predict_trajectory(std::span<const double> query, int T) const;

    /// Network input rows for every step of a trajectory, row j <-> t = T - j.
    nn::Matrix input_rows(std::span<const double> query, int T) const;

    int query_dim() const { return query_dim_; }
    int timestep_dim() const { return timestep_dim_; }
    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }

    int epochs_trained = 0;
    double final_loss = 0.0;

    nlohmann::json to_json() const;
    static ReferenceGenerator from_json(const nlohmann::json& j);

private:
    int query_dim_ = 0;
    int timestep_dim_ = 16;
    nn::Mlp net_;
};

struct Stage1Config {
    double lr = 1e-3;
    double weight_decay = 0.01;
    int epochs = 60;
    int batch_size = 64;
};

/// Mean over factual samples of (1/T) * sum_t SmoothL1(a_t, a_hat_t), with
/// SmoothL1 averaged over the three evidence components. Non-factual samples
/// are ignored. Optionally accumulates gradients.
double reference_loss(const ReferenceGenerator& gen, std::span<const EvidenceSample* const> samples,
                      std::vector<nn::LayerGrads>* grads = nullptr);

/// Trains on factual samples only. Returns the full-set loss before training
/// followed by the mean mini-batch loss of each epoch (epochs + 1 entries).
/// Throws TrainingError if a hallucinated sample is passed or none is factual.
std::vector<double> train_reference(ReferenceGenerator& gen, const std::vector<EvidenceSample>& samples,
                                    const Stage1Config& cfg, std::uint64_t seed);

}  // namespace dynhd
